import numpy as np
import pytest

from cjengine.pairs import PairIndex
from cjengine.scheduling import (
    ScheduleDistribution,
    build_schedule,
    difference_covariance,
    draw_schedule,
    mask_wards,
    naive_spatial_schedule,
    pc_schedule,
    uniform_schedule,
    utility,
    write_schedule_csv,
)
from cjengine.spatial import WardGraph, prior_covariance, sample_prior

from conftest import random_er_graph


def random_psd(rng, n, scale=1.0):
    a = rng.normal(0, 1, (n, n))
    return scale * (a @ a.T / n + 0.1 * np.eye(n))


class TestDifferenceCovariance:
    def test_identity_covariance_n3(self):
        dc = difference_covariance(np.eye(3))
        assert np.allclose(np.diag(dc.delta), 2.0)
        # Cov(l1 - l2, l1 - l3) = 1 under independence
        assert dc.delta[0, 1] == pytest.approx(1.0)
        # Cov(l1 - l2, l2 - l3) = -1
        assert dc.delta[0, 2] == pytest.approx(-1.0)
        assert np.allclose(dc.nu, 0.0)

    def test_pair_against_itself_is_difference_variance(self):
        rng = np.random.default_rng(0)
        sigma = random_psd(rng, 5)
        dc = difference_covariance(sigma)
        index = PairIndex(5)
        for linear, (i, j) in enumerate(index.all_pairs()):
            want = sigma[i, i] + sigma[j, j] - 2 * sigma[i, j]
            assert dc.delta[linear, linear] == pytest.approx(want, rel=1e-12)

    def test_mean_vector_of_differences(self):
        dc = difference_covariance(np.eye(3), mu=np.array([3.0, 1.0, -2.0]))
        assert np.allclose(dc.nu, [2.0, 5.0, 3.0])

    def test_matches_monte_carlo_prior_draws(self, path4_graph):
        cov = prior_covariance(path4_graph, 2.0)
        dc = difference_covariance(cov.sigma)
        rng = np.random.default_rng(1)
        draws = np.array([sample_prior(cov, rng) for _ in range(100_000)])
        i, j = np.triu_indices(4, k=1)
        diffs = draws[:, i] - draws[:, j]
        emp = np.cov(diffs.T)
        # entrywise 4-SE band; covariance SEs approximated by 2 var / sqrt(n)
        scale = np.sqrt(np.outer(np.diag(dc.delta), np.diag(dc.delta)))
        assert np.max(np.abs(emp - dc.delta) / scale) < 4 * 2 / np.sqrt(draws.shape[0])

    def test_psd(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            delta = difference_covariance(random_psd(rng, int(rng.integers(2, 9)))).delta
            eigs = np.linalg.eigvalsh(delta)
            assert eigs.min() > -1e-10 * max(1.0, eigs.max())


class TestPcSchedule:
    def test_isotropic_prior_gives_uniform(self):
        for n in (3, 6):
            dist = pc_schedule(4.0 * np.eye(n))
            assert np.allclose(dist.probabilities, 2.0 / (n * (n - 1)))

    def test_spectral_equals_closed_form(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            sigma = random_psd(rng, int(rng.integers(2, 12)), scale=float(rng.uniform(0.5, 5)))
            spectral = pc_schedule(sigma, method="spectral")
            closed = pc_schedule(sigma, method="closed_form")
            assert np.max(np.abs(spectral.probabilities - closed.probabilities)) < 1e-10

    def test_weakly_connected_pair_gets_highest_mass(self, path3_graph):
        cov = prior_covariance(path3_graph, 1.0)
        dist = pc_schedule(cov)
        index = PairIndex(3)
        p_far = dist.probabilities[index.index_of(0, 2)]
        p_near = dist.probabilities[index.index_of(0, 1)]
        assert p_far > p_near
        assert dist.probabilities[index.index_of(0, 1)] == pytest.approx(
            dist.probabilities[index.index_of(1, 2)], rel=1e-12
        )

    def test_spectral_cap(self):
        with pytest.raises(ValueError):
            pc_schedule(np.eye(20), method="spectral", spectral_n_cap=10)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            pc_schedule(np.eye(3), method="qr")


class TestUniformSchedule:
    def test_small_cases(self):
        assert np.allclose(uniform_schedule(3).probabilities, [1 / 3] * 3)
        assert np.allclose(uniform_schedule(2).probabilities, [1.0])

    def test_sums_to_one(self):
        assert uniform_schedule(40).probabilities.sum() == pytest.approx(1.0, abs=1e-12)

    def test_rejects_single_ward(self):
        with pytest.raises(ValueError):
            uniform_schedule(1)


class TestNaiveSpatialSchedule:
    def test_two_wards_degenerates_to_point_mass(self, k2_graph):
        dist = naive_spatial_schedule(k2_graph)
        assert np.allclose(dist.probabilities, [1.0])

    def test_edgeless_graph_gives_uniform(self):
        graph = WardGraph(("a", "b", "c"), np.zeros((3, 3)))
        dist = naive_spatial_schedule(graph)
        assert np.allclose(dist.probabilities, [1 / 3] * 3)

    def test_better_connected_pairs_get_strictly_lower_mass(self):
        # triangle 0-1-2 plus pendant 3: pair (0,1) communicates more than (0,3)
        adj = np.zeros((4, 4))
        for i, j in [(0, 1), (1, 2), (0, 2), (2, 3)]:
            adj[i, j] = adj[j, i] = 1.0
        graph = WardGraph(("a", "b", "c", "d"), adj)
        from cjengine.spatial import communicability

        comm = communicability(graph)
        dist = naive_spatial_schedule(graph)
        index = PairIndex(4)
        pairs = index.all_pairs()
        for a in range(len(pairs)):
            for b in range(len(pairs)):
                ca = comm[pairs[a][0], pairs[a][1]]
                cb = comm[pairs[b][0], pairs[b][1]]
                if ca > cb + 1e-9:
                    assert dist.probabilities[a] < dist.probabilities[b]


class TestDrawSchedule:
    def test_point_mass(self):
        dist = ScheduleDistribution(2, np.array([1.0]), "uniform")
        pairs = draw_schedule(dist, 5, np.random.default_rng(0))
        assert pairs.tolist() == [[0, 1]] * 5

    def test_frequencies_match_distribution(self):
        probs = np.array([0.5, 0.3, 0.2])
        dist = ScheduleDistribution(3, probs, "uniform")
        pairs = draw_schedule(dist, 100_000, np.random.default_rng(1))
        index = PairIndex(3)
        counts = np.zeros(3)
        for i, j in pairs:
            counts[index.index_of(i, j)] += 1
        freq = counts / pairs.shape[0]
        se = np.sqrt(probs * (1 - probs) / pairs.shape[0])
        assert np.all(np.abs(freq - probs) < 4 * se)

    def test_deterministic_under_seed(self):
        dist = uniform_schedule(6)
        a = draw_schedule(dist, 50, np.random.default_rng(7))
        b = draw_schedule(dist, 50, np.random.default_rng(7))
        assert np.array_equal(a, b)

    def test_rejects_empty_schedule(self):
        with pytest.raises(ValueError):
            draw_schedule(uniform_schedule(3), 0, np.random.default_rng(0))


class TestMasking:
    def test_masking_removes_and_renormalises(self):
        dist = uniform_schedule(4)
        masked = mask_wards(dist, [0])
        index = PairIndex(4)
        for linear, (i, j) in enumerate(index.all_pairs()):
            if 0 in (i, j):
                assert masked.probabilities[linear] == 0.0
        assert masked.probabilities.sum() == pytest.approx(1.0, abs=1e-12)

    def test_no_exclusions_is_identity(self):
        dist = uniform_schedule(4)
        assert mask_wards(dist, []) is dist

    def test_all_masked_raises(self):
        dist = uniform_schedule(2)
        with pytest.raises(ValueError):
            mask_wards(dist, [0])


class TestUtility:
    def test_unit_variance_gives_one_over_n(self):
        rng = np.random.default_rng(4)
        samples = rng.standard_normal((200_000, 5))
        assert utility(samples) == pytest.approx(1 / 5, rel=0.02)

    def test_duplicated_samples_rejected(self):
        samples = np.tile([1.0, 2.0, 3.0], (50, 1))
        with pytest.raises(ValueError):
            utility(samples)

    def test_single_sample_rejected(self):
        with pytest.raises(ValueError):
            utility(np.ones((1, 3)))

    def test_matches_direct_covariance_on_fixture(self):
        rng = np.random.default_rng(5)
        samples = rng.normal(0, 2, (100, 5)) @ np.diag([1.0, 0.5, 2.0, 1.5, 0.3])
        want = 1.0 / np.trace(np.cov(samples, rowvar=False))
        assert utility(samples) == pytest.approx(want, rel=1e-12)


class TestInvariants:
    def test_distribution_validation(self):
        with pytest.raises(ValueError):
            ScheduleDistribution(3, np.array([0.5, 0.5]), "uniform")
        with pytest.raises(ValueError):
            ScheduleDistribution(3, np.array([0.7, 0.4, -0.1]), "uniform")
        with pytest.raises(ValueError):
            ScheduleDistribution(3, np.array([0.5, 0.3, 0.1]), "uniform")
        with pytest.raises(ValueError):
            ScheduleDistribution(3, np.array([1 / 3] * 3), "bogus")

    def test_relabeling_permutes_probabilities(self):
        rng = np.random.default_rng(6)
        graph = random_er_graph(rng, 7)
        perm = rng.permutation(7)
        ids_p = tuple(graph.ward_ids[k] for k in perm)
        graph_p = WardGraph(ids_p, graph.adjacency[np.ix_(perm, perm)])
        for mech in ("uniform", "naive_spatial", "principal_component"):
            base = build_schedule(mech, graph)
            other = build_schedule(mech, graph_p)
            index = PairIndex(7)
            inverse = np.argsort(perm)
            for linear, (i, j) in enumerate(index.all_pairs()):
                moved = index.index_of(int(inverse[i]), int(inverse[j]))
                assert base.probabilities[linear] == pytest.approx(
                    other.probabilities[moved], rel=1e-9, abs=1e-12
                )


def test_schedule_csv(tmp_path, path3_graph):
    dist = build_schedule("principal_component", path3_graph)
    out = tmp_path / "schedule.csv"
    write_schedule_csv(dist, path3_graph.ward_ids, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "ward_a,ward_b,probability"
    assert len(lines) == 4
    total = sum(float(row.split(",")[2]) for row in lines[1:])
    assert total == pytest.approx(1.0, abs=1e-12)
