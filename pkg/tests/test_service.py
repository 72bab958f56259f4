import io
import json
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from fastapi.testclient import TestClient

from cjengine.comparisons import read_comparisons, tally
from cjengine.service import ServiceError, StudyService, create_app

WARDS = ["a", "b", "c", "d"]
EDGES = [("a", "b"), ("b", "c"), ("c", "d"), ("a", "c")]


class FakeClock:
    def __init__(self):
        self.now = datetime(2022, 5, 1, 9, 0, tzinfo=timezone.utc)

    def __call__(self):
        return self.now

    def tick(self, seconds):
        self.now += timedelta(seconds=seconds)


@pytest.fixture
def service(tmp_path):
    return StudyService(tmp_path / "data", clock=FakeClock())


def make_study(service, mechanism="principal_component", **kwargs):
    return service.create_study(WARDS, EDGES, mechanism, **kwargs)


def decide(service, sid, jid, prefer=None):
    """Fetch the issued pair and submit a decision; winner by preference list."""
    pair = service.next_pair(sid, jid)
    left, right = pair["left"]["id"], pair["right"]["id"]
    if prefer:
        winner = left if prefer.index(left) < prefer.index(right) else right
    else:
        winner = left
    loser = right if winner == left else left
    return service.submit_judgement(sid, jid, {
        "kind": "decision", "winner": winner, "loser": loser, "elapsed_ms": 1500,
    })


class TestStudyLifecycle:
    def test_create_builds_schedule(self, service):
        sid = make_study(service)
        study = service.studies[sid]
        assert study.schedule.probabilities.size == 6
        assert study.status == "open"

    def test_duplicate_creation_yields_distinct_ids(self, service):
        assert make_study(service) != make_study(service)

    def test_closed_study_rejects_judges(self, service):
        sid = make_study(service)
        service.close_study(sid)
        with pytest.raises(ServiceError) as err:
            service.register_judge(sid)
        assert err.value.status == 409

    def test_invalid_mechanism_rejected(self, service):
        with pytest.raises(ValueError):
            make_study(service, mechanism="alphabetical")

    def test_unknown_study_404(self, service):
        with pytest.raises(ServiceError) as err:
            service.register_judge("nope")
        assert err.value.status == 404

    def test_close_logs_abandoned_pair(self, service):
        sid = make_study(service)
        jid = service.register_judge(sid)
        service.next_pair(sid, jid)
        service.close_study(sid)
        kinds = [ev["kind"] for ev in service.studies[sid].raw_events]
        assert kinds == ["abandoned"]


class TestJudges:
    def test_tokens_are_distinct_and_opaque(self, service):
        sid = make_study(service)
        j1 = service.register_judge(sid)
        j2 = service.register_judge(sid)
        assert j1 != j2
        for token in (j1, j2):
            assert sid not in token
            for ward in WARDS:
                assert ward not in token.lower() or len(ward) == 1

    def test_counter_starts_at_zero(self, service):
        sid = make_study(service)
        jid = service.register_judge(sid)
        pair = service.next_pair(sid, jid)
        assert pair["comparisons"] == 0


class TestNextPair:
    def test_idempotent_until_answered(self, service):
        sid = make_study(service)
        jid = service.register_judge(sid)
        first = service.next_pair(sid, jid)
        again = service.next_pair(sid, jid)
        assert first["left"]["id"] == again["left"]["id"]
        assert first["right"]["id"] == again["right"]["id"]
        decide(service, sid, jid)
        # a new pair may now be issued (pair_issued event count grows)
        service.next_pair(sid, jid)
        issued = [e for e in (service._log_path(sid).read_text().splitlines())
                  if '"pair_issued"' in e]
        assert len(issued) == 2

    def test_unknown_ward_masked_afterwards(self, service):
        sid = make_study(service)
        jid = service.register_judge(sid)
        pair = service.next_pair(sid, jid)
        excluded = pair["left"]["id"]
        service.submit_judgement(sid, jid, {"kind": "unknown", "ward": excluded})
        for _ in range(40):
            nxt = service.next_pair(sid, jid)
            assert excluded not in (nxt["left"]["id"], nxt["right"]["id"])
            service.submit_judgement(sid, jid, {
                "kind": "decision", "winner": nxt["left"]["id"],
                "loser": nxt["right"]["id"],
            })

    def test_exhausted_when_all_masked(self, tmp_path):
        service = StudyService(tmp_path / "d2")
        sid = service.create_study(["x", "y"], [("x", "y")], "uniform")
        jid = service.register_judge(sid)
        pair = service.next_pair(sid, jid)
        service.submit_judgement(sid, jid, {"kind": "unknown", "ward": pair["left"]["id"]})
        with pytest.raises(ServiceError) as err:
            service.next_pair(sid, jid)
        assert err.value.status == 410

    def test_comparison_cap(self, service):
        sid = make_study(service, max_comparisons=2)
        jid = service.register_judge(sid)
        decide(service, sid, jid)
        decide(service, sid, jid)
        with pytest.raises(ServiceError) as err:
            service.next_pair(sid, jid)
        assert err.value.status == 410

    def test_draw_frequencies_follow_schedule(self, tmp_path):
        service = StudyService(tmp_path / "d3")
        sid = service.create_study(["x", "y", "z"], [("x", "y")], "uniform")
        jid = service.register_judge(sid)
        seen = {}
        for _ in range(600):
            pair = service.next_pair(sid, jid)
            key = tuple(sorted([pair["left"]["id"], pair["right"]["id"]]))
            seen[key] = seen.get(key, 0) + 1
            service.submit_judgement(sid, jid, {
                "kind": "decision", "winner": pair["left"]["id"],
                "loser": pair["right"]["id"],
            })
        assert set(seen) == {("x", "y"), ("x", "z"), ("y", "z")}
        for count in seen.values():
            assert abs(count / 600 - 1 / 3) < 4 * np.sqrt((1 / 3) * (2 / 3) / 600)


class TestJudgements:
    def test_decision_increments_counter(self, service):
        sid = make_study(service)
        jid = service.register_judge(sid)
        ack1 = decide(service, sid, jid)
        ack2 = decide(service, sid, jid)
        assert (ack1["comparisons"], ack2["comparisons"]) == (1, 2)

    def test_skip_logged_but_not_tallied(self, service):
        sid = make_study(service)
        jid = service.register_judge(sid)
        service.next_pair(sid, jid)
        ack = service.submit_judgement(sid, jid, {"kind": "skip"})
        assert ack["comparisons"] == 0
        study = service.studies[sid]
        assert len(study.raw_events) == 1
        assert len(study.decisions) == 0
        assert service.export_csv(sid).strip().splitlines() == [
            "winner,loser,judge,timestamp"
        ]

    def test_mismatched_pair_rejected(self, service):
        sid = make_study(service)
        jid = service.register_judge(sid)
        pair = service.next_pair(sid, jid)
        off_pair = [w for w in WARDS
                    if w not in (pair["left"]["id"], pair["right"]["id"])]
        with pytest.raises(ServiceError) as err:
            service.submit_judgement(sid, jid, {
                "kind": "decision", "winner": off_pair[0], "loser": off_pair[1],
            })
        assert err.value.status == 409

    def test_submission_without_issue_rejected(self, service):
        sid = make_study(service)
        jid = service.register_judge(sid)
        with pytest.raises(ServiceError):
            service.submit_judgement(sid, jid, {"kind": "skip"})

    def test_unknown_must_reference_issued_pair(self, service):
        sid = make_study(service)
        jid = service.register_judge(sid)
        pair = service.next_pair(sid, jid)
        outside = [w for w in WARDS
                   if w not in (pair["left"]["id"], pair["right"]["id"])][0]
        with pytest.raises(ServiceError):
            service.submit_judgement(sid, jid, {"kind": "unknown", "ward": outside})

    def test_elapsed_falls_back_to_server_clock(self, tmp_path):
        clock = FakeClock()
        service = StudyService(tmp_path / "d4", clock=clock)
        sid = service.create_study(WARDS, EDGES, "uniform")
        jid = service.register_judge(sid)
        pair = service.next_pair(sid, jid)
        clock.tick(2.5)
        service.submit_judgement(sid, jid, {
            "kind": "decision", "winner": pair["left"]["id"],
            "loser": pair["right"]["id"],
        })
        assert service.studies[sid].raw_events[0]["elapsed_ms"] == pytest.approx(2500.0)

    def test_judge_stats_median_elapsed(self, service):
        sid = make_study(service)
        jid = service.register_judge(sid)
        for elapsed in (1000, 3000, 8000):
            pair = service.next_pair(sid, jid)
            service.submit_judgement(sid, jid, {
                "kind": "decision", "winner": pair["left"]["id"],
                "loser": pair["right"]["id"], "elapsed_ms": elapsed,
            })
        stats = service.judge_stats(sid)[jid]
        assert stats["decisions"] == 3
        assert stats["median_elapsed_ms"] == 3000


class TestExportAndPersistence:
    def test_export_round_trips_decisions(self, service):
        sid = make_study(service)
        jid = service.register_judge(sid)
        for _ in range(12):
            decide(service, sid, jid, prefer=WARDS)
        text = service.export_csv(sid)
        from cjengine.spatial import WardGraph

        graph = WardGraph.from_edges(WARDS, EDGES)
        records = read_comparisons(io.StringIO(text), graph)
        assert len(records) == 12
        t = tally(records, graph)
        assert t.total_comparisons == 12
        assert all(rec.judge == jid for rec in records)

    def test_restart_replays_identical_state(self, tmp_path):
        data_dir = tmp_path / "d5"
        service = StudyService(data_dir)
        sid = make_study(service)
        jid = service.register_judge(sid)
        decide(service, sid, jid)
        pair = service.next_pair(sid, jid)
        service.submit_judgement(sid, jid, {"kind": "unknown", "ward": pair["left"]["id"]})
        service.next_pair(sid, jid)  # leave one pair in flight
        before = service.snapshot()
        export_before = service.export_csv(sid)

        reborn = StudyService(data_dir)
        assert reborn.snapshot() == before
        assert reborn.export_csv(sid) == export_before
        # in-flight pair survives the restart
        issued = reborn.studies[sid].judges[jid].issued
        assert issued is not None

    def test_log_is_json_per_line(self, service):
        sid = make_study(service)
        jid = service.register_judge(sid)
        decide(service, sid, jid)
        for line in service._log_path(sid).read_text().splitlines():
            json.loads(line)


class TestFits:
    def seed_decisions(self, service, sid, n=40, judges=1):
        rng = np.random.default_rng(0)
        jids = [service.register_judge(sid) for _ in range(judges)]
        for k in range(n):
            jid = jids[k % judges]
            pair = service.next_pair(sid, jid)
            left, right = pair["left"]["id"], pair["right"]["id"]
            winner = left if WARDS.index(left) < WARDS.index(right) else right
            loser = right if winner == left else left
            service.submit_judgement(sid, jid, {
                "kind": "decision", "winner": winner, "loser": loser,
            })
        return jids

    def test_fit_produces_results_and_geojson(self, service):
        sid = make_study(service, geometries={"a": {"type": "Point", "coordinates": [0, 0]}})
        self.seed_decisions(service, sid)
        fid = service.request_fit(sid, {"model": "bsbt", "iterations": 120,
                                        "burn_in": 20, "seed": 1})
        assert service.wait_for_fit(sid, fid)["status"] == "done"
        text = service.fit_results_csv(sid, fid)
        assert text.splitlines()[0] == "ward,median,q05,q95,variance"
        assert len(text.strip().splitlines()) == 5
        geo = service.fit_results_geojson(sid, fid)
        assert geo["type"] == "FeatureCollection"
        props = geo["features"][0]["properties"]
        assert set(props) == {"ward", "median", "q05", "q95", "variance"}
        assert geo["features"][0]["geometry"] == {"type": "Point", "coordinates": [0, 0]}
        assert geo["features"][1]["geometry"] is None

    def test_fit_is_idempotent_per_config(self, service):
        sid = make_study(service)
        self.seed_decisions(service, sid)
        config = {"model": "bsbt", "iterations": 80, "burn_in": 10, "seed": 2}
        fid1 = service.request_fit(sid, config)
        service.wait_for_fit(sid, fid1)
        fid2 = service.request_fit(sid, dict(config))
        assert fid1 == fid2
        fid3 = service.request_fit(sid, {**config, "seed": 3})
        assert fid3 != fid1

    def test_fit_requires_decisions(self, service):
        sid = make_study(service)
        with pytest.raises(ServiceError) as err:
            service.request_fit(sid, {"model": "bsbt"})
        assert err.value.status == 409

    def test_judge_subset_fit_and_correlation(self, service):
        sid = make_study(service)
        jids = self.seed_decisions(service, sid, n=60, judges=2)
        full = service.request_fit(sid, {"model": "bsbt", "iterations": 150,
                                         "burn_in": 20, "seed": 4})
        subset = service.request_fit(sid, {"model": "bsbt", "iterations": 150,
                                           "burn_in": 20, "seed": 4,
                                           "exclude_judges": [jids[1]]})
        service.wait_for_fit(sid, full)
        service.wait_for_fit(sid, subset)
        corr = service.compare_fits(sid, full, subset)
        assert -1.0 <= corr["pearson"] <= 1.0
        assert -1.0 <= corr["spearman"] <= 1.0

    def test_cluster_fit_route(self, service):
        sid = make_study(service)
        self.seed_decisions(service, sid)
        fid = service.request_fit(sid, {"model": "cluster", "iterations": 150,
                                        "burn_in": 20, "seed": 5, "beta": 1e-4})
        assert service.wait_for_fit(sid, fid)["status"] == "done"
        text = service.fit_results_csv(sid, fid)
        assert len(text.strip().splitlines()) == 5

    def test_failed_fit_surfaces_error(self, service):
        sid = make_study(service)
        jid = self.seed_decisions(service, sid, n=5)[0]
        fid = service.request_fit(sid, {"model": "bsbt", "iterations": 50,
                                        "burn_in": 5, "include_judges": ["nobody"]})
        entry = service.wait_for_fit(sid, fid)
        assert entry["status"] == "failed"
        with pytest.raises(ServiceError):
            service.fit_results_csv(sid, fid)


class TestHttpLayer:
    @pytest.fixture
    def client(self, tmp_path):
        service = StudyService(tmp_path / "http-data")
        return TestClient(create_app(service)), service

    def test_health(self, client):
        http, _ = client
        assert http.get("/health").json() == {"status": "ok"}

    def test_full_http_flow(self, client):
        http, _ = client
        created = http.post("/studies", json={
            "ward_ids": WARDS, "edges": [list(e) for e in EDGES],
            "mechanism": "principal_component",
        })
        assert created.status_code == 200
        sid = created.json()["study_id"]

        jid = http.post(f"/studies/{sid}/judges").json()["judge_id"]
        pair = http.get(f"/studies/{sid}/judges/{jid}/next").json()
        ack = http.post(f"/studies/{sid}/judges/{jid}/judgements", json={
            "kind": "decision", "winner": pair["left"]["id"],
            "loser": pair["right"]["id"], "elapsed_ms": 900,
        })
        assert ack.json()["comparisons"] == 1

        export = http.get(f"/studies/{sid}/export.csv")
        assert export.headers["content-type"].startswith("text/csv")
        assert len(export.text.strip().splitlines()) == 2

        for _ in range(30):
            pair = http.get(f"/studies/{sid}/judges/{jid}/next").json()
            http.post(f"/studies/{sid}/judges/{jid}/judgements", json={
                "kind": "decision", "winner": pair["left"]["id"],
                "loser": pair["right"]["id"],
            })
        fit_resp = http.post(f"/studies/{sid}/fits", json={
            "model": "bsbt", "iterations": 100, "burn_in": 10, "seed": 6,
        }).json()
        fid = fit_resp["fit_id"]
        import time

        for _ in range(300):
            results = http.get(f"/studies/{sid}/fits/{fid}/results.csv")
            if results.status_code == 200:
                break
            time.sleep(0.05)
        assert results.status_code == 200
        geo = http.get(f"/studies/{sid}/fits/{fid}/results.geojson")
        assert geo.json()["type"] == "FeatureCollection"

    def test_error_shapes(self, client):
        http, _ = client
        missing = http.get("/studies/zzz/judges/j/next")
        assert missing.status_code == 404
        assert "error" in missing.json()
        bad = http.post("/studies", json={"ward_ids": ["only-one"]})
        assert bad.status_code == 400

    def test_close_endpoint(self, client):
        http, _ = client
        sid = http.post("/studies", json={
            "ward_ids": WARDS, "edges": [list(e) for e in EDGES],
        }).json()["study_id"]
        assert http.post(f"/studies/{sid}/close").json() == {"status": "closed"}
        assert http.post(f"/studies/{sid}/judges").status_code == 409
