"""Bradley-Terry data structures, likelihood and the sparse design matrix."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.special import gammaln

from .pairs import PairIndex
from .spatial import WardGraph

CSV_HEADER = ["winner", "loser", "judge", "timestamp"]


@dataclass(frozen=True)
class ComparisonRecord:
    """One judgement: `winner` was judged to have the higher rate."""

    winner: str
    loser: str
    judge: str
    timestamp: datetime

    def __post_init__(self):
        if self.winner == self.loser:
            raise ValueError("winner and loser must differ")
        ts = self.timestamp
        if ts.tzinfo is None:
            object.__setattr__(self, "timestamp", ts.replace(tzinfo=timezone.utc))
        else:
            object.__setattr__(self, "timestamp", ts.astimezone(timezone.utc))


@dataclass(frozen=True)
class Tallies:
    """Aggregated comparison counts n_ij and win counts y_ij.

    n is symmetric with zero diagonal; y_ij counts wins of i over j, so
    y_ij + y_ji = n_ij.
    """

    ward_ids: tuple[str, ...]
    n: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = np.asarray(self.n)
        y = np.asarray(self.y)
        if not np.array_equal(n, n.T):
            raise ValueError("n must be symmetric")
        if np.any(np.diag(n) != 0) or np.any(np.diag(y) != 0):
            raise ValueError("diagonal must be zero")
        if np.any(n < 0) or np.any(y < 0):
            raise ValueError("counts must be nonnegative")
        if not np.array_equal(y + y.T, n):
            raise ValueError("y_ij + y_ji must equal n_ij")

    @property
    def n_wards(self) -> int:
        return len(self.ward_ids)

    @property
    def total_comparisons(self) -> int:
        return int(np.triu(self.n).sum())


@dataclass(frozen=True)
class DesignMatrix:
    """Sparse BT design matrix restricted to pairs with n_ij > 0.

    Rows follow the canonical pair order; row (i, j) has +1 at i and -1
    at j. `counts` and `wins` are the per-row n_ij and y_ij (wins of the
    lower-indexed ward i).
    """

    matrix: sparse.csr_matrix = field(repr=False)
    pairs: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    wins: np.ndarray = field(repr=False)

    @property
    def n_rows(self) -> int:
        return self.pairs.shape[0]


def win_probability(lambda_i: float, lambda_j: float) -> float:
    """P(i judged higher than j) = logistic(lambda_i - lambda_j), in (0, 1)."""
    d = lambda_i - lambda_j
    if d >= 0:
        p = 1.0 / (1.0 + np.exp(-d))
    else:
        e = np.exp(d)
        p = e / (1.0 + e)
    # keep the open interval even when exp() under/overflows
    return float(np.clip(p, np.finfo(float).tiny, np.nextafter(1.0, 0.0)))


def tally(records, graph: WardGraph) -> Tallies:
    """Aggregate judgement records into (n, y) count matrices."""
    n_wards = graph.n
    n = np.zeros((n_wards, n_wards), dtype=np.int64)
    y = np.zeros((n_wards, n_wards), dtype=np.int64)
    for rec in records:
        i = graph.index(rec.winner)
        j = graph.index(rec.loser)
        n[i, j] += 1
        n[j, i] += 1
        y[i, j] += 1
    return Tallies(graph.ward_ids, n, y)


def log_likelihood(tallies: Tallies, lam: np.ndarray) -> float:
    """Log of the BT likelihood, binomial coefficients included."""
    lam = np.asarray(lam, dtype=float)
    i_idx, j_idx = np.triu_indices(tallies.n_wards, k=1)
    n = tallies.n[i_idx, j_idx]
    active = n > 0
    if not active.any():
        return 0.0
    n = n[active]
    y = tallies.y[i_idx, j_idx][active]
    d = lam[i_idx[active]] - lam[j_idx[active]]
    # log sigma(d) = -log(1 + e^{-d}), computed stably in both tails
    log_p = -np.logaddexp(0.0, -d)
    log_q = -np.logaddexp(0.0, d)
    log_binom = gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
    return float(np.sum(log_binom + y * log_p + (n - y) * log_q))


def design_matrix(tallies: Tallies) -> DesignMatrix:
    """One row per active pair, in canonical pair order."""
    n_wards = tallies.n_wards
    index = PairIndex(n_wards)
    pairs = index.all_pairs()
    n_flat = tallies.n[pairs[:, 0], pairs[:, 1]]
    active = n_flat > 0
    pairs = pairs[active]
    m = pairs.shape[0]
    rows = np.repeat(np.arange(m), 2)
    cols = pairs.reshape(-1)
    data = np.tile([1.0, -1.0], m)
    matrix = sparse.csr_matrix((data, (rows, cols)), shape=(m, n_wards))
    return DesignMatrix(
        matrix=matrix,
        pairs=pairs,
        counts=n_flat[active].astype(np.int64),
        wins=tallies.y[pairs[:, 0], pairs[:, 1]].astype(np.int64),
    )


def read_comparisons(path_or_buffer, graph: WardGraph | None = None,
                     drop_unknown: bool = False) -> list[ComparisonRecord]:
    """Read a comparisons CSV (winner,loser,judge,timestamp; ISO-8601 UTC).

    When a graph is given, rows naming wards outside it either raise or,
    with drop_unknown, are filtered out; collected study files can carry
    more rows than end up in the analysis.
    """
    if isinstance(path_or_buffer, (str, Path)):
        buffer = io.StringIO(Path(path_or_buffer).read_text())
    else:
        buffer = path_or_buffer
    reader = csv.DictReader(buffer)
    missing = set(CSV_HEADER) - set(reader.fieldnames or [])
    if missing:
        raise ValueError(f"comparisons CSV missing columns: {sorted(missing)}")
    records = []
    for row in reader:
        winner, loser = row["winner"], row["loser"]
        if graph is not None:
            known = winner in graph.ward_ids and loser in graph.ward_ids
            if not known:
                if drop_unknown:
                    continue
                raise KeyError(f"unknown ward in row {row!r}")
        records.append(ComparisonRecord(
            winner=winner,
            loser=loser,
            judge=row["judge"],
            timestamp=datetime.fromisoformat(row["timestamp"]),
        ))
    return records


def write_comparisons(records, path_or_buffer) -> None:
    """Write records as the canonical comparisons CSV."""
    close = False
    if isinstance(path_or_buffer, (str, Path)):
        buffer = open(path_or_buffer, "w", newline="")
        close = True
    else:
        buffer = path_or_buffer
    try:
        writer = csv.writer(buffer)
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow([
                rec.winner,
                rec.loser,
                rec.judge,
                rec.timestamp.astimezone(timezone.utc).isoformat(),
            ])
    finally:
        if close:
            buffer.close()
