"""Ward graphs, communicability and the spatial prior covariance.

Wards are modelled as nodes of an undirected graph with edges between
adjacent wards. The prior covariance for the relative log-rates is the
communicability matrix of that graph, normalised to unit diagonal and
scaled by a signal variance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PSD_TOL = 1e-10
CHOLESKY_JITTER = 1e-10
POLYGON_TOL = 1e-9


@dataclass(frozen=True)
class WardGraph:
    """Undirected adjacency structure over uniquely named wards."""

    ward_ids: tuple[str, ...]
    adjacency: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=float)
        n = len(self.ward_ids)
        if n < 2:
            raise ValueError("a ward graph needs at least 2 wards")
        if len(set(self.ward_ids)) != n:
            raise ValueError("ward ids must be unique")
        if a.shape != (n, n):
            raise ValueError(f"adjacency shape {a.shape} does not match {n} wards")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise ValueError("self-loops are not allowed")
        if not np.isin(a, (0.0, 1.0)).all():
            raise ValueError("adjacency entries must be 0 or 1")
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "ward_ids", tuple(self.ward_ids))

    @property
    def n(self) -> int:
        return len(self.ward_ids)

    def index(self, ward_id: str) -> int:
        try:
            return self.ward_ids.index(ward_id)
        except ValueError:
            raise KeyError(f"unknown ward id {ward_id!r}") from None

    @classmethod
    def from_edges(cls, ward_ids, edges) -> "WardGraph":
        """Build from an iterable of (ward_a, ward_b) id pairs."""
        ward_ids = tuple(ward_ids)
        lookup = {w: k for k, w in enumerate(ward_ids)}
        a = np.zeros((len(ward_ids), len(ward_ids)))
        for u, v in edges:
            if u not in lookup or v not in lookup:
                raise KeyError(f"edge ({u!r}, {v!r}) references an unknown ward")
            if u == v:
                raise ValueError(f"self-loop on {u!r}")
            a[lookup[u], lookup[v]] = 1.0
            a[lookup[v], lookup[u]] = 1.0
        return cls(ward_ids, a)


@dataclass(frozen=True)
class SpatialCovariance:
    """Prior covariance sigma = alpha_sq * correlation, unit-diagonal correlation."""

    sigma: np.ndarray = field(repr=False)
    alpha_sq: float
    correlation: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.alpha_sq <= 0:
            raise ValueError("alpha_sq must be positive")
        c = np.asarray(self.correlation, dtype=float)
        if np.abs(np.diag(c) - 1.0).max() > PSD_TOL:
            raise ValueError("correlation diagonal must be 1")
        if np.abs(c - c.T).max() > PSD_TOL:
            raise ValueError("correlation must be symmetric")

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    def with_alpha_sq(self, alpha_sq: float) -> "SpatialCovariance":
        return SpatialCovariance(alpha_sq * self.correlation, alpha_sq, self.correlation)


def communicability(graph: WardGraph) -> np.ndarray:
    """Matrix exponential of the adjacency matrix.

    Computed by symmetric eigendecomposition, which preserves symmetry
    exactly and is cheap at ward-map sizes.
    """
    w, v = np.linalg.eigh(graph.adjacency)
    expm = (v * np.exp(w)) @ v.T
    return (expm + expm.T) / 2.0


def communicability_affinity(graph: WardGraph, i: int, j: int) -> float:
    """(e^A)_{ij} for a single pair of ward indices, i != j."""
    if i == j:
        raise ValueError("affinity is defined for distinct wards")
    n = graph.n
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"ward index out of range for n={n}")
    return float(communicability(graph)[i, j])


def prior_covariance(graph: WardGraph, alpha_sq: float) -> SpatialCovariance:
    """Communicability covariance alpha_sq * D^{-1/2} expm(A) D^{-1/2}."""
    if alpha_sq <= 0:
        raise ValueError("alpha_sq must be positive")
    expm = communicability(graph)
    d = np.sqrt(np.diag(expm))
    corr = expm / np.outer(d, d)
    corr = (corr + corr.T) / 2.0
    # eigensolver noise can leave -1e-16 where the exact entry is 0
    corr = np.maximum(corr, 0.0)
    np.fill_diagonal(corr, 1.0)
    return SpatialCovariance(alpha_sq * corr, float(alpha_sq), corr)


def cholesky_with_jitter(matrix: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, retrying once with a small diagonal jitter."""
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        jittered = matrix + CHOLESKY_JITTER * np.eye(matrix.shape[0])
        return np.linalg.cholesky(jittered)


def sample_prior(cov: SpatialCovariance, rng: np.random.Generator) -> np.ndarray:
    """One draw from MVN(0, cov.sigma)."""
    chol = cholesky_with_jitter(cov.sigma)
    return chol @ rng.standard_normal(cov.n)


def adjacency_from_polygons(polygons: dict, tol: float = POLYGON_TOL) -> WardGraph:
    """Ward graph from shapely polygons keyed by ward id.

    Wards are adjacent when their polygons touch or overlap within `tol`
    (real shapefiles have sliver gaps, so exact touching is too strict).
    """
    from shapely.geometry import shape
    from shapely.validation import explain_validity

    ids = list(polygons)
    if len(ids) != len(set(ids)):
        raise ValueError("duplicate ward id")
    geoms = []
    for wid in ids:
        geom = polygons[wid]
        if isinstance(geom, dict):
            geom = shape(geom)
        if geom.is_empty or not geom.is_valid:
            raise ValueError(f"malformed geometry for {wid!r}: {explain_validity(geom)}")
        geoms.append(geom)
    n = len(ids)
    a = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if geoms[i].distance(geoms[j]) <= tol:
                a[i, j] = a[j, i] = 1.0
    return WardGraph(tuple(ids), a)


def load_geojson_polygons(path, id_property: str = "ward") -> dict:
    """Read a GeoJSON FeatureCollection into {ward_id: geometry mapping}."""
    doc = json.loads(Path(path).read_text())
    if doc.get("type") != "FeatureCollection":
        raise ValueError("expected a GeoJSON FeatureCollection")
    out = {}
    for feature in doc.get("features", []):
        props = feature.get("properties") or {}
        if id_property not in props:
            raise ValueError(f"feature missing id property {id_property!r}")
        wid = str(props[id_property])
        if wid in out:
            raise ValueError(f"duplicate ward id {wid!r}")
        out[wid] = feature["geometry"]
    return out


def read_ward_manifest(path) -> tuple[str, ...]:
    """One ward id per line; order defines the ward indexing."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    return tuple(ln for ln in lines if ln)


def read_edge_list(manifest_path, edges_path) -> WardGraph:
    """Canonical graph input: ward-id manifest plus tab-separated edge list."""
    ward_ids = read_ward_manifest(manifest_path)
    edges = []
    for lineno, raw in enumerate(Path(edges_path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{edges_path}:{lineno}: expected 'ward_a<TAB>ward_b'")
        edges.append((parts[0], parts[1]))
    return WardGraph.from_edges(ward_ids, edges)


def write_edge_list(graph: WardGraph, manifest_path, edges_path) -> None:
    Path(manifest_path).write_text("\n".join(graph.ward_ids) + "\n")
    rows, cols = np.nonzero(np.triu(graph.adjacency))
    lines = [f"{graph.ward_ids[i]}\t{graph.ward_ids[j]}" for i, j in zip(rows, cols)]
    Path(edges_path).write_text("\n".join(lines) + ("\n" if lines else ""))
