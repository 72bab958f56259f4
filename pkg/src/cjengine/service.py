"""Live comparative-judgement study service.

State is an append-only event log (one JSON document per line, fsync on
append); the in-memory view is a pure projection of the log, so replaying
it after a restart reconstructs the service exactly. Judges are opaque
random tokens and no personal data is ever persisted.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import secrets
import statistics
import threading
import uuid
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse
from scipy.stats import pearsonr, spearmanr

from .clustering import ClusterConfig, NIGBase, fit_clustered
from .comparisons import ComparisonRecord, tally, write_comparisons
from .inference import FitConfig, fit, write_results_csv
from .scheduling import build_schedule, draw_schedule, mask_wards
from .spatial import WardGraph, prior_covariance


class ServiceError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


class _Judge:
    def __init__(self, judge_id: str):
        self.judge_id = judge_id
        self.unknown: set[str] = set()
        self.decisions = 0
        self.issued: tuple[str, str] | None = None
        self.issued_at: str | None = None


class _Study:
    def __init__(self, study_id: str, graph: WardGraph, mechanism: str,
                 created_at: str, alpha_sq: float, max_comparisons: int | None,
                 geometries: dict | None, names: dict | None):
        self.study_id = study_id
        self.graph = graph
        self.mechanism = mechanism
        self.created_at = created_at
        self.alpha_sq = alpha_sq
        self.max_comparisons = max_comparisons
        self.geometries = geometries or {}
        self.names = names or {}
        self.status = "open"
        self.schedule = build_schedule(mechanism, graph, alpha_sq=alpha_sq)
        self.judges: dict[str, _Judge] = {}
        self.decisions: list[dict] = []
        self.raw_events: list[dict] = []
        self.fits: dict[str, dict] = {}


class StudyService:
    """Event-sourced core; the HTTP app is a thin layer over this."""

    def __init__(self, data_dir, clock=None):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        (self.data_dir / "fits").mkdir(exist_ok=True)
        self._clock = clock or (lambda: datetime.now(timezone.utc))
        self._lock = threading.RLock()
        self._rng = np.random.default_rng()
        self.studies: dict[str, _Study] = {}
        self._replay()

    # ---- persistence ----------------------------------------------------

    def _log_path(self, study_id: str) -> Path:
        return self.data_dir / f"{study_id}.events.jsonl"

    def _replay(self) -> None:
        for path in sorted(self.data_dir.glob("*.events.jsonl")):
            for line in path.read_text().splitlines():
                if line.strip():
                    self._apply(json.loads(line))
        for study in self.studies.values():
            for fid, entry in study.fits.items():
                if self._fit_paths(study.study_id, fid)[0].exists():
                    entry["status"] = "done"

    def _append(self, event: dict) -> None:
        path = self._log_path(event["study_id"])
        with open(path, "a") as fh:
            fh.write(json.dumps(event, separators=(",", ":")) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._apply(event)

    def _apply(self, event: dict) -> None:
        kind = event["event"]
        if kind == "study_created":
            graph = WardGraph.from_edges(event["ward_ids"],
                                         [tuple(e) for e in event["edges"]])
            study = _Study(
                study_id=event["study_id"],
                graph=graph,
                mechanism=event["mechanism"],
                created_at=event["ts"],
                alpha_sq=event.get("alpha_sq", 1.0),
                max_comparisons=event.get("max_comparisons"),
                geometries=event.get("geometries"),
                names=event.get("names"),
            )
            self.studies[event["study_id"]] = study
            return
        study = self.studies[event["study_id"]]
        if kind == "judge_registered":
            study.judges[event["judge_id"]] = _Judge(event["judge_id"])
        elif kind == "pair_issued":
            judge = study.judges[event["judge_id"]]
            judge.issued = (event["pair"][0], event["pair"][1])
            judge.issued_at = event["ts"]
        elif kind == "judgement":
            judge = study.judges[event["judge_id"]]
            study.raw_events.append(event)
            if event["kind"] == "decision":
                judge.decisions += 1
                study.decisions.append(event)
            elif event["kind"] == "unknown":
                judge.unknown.add(event["ward"])
            judge.issued = None
            judge.issued_at = None
        elif kind == "study_closed":
            study.status = "closed"
        elif kind == "fit_requested":
            study.fits[event["fit_id"]] = {
                "status": "not_started",
                "config": event["config"],
                "error": None,
            }
        else:
            raise ValueError(f"unknown event kind {kind!r}")

    def _now(self) -> str:
        return self._clock().isoformat()

    # ---- study lifecycle -------------------------------------------------

    def create_study(self, ward_ids, edges, mechanism: str,
                     alpha_sq: float = 1.0, max_comparisons: int | None = None,
                     geometries: dict | None = None,
                     names: dict | None = None) -> str:
        graph = WardGraph.from_edges(ward_ids, edges)  # validates early
        build_schedule(mechanism, graph, alpha_sq=alpha_sq)
        study_id = uuid.uuid4().hex
        with self._lock:
            self._append({
                "event": "study_created",
                "study_id": study_id,
                "ts": self._now(),
                "ward_ids": list(graph.ward_ids),
                "edges": [[graph.ward_ids[i], graph.ward_ids[j]]
                          for i, j in zip(*np.nonzero(np.triu(graph.adjacency)))],
                "mechanism": mechanism,
                "alpha_sq": alpha_sq,
                "max_comparisons": max_comparisons,
                "geometries": geometries,
                "names": names,
            })
        return study_id

    def close_study(self, study_id: str) -> None:
        with self._lock:
            study = self._study(study_id)
            if study.status == "open":
                for judge in study.judges.values():
                    if judge.issued is not None:
                        self._append({
                            "event": "judgement", "study_id": study_id,
                            "judge_id": judge.judge_id, "kind": "abandoned",
                            "pair": list(judge.issued), "elapsed_ms": None,
                            "ts": self._now(),
                        })
                self._append({"event": "study_closed", "study_id": study_id,
                              "ts": self._now()})

    def _study(self, study_id: str) -> _Study:
        study = self.studies.get(study_id)
        if study is None:
            raise ServiceError(404, f"unknown study {study_id}")
        return study

    # ---- judges ----------------------------------------------------------

    def register_judge(self, study_id: str) -> str:
        with self._lock:
            study = self._study(study_id)
            if study.status != "open":
                raise ServiceError(409, "study is closed")
            judge_id = secrets.token_urlsafe(16)
            self._append({"event": "judge_registered", "study_id": study_id,
                          "judge_id": judge_id, "ts": self._now()})
            return judge_id

    def _judge(self, study: _Study, judge_id: str) -> _Judge:
        judge = study.judges.get(judge_id)
        if judge is None:
            raise ServiceError(404, "unknown judge")
        return judge

    def next_pair(self, study_id: str, judge_id: str) -> dict:
        with self._lock:
            study = self._study(study_id)
            judge = self._judge(study, judge_id)
            if study.status != "open":
                raise ServiceError(409, "study is closed")
            if (study.max_comparisons is not None
                    and judge.decisions >= study.max_comparisons):
                raise ServiceError(410, "comparison cap reached")
            if judge.issued is None:
                excluded = [study.graph.index(w) for w in judge.unknown]
                try:
                    masked = mask_wards(study.schedule, excluded)
                except ValueError:
                    raise ServiceError(410, "no pairs left for this judge") from None
                i, j = draw_schedule(masked, 1, self._rng)[0]
                pair = (study.graph.ward_ids[i], study.graph.ward_ids[j])
                self._append({"event": "pair_issued", "study_id": study_id,
                              "judge_id": judge_id, "pair": list(pair),
                              "ts": self._now()})
            return self._pair_payload(study, judge)

    def _pair_payload(self, study: _Study, judge: _Judge) -> dict:
        def descriptor(ward: str) -> dict:
            return {
                "id": ward,
                "name": study.names.get(ward, ward),
                "geometry": study.geometries.get(ward),
            }

        left, right = judge.issued
        return {
            "left": descriptor(left),
            "right": descriptor(right),
            "issued_at": judge.issued_at,
            "comparisons": judge.decisions,
            "recommended_maximum": study.max_comparisons,
        }

    def submit_judgement(self, study_id: str, judge_id: str, payload: dict) -> dict:
        with self._lock:
            study = self._study(study_id)
            judge = self._judge(study, judge_id)
            if study.status != "open":
                raise ServiceError(409, "study is closed")
            if judge.issued is None:
                raise ServiceError(409, "no pair issued")
            kind = payload.get("kind")
            pair = set(judge.issued)
            event = {
                "event": "judgement", "study_id": study_id, "judge_id": judge_id,
                "kind": kind, "pair": list(judge.issued),
                "elapsed_ms": self._elapsed_ms(judge, payload.get("elapsed_ms")),
                "ts": self._now(),
            }
            if kind == "decision":
                winner, loser = payload.get("winner"), payload.get("loser")
                if {winner, loser} != pair:
                    raise ServiceError(409, "judgement does not match issued pair")
                event["winner"] = winner
                event["loser"] = loser
            elif kind == "unknown":
                ward = payload.get("ward")
                if ward not in pair:
                    raise ServiceError(409, "unknown ward not in issued pair")
                event["ward"] = ward
            elif kind != "skip":
                raise ServiceError(400, f"bad judgement kind {kind!r}")
            self._append(event)
            return {"status": "ok", "comparisons": judge.decisions}

    def _elapsed_ms(self, judge: _Judge, client_value) -> float | None:
        if client_value is not None:
            return float(client_value)
        if judge.issued_at is None:
            return None
        issued = datetime.fromisoformat(judge.issued_at)
        return (self._clock() - issued).total_seconds() * 1000.0

    # ---- export and analysis ----------------------------------------------

    def export_csv(self, study_id: str) -> str:
        with self._lock:
            study = self._study(study_id)
            records = [self._to_record(ev) for ev in study.decisions]
        buffer = io.StringIO()
        write_comparisons(records, buffer)
        return buffer.getvalue()

    @staticmethod
    def _to_record(event: dict) -> ComparisonRecord:
        return ComparisonRecord(
            winner=event["winner"],
            loser=event["loser"],
            judge=event["judge_id"],
            timestamp=datetime.fromisoformat(event["ts"]),
        )

    def judge_stats(self, study_id: str) -> dict:
        """Per-judge decision counts and median elapsed milliseconds."""
        study = self._study(study_id)
        out = {}
        for jid, judge in study.judges.items():
            times = [ev["elapsed_ms"] for ev in study.raw_events
                     if ev["judge_id"] == jid and ev["elapsed_ms"] is not None
                     and ev["kind"] == "decision"]
            out[jid] = {
                "decisions": judge.decisions,
                "median_elapsed_ms": statistics.median(times) if times else None,
            }
        return out

    # ---- fits --------------------------------------------------------------

    def _fit_paths(self, study_id: str, fid: str) -> tuple[Path, Path]:
        base = self.data_dir / "fits" / f"{study_id}_{fid}"
        return base.with_suffix(".csv"), base.with_suffix(".geojson")

    def request_fit(self, study_id: str, config: dict) -> str:
        """Start (or re-attach to) a fit; idempotent per config hash."""
        with self._lock:
            study = self._study(study_id)
            if not study.decisions:
                raise ServiceError(409, "no decisions to fit")
            canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
            fid = hashlib.sha256(canonical.encode()).hexdigest()[:16]
            entry = study.fits.get(fid)
            if entry is None:
                self._append({"event": "fit_requested", "study_id": study_id,
                              "fit_id": fid, "config": config, "ts": self._now()})
                entry = study.fits[fid]
            if entry["status"] in ("not_started", "failed"):
                entry["status"] = "running"
                thread = threading.Thread(
                    target=self._run_fit, args=(study_id, fid, config), daemon=True
                )
                thread.start()
            return fid

    def _run_fit(self, study_id: str, fid: str, config: dict) -> None:
        try:
            study = self._study(study_id)
            records = [self._to_record(ev) for ev in study.decisions]
            include = config.get("include_judges")
            exclude = config.get("exclude_judges")
            if include:
                records = [r for r in records if r.judge in include]
            if exclude:
                records = [r for r in records if r.judge not in exclude]
            if not records:
                raise ValueError("judge filter removed every decision")
            tallies = tally(records, study.graph)
            model = config.get("model", "bsbt")
            seed = config.get("seed")
            iterations = int(config.get("iterations", 5000 if model == "bsbt" else 100_000))
            burn_in = int(config.get("burn_in", 50 if model == "bsbt" else 1000))
            if model == "bsbt":
                prior = prior_covariance(study.graph, float(config.get("alpha_sq", 1.0)))
                summary = fit(tallies, prior, FitConfig(
                    iterations=iterations, burn_in=burn_in,
                    chi=float(config.get("chi", 0.1)),
                    omega=float(config.get("omega", 0.1)), seed=seed,
                ))
            elif model == "cluster":
                base = NIGBase(mu0=float(config.get("mu0", 0.0)),
                               alpha0=float(config.get("alpha0", 1.0)),
                               beta0=float(config.get("beta0", 1.0)))
                posterior = fit_clustered(tallies, study.graph, base, ClusterConfig(
                    iterations=iterations, burn_in=burn_in,
                    beta=float(config.get("beta", 1e-8)), seed=seed,
                ))
                summary = posterior
            else:
                raise ValueError(f"unknown model {model!r}")
            csv_path, geo_path = self._fit_paths(study_id, fid)
            tmp = csv_path.with_suffix(".tmp")
            write_results_csv(summary, tmp)
            tmp.replace(csv_path)
            tmp_geo = geo_path.with_suffix(".tmp")
            tmp_geo.write_text(json.dumps(results_geojson(summary, study.geometries)))
            tmp_geo.replace(geo_path)
            with self._lock:
                study.fits[fid]["status"] = "done"
        except Exception as exc:  # surfaced through fit status
            with self._lock:
                self.studies[study_id].fits[fid]["status"] = "failed"
                self.studies[study_id].fits[fid]["error"] = str(exc)

    def fit_status(self, study_id: str, fid: str) -> dict:
        study = self._study(study_id)
        entry = study.fits.get(fid)
        if entry is None:
            raise ServiceError(404, "unknown fit")
        return entry

    def wait_for_fit(self, study_id: str, fid: str, timeout: float = 120.0) -> dict:
        import time as _time

        deadline = _time.monotonic() + timeout
        while _time.monotonic() < deadline:
            entry = self.fit_status(study_id, fid)
            if entry["status"] in ("done", "failed"):
                return entry
            _time.sleep(0.02)
        raise TimeoutError(f"fit {fid} still running")

    def fit_results_csv(self, study_id: str, fid: str) -> str:
        entry = self.fit_status(study_id, fid)
        if entry["status"] != "done":
            raise ServiceError(425 if entry["status"] == "running" else 409,
                               f"fit is {entry['status']}: {entry.get('error')}")
        return self._fit_paths(study_id, fid)[0].read_text()

    def fit_results_geojson(self, study_id: str, fid: str) -> dict:
        entry = self.fit_status(study_id, fid)
        if entry["status"] != "done":
            raise ServiceError(425 if entry["status"] == "running" else 409,
                               f"fit is {entry['status']}: {entry.get('error')}")
        return json.loads(self._fit_paths(study_id, fid)[1].read_text())

    def compare_fits(self, study_id: str, fid_a: str, fid_b: str) -> dict:
        """Pearson and Spearman correlation between two fits' medians."""
        med = []
        for fid in (fid_a, fid_b):
            text = self.fit_results_csv(study_id, fid)
            rows = text.strip().splitlines()[1:]
            med.append(np.array([float(r.split(",")[1]) for r in rows]))
        return {
            "pearson": float(pearsonr(med[0], med[1]).statistic),
            "spearman": float(spearmanr(med[0], med[1]).statistic),
        }

    def snapshot(self) -> dict:
        """Deterministic state digest used by restart-consistency checks."""
        with self._lock:
            return {
                sid: {
                    "status": study.status,
                    "mechanism": study.mechanism,
                    "judges": {
                        jid: {
                            "unknown": sorted(judge.unknown),
                            "decisions": judge.decisions,
                            "issued": list(judge.issued) if judge.issued else None,
                        }
                        for jid, judge in sorted(study.judges.items())
                    },
                    "decisions": [
                        (ev["winner"], ev["loser"], ev["judge_id"], ev["ts"])
                        for ev in study.decisions
                    ],
                    "raw_events": len(study.raw_events),
                    "fits": sorted(study.fits),
                }
                for sid, study in sorted(self.studies.items())
            }


def results_geojson(summary, geometries: dict) -> dict:
    """Choropleth-ready FeatureCollection with posterior properties."""
    features = []
    for k, ward in enumerate(summary.ward_ids):
        features.append({
            "type": "Feature",
            "geometry": geometries.get(ward),
            "properties": {
                "ward": ward,
                "median": float(summary.median[k]),
                "q05": float(summary.q05[k]),
                "q95": float(summary.q95[k]),
                "variance": float(summary.variance[k]),
            },
        })
    return {"type": "FeatureCollection", "features": features}


def create_app(service: StudyService) -> FastAPI:
    """FastAPI wrapper; paths are the service contract."""
    app = FastAPI(title="cjengine study service")

    @app.exception_handler(ServiceError)
    async def _service_error(_request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content={"error": exc.message})

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/studies")
    async def create_study(request: Request):
        body = await request.json()
        try:
            study_id = service.create_study(
                ward_ids=body["ward_ids"],
                edges=[tuple(e) for e in body.get("edges", [])],
                mechanism=body.get("mechanism", "principal_component"),
                alpha_sq=float(body.get("alpha_sq", 1.0)),
                max_comparisons=body.get("max_comparisons"),
                geometries=body.get("geometries"),
                names=body.get("names"),
            )
        except (KeyError, ValueError) as exc:
            raise ServiceError(400, str(exc)) from None
        return {"study_id": study_id}

    @app.post("/studies/{study_id}/close")
    def close_study(study_id: str):
        service.close_study(study_id)
        return {"status": "closed"}

    @app.post("/studies/{study_id}/judges")
    def register_judge(study_id: str):
        return {"judge_id": service.register_judge(study_id)}

    @app.get("/studies/{study_id}/judges/{judge_id}/next")
    def next_pair(study_id: str, judge_id: str):
        return service.next_pair(study_id, judge_id)

    @app.post("/studies/{study_id}/judges/{judge_id}/judgements")
    async def submit_judgement(study_id: str, judge_id: str, request: Request):
        return service.submit_judgement(study_id, judge_id, await request.json())

    @app.get("/studies/{study_id}/export.csv")
    def export_csv(study_id: str):
        return PlainTextResponse(service.export_csv(study_id), media_type="text/csv")

    @app.post("/studies/{study_id}/fits")
    async def request_fit(study_id: str, request: Request):
        fid = service.request_fit(study_id, await request.json())
        return {"fit_id": fid, "status": service.fit_status(study_id, fid)["status"]}

    @app.get("/studies/{study_id}/fits/{fid}/results.csv")
    def fit_results(study_id: str, fid: str):
        return PlainTextResponse(service.fit_results_csv(study_id, fid),
                                 media_type="text/csv")

    @app.get("/studies/{study_id}/fits/{fid}/results.geojson")
    def fit_geojson(study_id: str, fid: str):
        return JSONResponse(service.fit_results_geojson(study_id, fid))

    @app.get("/studies/{study_id}/fits/{fid}/compare/{other}")
    def compare(study_id: str, fid: str, other: str):
        return service.compare_fits(study_id, fid, other)

    return app
