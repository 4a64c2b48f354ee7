"""HTTP API over one ingested dataset plus hot-loadable model bundles.

The dataset is read once at startup and never mutated; bundle imports swap an
immutable snapshot dict under a lock, so readers always see a complete set.
All responses are canonical JSON (sorted keys) to keep golden-file tests
byte-stable.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from typing import Optional

from fastapi import FastAPI, Request, Response

from . import riskmodel
from .cohort import FilterSpec, age_at_admission, apply_filters, los_days
from .datastore import Datastore, ingest, ts_to_iso
from .errors import IcutlError, InvalidRange, SchemaViolation, UnknownAdmission
from .jsonutil import canonical_dumps
from .timeline import assemble_timeline, series_catalog

DEFAULT_PAGE_LIMIT = 100


@dataclass(frozen=True)
class ServiceConfig:
    data_dir: str
    models_dir: str
    listen_addr: str = "127.0.0.1:8686"
    static_assets_dir: Optional[str] = None


def load_config(path) -> ServiceConfig:
    with open(path, "r", encoding="utf-8") as fh:
        body = json.load(fh)
    known = {"data_dir", "models_dir", "listen_addr", "static_assets_dir"}
    unknown = set(body) - known
    if unknown:
        raise SchemaViolation(f"unknown config fields: {sorted(unknown)}")
    if "data_dir" not in body or "models_dir" not in body:
        raise SchemaViolation("config requires data_dir and models_dir")
    return ServiceConfig(**body)


class ApiError(Exception):
    def __init__(self, http_status: int, code: str, message: str):
        assert http_status in (400, 404, 409, 422, 500)
        self.http_status = http_status
        self.code = code
        self.message = message
        super().__init__(message)


def _json_response(payload, status_code: int = 200) -> Response:
    return Response(
        content=canonical_dumps(payload) + "\n",
        status_code=status_code,
        media_type="application/json",
    )


def _parse_float(params, name) -> Optional[float]:
    raw = params.get(name)
    if raw is None or raw == "":
        return None
    try:
        return float(raw)
    except ValueError:
        raise ApiError(422, "InvalidRange", f"{name} must be a number, got {raw!r}") from None


def _parse_bool(params, name) -> Optional[bool]:
    raw = params.get(name)
    if raw is None or raw == "":
        return None
    if raw.lower() in ("true", "1"):
        return True
    if raw.lower() in ("false", "0"):
        return False
    raise ApiError(422, "InvalidRange", f"{name} must be true or false, got {raw!r}")


def _parse_set(params, name) -> Optional[frozenset]:
    raw = params.get(name)
    if raw is None or raw == "":
        return None
    return frozenset(part for part in raw.split(",") if part)


def filter_spec_from_query(params) -> FilterSpec:
    """Query-parameter form of FilterSpec: list fields are comma-separated,
    ranges split into *_min / *_max, mortality arrives as `died`."""
    age_min, age_max = _parse_float(params, "age_min"), _parse_float(params, "age_max")
    los_min, los_max = _parse_float(params, "los_min"), _parse_float(params, "los_max")
    gender = params.get("gender") or None
    try:
        return FilterSpec(
            primary_icd9=_parse_set(params, "primary_icd9"),
            intervention_labels=_parse_set(params, "intervention_labels"),
            services=_parse_set(params, "services"),
            age_range=None if age_min is None and age_max is None else (age_min, age_max),
            gender=gender,
            los_range=None if los_min is None and los_max is None else (los_min, los_max),
            died_in_hospital=_parse_bool(params, "died"),
        )
    except InvalidRange as exc:
        raise ApiError(422, "InvalidRange", str(exc)) from None


def _admission_summary(store: Datastore, hadm_id: int) -> dict:
    adm = store.admissions[hadm_id]
    patient = store.patients[adm.subject_id]
    return {
        "hadm_id": adm.hadm_id,
        "subject_id": adm.subject_id,
        "age": round(age_at_admission(patient.dob, adm.admittime), 2),
        "gender": patient.gender,
        "admission_diagnosis": adm.admission_diagnosis,
        "los_days": round(los_days(adm.admittime, adm.dischtime), 3),
        "died": adm.deathtime is not None,
    }


class AppState:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self.store: Datastore = ingest(config.data_dir)
        self._lock = threading.Lock()
        self._bundles: dict[str, riskmodel.RiskModelBundle] = {}
        self._reports: dict[str, object] = {}
        os.makedirs(config.models_dir, exist_ok=True)
        for name in sorted(os.listdir(config.models_dir)):
            if name.endswith(".json"):
                bundle = riskmodel.read_bundle(os.path.join(config.models_dir, name))
                self._bundles[bundle.bundle_id] = bundle

    def bundles(self) -> dict:
        with self._lock:
            return dict(self._bundles)

    def add_bundle(self, bundle) -> None:
        with self._lock:
            if bundle.bundle_id in self._bundles:
                raise ApiError(409, "Duplicate", f"bundle_id {bundle.bundle_id!r} already loaded")
            path = os.path.join(self.config.models_dir, f"{bundle.bundle_id}.json")
            riskmodel.write_bundle(bundle, path)
            next_bundles = dict(self._bundles)
            next_bundles[bundle.bundle_id] = bundle
            self._bundles = next_bundles  # atomic swap: readers see old or new, never partial

    def report_for(self, bundle_id: str):
        bundles = self.bundles()
        if bundle_id not in bundles:
            raise ApiError(404, "UnknownBundle", f"no bundle {bundle_id!r}")
        with self._lock:
            cached = self._reports.get(bundle_id)
        if cached is None:
            report, _ = riskmodel.evaluate_bundle(bundles[bundle_id], self.store)
            with self._lock:
                self._reports[bundle_id] = report
            cached = report
        return cached


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="icutl", docs_url=None, redoc_url=None)
    state = AppState(config)
    app.state.icutl = state

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError):
        return _json_response({"code": exc.code, "message": exc.message}, exc.http_status)

    @app.exception_handler(IcutlError)
    async def _internal_error(_request: Request, exc: IcutlError):
        return _json_response({"code": type(exc).__name__, "message": str(exc)}, 500)

    @app.get("/api/admissions")
    def list_admissions(request: Request):
        params = request.query_params
        spec = filter_spec_from_query(params)
        try:
            limit = int(params.get("limit", DEFAULT_PAGE_LIMIT))
            offset = int(params.get("offset", 0))
        except ValueError:
            raise ApiError(422, "InvalidRange", "limit and offset must be integers") from None
        if limit < 1 or offset < 0:
            raise ApiError(422, "InvalidRange", "limit must be >= 1 and offset >= 0")
        matched = sorted(apply_filters(state.store, spec))
        page = matched[offset:offset + limit]
        return _json_response(
            {
                "items": [_admission_summary(state.store, h) for h in page],
                "limit": limit,
                "offset": offset,
                "total": len(matched),
            }
        )

    @app.get("/api/subjects/{subject_id}")
    def get_subject(subject_id: int):
        patient = state.store.patients.get(subject_id)
        if patient is None:
            raise ApiError(404, "UnknownSubject", f"no subject {subject_id}")
        admissions = state.store.admissions_for_subject(subject_id)
        return _json_response(
            {
                "attributes": {
                    "subject_id": patient.subject_id,
                    "gender": patient.gender,
                    "dob": ts_to_iso(patient.dob),
                    "dod": None if patient.dod is None else ts_to_iso(patient.dod),
                },
                "admissions": [_admission_summary(state.store, a.hadm_id) for a in admissions],
            }
        )

    @app.get("/api/admissions/{hadm_id}/timeline")
    def get_timeline(hadm_id: int, request: Request):
        raw = request.query_params.get("series", "")
        selected = [name for name in raw.split(",") if name]
        known = set(state.store.item_names())
        unknown = sorted(set(selected) - known)
        if unknown:
            raise ApiError(422, "UnknownSeriesName", f"unknown series: {', '.join(unknown)}")
        try:
            doc = assemble_timeline(state.store, hadm_id, set(selected))
        except UnknownAdmission:
            raise ApiError(404, "UnknownAdmission", f"no admission {hadm_id}") from None
        stays = state.store.stays_for_admission(hadm_id)
        bundles = state.bundles()
        for bundle_id in sorted(bundles):
            bundle = bundles[bundle_id]
            points = []
            for stay in stays:
                points.extend(riskmodel.risk_timeline(bundle, state.store, stay.icustay_id).points)
            points.sort(key=lambda p: p[0])
            doc.risk_series.append(riskmodel.RiskSeries(model_id=bundle_id, points=points))
        return _json_response(doc.to_json_dict())

    @app.get("/api/catalog/series")
    def get_catalog():
        return _json_response({cat: names for cat, names in series_catalog(state.store)})

    @app.get("/api/models")
    def list_models():
        bundles = state.bundles()
        return _json_response(
            {
                "items": [
                    {
                        "bundle_id": b.bundle_id,
                        "created_at": b.created_at,
                        "seed": b.seed,
                        "horizons": [m.t_hours for m in b.horizon_models],
                    }
                    for _, b in sorted(bundles.items())
                ]
            }
        )

    @app.post("/api/models")
    async def import_model(request: Request):
        try:
            body = json.loads(await request.body())
        except json.JSONDecodeError as exc:
            raise ApiError(422, "SchemaViolation", f"body is not valid JSON: {exc}") from None
        try:
            bundle = riskmodel.bundle_from_json_dict(body)
        except SchemaViolation as exc:
            raise ApiError(422, "SchemaViolation", str(exc)) from None
        state.add_bundle(bundle)
        return _json_response({"bundle_id": bundle.bundle_id}, 201)

    @app.get("/api/models/{bundle_id}/metrics")
    def model_metrics(bundle_id: str):
        report = state.report_for(bundle_id)
        return _json_response(report.to_json_dict())

    if config.static_assets_dir and os.path.isdir(config.static_assets_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=config.static_assets_dir, html=True), name="ui")

    return app


def run_server(config: ServiceConfig):
    import uvicorn

    host, _, port = config.listen_addr.rpartition(":")
    uvicorn.run(create_app(config), host=host or "127.0.0.1", port=int(port))
