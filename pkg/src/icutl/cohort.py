"""Conjunctive admission filters backing the patient-filtering panel."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .datastore import Datastore, primary_diagnosis
from .errors import InvalidRange, NegativeAge

DAY = 86400.0
YEAR_DAYS = 365.25

# De-identified sources shift birth dates for very old patients; an apparent
# age above this is an artifact and is reported as the cap value.
AGE_ARTIFACT_THRESHOLD = 120.0
AGE_CAP = 90.0


def age_at_admission(dob: int, admittime: int) -> float:
    """Age in years at admission, with the de-identification cap applied."""
    if admittime < dob:
        raise NegativeAge(f"admittime precedes dob by {(dob - admittime) / DAY:.1f} days")
    age = (admittime - dob) / DAY / YEAR_DAYS
    return AGE_CAP if age > AGE_ARTIFACT_THRESHOLD else age


@dataclass(frozen=True)
class FilterSpec:
    """Absent (None) fields impose no constraint; present ones are AND-ed."""

    primary_icd9: Optional[frozenset] = None  # set of code prefixes
    intervention_labels: Optional[frozenset] = None
    services: Optional[frozenset] = None
    age_range: Optional[tuple] = None  # (min, max) years, inclusive
    gender: Optional[str] = None
    los_range: Optional[tuple] = None  # (min, max) days, inclusive
    died_in_hospital: Optional[bool] = None

    def __post_init__(self):
        for name in ("age_range", "los_range"):
            rng = getattr(self, name)
            if rng is not None:
                lo, hi = rng
                if lo is not None and hi is not None and lo > hi:
                    raise InvalidRange(f"{name}: min {lo} > max {hi}")
        if self.gender is not None and self.gender not in ("M", "F"):
            raise InvalidRange(f"gender must be M or F, got {self.gender!r}")

    def to_json_dict(self) -> dict:
        out = {}
        for name in ("primary_icd9", "intervention_labels", "services"):
            val = getattr(self, name)
            if val is not None:
                out[name] = sorted(val)
        if self.age_range is not None:
            out["age_range"] = list(self.age_range)
        if self.gender is not None:
            out["gender"] = self.gender
        if self.los_range is not None:
            out["los_range"] = list(self.los_range)
        if self.died_in_hospital is not None:
            out["died_in_hospital"] = self.died_in_hospital
        return out

    @classmethod
    def from_json_dict(cls, body: dict) -> "FilterSpec":
        known = {
            "primary_icd9", "intervention_labels", "services",
            "age_range", "gender", "los_range", "died_in_hospital",
        }
        unknown = set(body) - known
        if unknown:
            raise InvalidRange(f"unknown filter fields: {sorted(unknown)}")
        kwargs = {}
        for name in ("primary_icd9", "intervention_labels", "services"):
            if body.get(name) is not None:
                kwargs[name] = frozenset(str(v) for v in body[name])
        for name in ("age_range", "los_range"):
            if body.get(name) is not None:
                lo, hi = body[name]
                kwargs[name] = (None if lo is None else float(lo), None if hi is None else float(hi))
        if body.get("gender") is not None:
            kwargs["gender"] = str(body["gender"])
        if body.get("died_in_hospital") is not None:
            kwargs["died_in_hospital"] = bool(body["died_in_hospital"])
        return cls(**kwargs)


def los_days(admittime: int, dischtime: int) -> float:
    return (dischtime - admittime) / DAY


def _in_range(value: float, rng: Optional[tuple]) -> bool:
    if rng is None:
        return True
    lo, hi = rng
    if lo is not None and value < lo:
        return False
    if hi is not None and value > hi:
        return False
    return True


def apply_filters(store: Datastore, spec: FilterSpec) -> set[int]:
    """hadm_ids of exactly the admissions satisfying every present constraint."""
    result = set()
    for hadm_id, adm in store.admissions.items():
        patient = store.patients[adm.subject_id]
        if spec.gender is not None and patient.gender != spec.gender:
            continue
        if spec.died_in_hospital is not None and (adm.deathtime is not None) != spec.died_in_hospital:
            continue
        if not _in_range(age_at_admission(patient.dob, adm.admittime), spec.age_range):
            continue
        if not _in_range(los_days(adm.admittime, adm.dischtime), spec.los_range):
            continue
        if spec.primary_icd9 is not None:
            code = primary_diagnosis(store, hadm_id)
            if code is None or not any(code.startswith(p) for p in spec.primary_icd9):
                continue
        if spec.intervention_labels is not None or spec.services is not None:
            intervals = store.events_for_admission(hadm_id, "interval")
            if spec.intervention_labels is not None:
                labels = {e.label for e in intervals if e.kind == "intervention"}
                if not labels & spec.intervention_labels:
                    continue
            if spec.services is not None:
                received = {e.label for e in intervals if e.kind == "service"}
                if not received & spec.services:
                    continue
        result.add(hadm_id)
    return result
