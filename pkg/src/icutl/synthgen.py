"""Deterministic generator for MIMIC-shaped synthetic datasets.

Every admission carries a latent hourly severity process (AR(1) around a
per-admission baseline). Measurement values couple linearly to severity, so a
linear model can recover risk; in-hospital death is a Bernoulli draw whose
probability is logistic in the admission's cumulative mean severity. With
`signal_strength = 0` the measurements decouple from severity entirely and the
prediction task becomes unlearnable by construction.

Generation is fully determined by the seed: every random quantity comes from a
stream keyed by (seed, subject, admission, purpose), so datasets are
byte-identical across runs and per-patient outcomes are common-random-number
coupled across parameter changes (raising the base mortality rate can only
flip survivors to deaths, never the reverse).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import pandas as pd
from scipy.special import expit

from .datastore import HOUR, TABLE_COLUMNS
from .errors import IoError
from .features import FEATURE_NAMES

DAY = 24 * HOUR

# Strong-coupling preset: at this signal strength a 12-hour window pins the
# latent baseline to a fraction of its population spread.
STRONG_SIGNAL = 1.0

SEVERITY_PHI = 0.92
SEVERITY_SIGMA = 0.1372  # stationary fluctuation sd 0.35 around the baseline
HAZARD_SLOPE = 2.4
HAZARD_Z_SD = 1.02  # sd of the cumulative mean severity (baseline + AR part)
VENT_THRESHOLD = 0.9
VASO_THRESHOLD = 1.7
MIN_DEATH_HOUR = 24
LOS_LOG_SD = 0.9
LOS_MIN_H, LOS_MAX_H = 6, 504
SECOND_ADMISSION_RATE = 0.2
AGE_ARTIFACT_RATE = 0.02
EPOCH_2101 = int(np.datetime64("2101-01-01T00:00:00", "s").astype(np.int64))

# value = baseline + offset + coef * signal_strength * severity + noise
# columns: baseline, severity coef, obs noise sd, decimals, clip lo, clip hi, unit
VITAL_DEFS = {
    "diastolic_blood_pressure": (62.0, -6.0, 6.0, 1, 20, 140, "mmHg"),
    "systolic_blood_pressure": (118.0, -10.0, 9.0, 1, 50, 230, "mmHg"),
    "mean_blood_pressure": (80.0, -7.0, 7.0, 1, 30, 180, "mmHg"),
    "gcs_total": (13.5, -2.4, 1.2, 0, 3, 15, "points"),
    "heart_rate": (86.0, 9.0, 7.0, 1, 30, 200, "bpm"),
    "respiratory_rate": (18.0, 3.2, 2.6, 1, 4, 60, "insp/min"),
    "temperature": (37.0, 0.5, 0.4, 1, 33, 42, "C"),
    "weight": (80.0, 0.0, 1.2, 1, 35, 200, "kg"),
    "white_blood_cell_count": (9.5, 3.2, 1.8, 1, 0.5, 60, "K/uL"),
    "ph": (7.4, -0.05, 0.035, 2, 6.8, 7.8, "units"),
}
LAB_DEFS = {
    "anion_gap": (13.0, 2.2, 1.8, 0, 2, 40, "mEq/L", "Blood"),
    "bicarbonate": (24.0, -2.4, 2.2, 0, 5, 45, "mEq/L", "Blood"),
    "blood_urea_nitrogen": (22.0, 7.0, 5.5, 0, 2, 180, "mg/dL", "Blood"),
    "chloride": (103.0, 1.6, 2.8, 0, 75, 135, "mEq/L", "Blood"),
    "creatinine": (1.1, 0.45, 0.28, 1, 0.2, 15, "mg/dL", "Blood"),
    "fraction_inspired_oxygen": (0.45, 0.11, 0.07, 2, 0.21, 1.0, "fraction", "Gas"),
    "glucose": (128.0, 14.0, 24.0, 0, 30, 600, "mg/dL", "Blood"),
    "hematocrit": (33.0, -2.4, 2.6, 1, 12, 60, "%", "Blood"),
    "hemoglobin": (11.0, -0.8, 0.9, 1, 4, 20, "g/dL", "Blood"),
    "inr": (1.3, 0.24, 0.18, 1, 0.8, 12, "ratio", "Blood"),
    "lactate": (1.8, 0.85, 0.5, 1, 0.3, 20, "mmol/L", "Blood"),
    "magnesium": (2.0, 0.12, 0.22, 1, 0.8, 5, "mg/dL", "Blood"),
    "oxygen_saturation": (96.5, -2.2, 1.4, 0, 60, 100, "%", "Blood"),
    "partial_thromboplastin_time": (32.0, 6.0, 4.5, 1, 15, 150, "sec", "Blood"),
    "phosphate": (3.4, 0.5, 0.55, 1, 0.5, 12, "mg/dL", "Blood"),
    "platelets": (240.0, -32.0, 45.0, 0, 5, 1000, "K/uL", "Blood"),
    "potassium": (4.1, 0.3, 0.32, 1, 2, 9, "mEq/L", "Blood"),
    "prothrombin_time": (14.0, 2.1, 1.4, 1, 8, 60, "sec", "Blood"),
    "sodium": (139.0, 1.1, 2.9, 0, 110, 170, "mEq/L", "Blood"),
}
assert set(VITAL_DEFS) | set(LAB_DEFS) == set(FEATURE_NAMES)

ARCHETYPES = [
    ("486", "PNEUMONIA", "MICU", "MED"),
    ("428", "CONGESTIVE HEART FAILURE", "CCU", "CMED"),
    ("038", "SEPSIS", "MICU", "MED"),
    ("410", "MYOCARDIAL INFARCTION", "CCU", "CMED"),
    ("584", "ACUTE RENAL FAILURE", "MICU", "MED"),
    ("491", "COPD EXACERBATION", "MICU", "MED"),
    ("577", "ACUTE PANCREATITIS", "SICU", "SURG"),
    ("852", "SUBDURAL HEMATOMA", "SICU", "NSURG"),
]
SECONDARY_ICD9 = ["4019", "25000", "2720", "41401", "5849", "2859", "5990", "51881", "42731", "2762"]

NOTE_CATEGORIES = ["Nursing", "Physician", "Radiology", "Echo"]
NOTE_CATEGORY_WEIGHTS = [0.6, 0.25, 0.1, 0.05]
SEVERITY_BUCKETS = [(0.3, "stable"), (1.0, "guarded"), (1.7, "serious"), (np.inf, "critical")]
NOTE_TEMPLATES = {
    "Nursing": "Nursing progress note. Patient condition {bucket}. Vital signs monitored per protocol, plan of care reviewed.",
    "Physician": "Physician progress note. Overall assessment: patient remains {bucket}. Will continue current management and reassess.",
    "Radiology": "Portable chest radiograph. Clinical correlation recommended; overall picture {bucket}.",
    "Echo": "Echocardiogram report. Study obtained at bedside; findings discussed with team. Patient status {bucket}.",
}


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int
    seed: int = 0
    mortality_base_rate: float = 0.15
    signal_strength: float = STRONG_SIGNAL
    mean_icu_los_hours: float = 72.0
    note_rate_per_day: float = 2.0

    def __post_init__(self):
        if self.n_patients < 0:
            raise ValueError("n_patients must be >= 0")
        if not 0.0 < self.mortality_base_rate < 1.0:
            raise ValueError("mortality_base_rate must lie in (0, 1)")
        if self.signal_strength < 0:
            raise ValueError("signal_strength must be >= 0")
        if self.mean_icu_los_hours <= 0:
            raise ValueError("mean_icu_los_hours must be positive")
        if self.note_rate_per_day < 0:
            raise ValueError("note_rate_per_day must be >= 0")


@dataclass(frozen=True)
class SeverityParams:
    phi: float
    sigma: float
    mu: float

    def __post_init__(self):
        if not 0.0 <= self.phi <= 1.0:
            raise ValueError("phi must lie in [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def severity_trajectory(params: SeverityParams, horizon_steps: int, rng) -> np.ndarray:
    """AR(1) severity series: s_0 = mu, s_{k+1} = mu + phi (s_k - mu) + sigma eps_k."""
    if horizon_steps <= 0:
        raise ValueError("horizon_steps must be positive")
    s = np.empty(horizon_steps)
    s[0] = params.mu
    for k in range(1, horizon_steps):
        s[k] = params.mu + params.phi * (s[k - 1] - params.mu) + params.sigma * rng.standard_normal()
    return s


def _extend_trajectory(s, params, extra, rng):
    if extra <= 0:
        return s
    tail = np.empty(extra)
    prev = s[-1]
    for k in range(extra):
        prev = params.mu + params.phi * (prev - params.mu) + params.sigma * rng.standard_normal()
        tail[k] = prev
    return np.concatenate([s, tail])


@lru_cache(maxsize=32)
def _hazard_intercept(rate: float, slope: float) -> float:
    """Intercept a such that E[expit(a + slope*z)] = rate for z ~ N(0,1)."""
    nodes, weights = np.polynomial.hermite.hermgauss(80)
    z = np.sqrt(2.0) * nodes
    w = weights / np.sqrt(np.pi)

    def mean_rate(a):
        return float(np.dot(w, expit(a + slope * z)))

    lo, hi = -30.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_rate(mid) < rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _bucket(severity: float) -> str:
    for cutoff, name in SEVERITY_BUCKETS:
        if severity < cutoff:
            return name
    return "critical"


def _runs(mask: np.ndarray):
    """[(start, stop)) index pairs of True runs."""
    padded = np.concatenate(([0], mask.astype(np.int8), [0]))
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2], edges[1::2]))


def _snap_minute(ts: float) -> int:
    return int(ts) // 60 * 60


class _Buffers:
    """Row accumulators; the two event tables are columnar for volume."""

    def __init__(self):
        self.rows = {
            name: [] for name in TABLE_COLUMNS
            if name not in ("chartevents", "labevents")
        }
        self.chart = {"icustay_id": [], "charttime": [], "item": [], "value": []}
        self.lab = {"hadm_id": [], "charttime": [], "item": [], "value": []}

    def add_chart(self, icustay_id, times, item_idx, values):
        n = len(times)
        if n == 0:
            return
        self.chart["icustay_id"].append(np.full(n, icustay_id, dtype=np.int64))
        self.chart["charttime"].append(np.asarray(times, dtype=np.int64))
        self.chart["item"].append(np.full(n, item_idx, dtype=np.int32))
        self.chart["value"].append(np.asarray(values, dtype=np.float64))

    def add_lab(self, hadm_id, times, item_idx, values):
        n = len(times)
        if n == 0:
            return
        self.lab["hadm_id"].append(np.full(n, hadm_id, dtype=np.int64))
        self.lab["charttime"].append(np.asarray(times, dtype=np.int64))
        self.lab["item"].append(np.full(n, item_idx, dtype=np.int32))
        self.lab["value"].append(np.asarray(values, dtype=np.float64))


_VITAL_IDX = {name: i for i, name in enumerate(FEATURE_NAMES) if name in VITAL_DEFS}
_LAB_IDX = {name: i for i, name in enumerate(FEATURE_NAMES) if name in LAB_DEFS}
_ITEM_UNITS = np.array(
    [VITAL_DEFS[n][6] if n in VITAL_DEFS else LAB_DEFS[n][6] for n in FEATURE_NAMES]
)
_ITEM_FLUIDS = np.array([LAB_DEFS[n][7] if n in LAB_DEFS else "" for n in FEATURE_NAMES])
_ITEM_NAMES = np.array(FEATURE_NAMES)


def _stream(cfg, subject_id, adm_idx, purpose):
    return np.random.default_rng(np.random.SeedSequence((cfg.seed, subject_id, adm_idx, purpose)))


def _round_clip(values, decimals, lo, hi):
    return np.clip(np.round(values, decimals), lo, hi)


def _gen_admission(buf: _Buffers, cfg: SynthConfig, subject_id: int, adm_idx: int,
                   admit_ts: int, archetype) -> tuple[int, bool]:
    """Generate one admission with its ICU stay; returns (dischtime, died)."""
    r_los = _stream(cfg, subject_id, adm_idx, 1)
    r_sev = _stream(cfg, subject_id, adm_idx, 2)
    r_death = _stream(cfg, subject_id, adm_idx, 3)
    r_vit = _stream(cfg, subject_id, adm_idx, 4)
    r_lab = _stream(cfg, subject_id, adm_idx, 5)
    r_note = _stream(cfg, subject_id, adm_idx, 6)
    r_misc = _stream(cfg, subject_id, adm_idx, 7)

    hadm_id = subject_id * 100 + adm_idx
    icustay_id = hadm_id * 10 + 1
    icd9, diagnosis, careunit, service = archetype

    mean_log = np.log(cfg.mean_icu_los_hours) - 0.5 * LOS_LOG_SD**2
    los_planned = int(round(np.clip(r_los.lognormal(mean_log, LOS_LOG_SD), LOS_MIN_H, LOS_MAX_H)))

    intime = _snap_minute(admit_ts + r_misc.uniform(0, 12) * HOUR)
    params = SeverityParams(phi=SEVERITY_PHI, sigma=SEVERITY_SIGMA, mu=r_sev.normal())
    sev = severity_trajectory(params, los_planned, r_sev)

    # mortality: logistic hazard in the cumulative mean severity of the stay
    z = float(sev.mean()) / HAZARD_Z_SD
    intercept = _hazard_intercept(cfg.mortality_base_rate, HAZARD_SLOPE)
    died = bool(r_death.uniform() < expit(intercept + HAZARD_SLOPE * z))
    extension = int(r_death.integers(0, 49))  # drawn unconditionally: keeps streams aligned
    death_jitter = r_death.uniform()
    if died:
        los_eff = max(los_planned, MIN_DEATH_HOUR + 2 + extension)
        sev = _extend_trajectory(sev, params, los_eff - los_planned, r_sev)
        hours = np.arange(MIN_DEATH_HOUR, los_eff + 1)
        weights = np.exp(0.9 * sev[np.minimum(hours, los_eff - 1)]) * (0.3 + 0.7 * hours / los_eff)
        weights /= weights.sum()
        pick = min(int(np.searchsorted(np.cumsum(weights), death_jitter)), len(hours) - 1)
        death_hour = int(hours[pick])
        los_stay = death_hour
    else:
        los_stay = los_planned
    outtime = intime + los_stay * HOUR
    deathtime = outtime if died else None
    dischtime = outtime if died else _snap_minute(outtime + r_misc.uniform(0, 72) * HOUR)

    buf.rows["admissions"].append(
        (hadm_id, subject_id, admit_ts, dischtime, deathtime, diagnosis)
    )
    buf.rows["icustays"].append((icustay_id, hadm_id, subject_id, intime, outtime, careunit))

    sev_stay = sev[:los_stay]
    g = cfg.signal_strength
    hours_ts = intime + np.arange(los_stay, dtype=np.int64) * HOUR

    for name, (base, coef, noise, dec, lo, hi, _unit) in VITAL_DEFS.items():
        offset = r_vit.normal(0.0, 0.3 * noise)
        vals = base + offset + coef * g * sev_stay + noise * r_vit.standard_normal(los_stay)
        keep = r_vit.uniform(size=los_stay) >= 0.05  # sporadic missed charting
        buf.add_chart(icustay_id, hours_ts[keep], _VITAL_IDX[name], _round_clip(vals[keep], dec, lo, hi))

    total_h = (dischtime - admit_ts) / HOUR
    for name, (base, coef, noise, dec, lo, hi, _unit, _fluid) in LAB_DEFS.items():
        interval = float(r_lab.choice([4.0, 6.0, 8.0, 12.0]))
        phase = r_lab.uniform(0, interval)
        rel_h = np.arange(phase, total_h, interval)
        if len(rel_h) == 0:
            continue
        times = admit_ts + (rel_h * HOUR).astype(np.int64)
        times = (times // 60) * 60
        sev_idx = np.clip((times - intime) // HOUR, 0, los_stay - 1).astype(np.int64)
        offset = r_lab.normal(0.0, 0.3 * noise)
        vals = base + offset + coef * g * sev_stay[sev_idx] + noise * r_lab.standard_normal(len(times))
        buf.add_lab(hadm_id, times, _LAB_IDX[name], _round_clip(vals, dec, lo, hi))

    for label, threshold in (("ventilation", VENT_THRESHOLD), ("vasopressor", VASO_THRESHOLD)):
        for start, stop in _runs(sev_stay >= threshold):
            buf.rows["interventions"].append(
                (icustay_id, label, intime + int(start) * HOUR, intime + int(stop) * HOUR)
            )

    if intime > admit_ts:
        buf.rows["transfers"].append((hadm_id, "Emergency Department", admit_ts, intime))
    buf.rows["transfers"].append((hadm_id, careunit, intime, outtime))
    if dischtime > outtime:
        buf.rows["transfers"].append((hadm_id, "Ward", outtime, dischtime))

    buf.rows["services"].append((hadm_id, admit_ts, service))
    if r_misc.uniform() < 0.15:
        other = [s for s in ("MED", "SURG", "CMED", "NMED") if s != service]
        buf.rows["services"].append(
            (hadm_id, _snap_minute((admit_ts + dischtime) / 2), str(r_misc.choice(other)))
        )

    n_notes = int(r_note.poisson(cfg.note_rate_per_day * (dischtime - admit_ts) / DAY))
    note_times = np.sort(r_note.integers(admit_ts, dischtime + 1, size=n_notes))
    for ts in note_times:
        category = str(r_note.choice(NOTE_CATEGORIES, p=NOTE_CATEGORY_WEIGHTS))
        sev_here = float(sev_stay[int(np.clip((ts - intime) // HOUR, 0, los_stay - 1))])
        buf.rows["noteevents"].append(
            (hadm_id, _snap_minute(ts), category, NOTE_TEMPLATES[category].format(bucket=_bucket(sev_here)))
        )

    buf.rows["diagnoses"].append((hadm_id, icd9, 1))
    n_secondary = int(r_misc.integers(1, 4))
    for seq, code in enumerate(r_misc.choice(SECONDARY_ICD9, size=n_secondary, replace=False), start=2):
        buf.rows["diagnoses"].append((hadm_id, str(code), seq))

    return dischtime, died


def _gen_patient(buf: _Buffers, cfg: SynthConfig, subject_id: int):
    r_demo = _stream(cfg, subject_id, 0, 0)
    gender = "M" if r_demo.uniform() < 0.5 else "F"
    if r_demo.uniform() < AGE_ARTIFACT_RATE:
        age_years = r_demo.uniform(280, 320)  # date-shift artifact for very old patients
    else:
        age_years = r_demo.uniform(16, 92)
    admit_ts = _snap_minute(EPOCH_2101 + r_demo.uniform(0, 90 * 360) * DAY)
    dob = int(admit_ts - age_years * 365.25 * DAY) // DAY * DAY
    archetype = ARCHETYPES[int(r_demo.integers(0, len(ARCHETYPES)))]
    wants_second = r_demo.uniform() < SECOND_ADMISSION_RATE
    second_gap_days = r_demo.uniform(5, 60)
    late_dod_u = r_demo.uniform()
    late_dod_days = r_demo.uniform(10, 400)

    disch1, died1 = _gen_admission(buf, cfg, subject_id, 1, admit_ts, archetype)
    dod = disch1 if died1 else None
    last_disch = disch1
    if not died1 and wants_second:
        admit2 = _snap_minute(disch1 + second_gap_days * DAY)
        disch2, died2 = _gen_admission(buf, cfg, subject_id, 2, admit2, archetype)
        last_disch = disch2
        if died2:
            dod = disch2
    if dod is None and late_dod_u < 0.05:
        dod = _snap_minute(last_disch + late_dod_days * DAY)
    buf.rows["patients"].append((subject_id, gender, dob, dod))


# --- bundled case-study fixture ----------------------------------------------
# Subject 1 is a fully scripted admission shaped like a classic deteriorating
# respiratory patient: ventilation with a mid-stay gap, late vasopressor onset,
# terminal decline and in-hospital death on day six. Used by UI walkthroughs
# and golden-file tests, so it is constant regardless of seed.

CASE_STUDY_SUBJECT_ID = 1
CASE_STUDY_HADM_ID = 101
CASE_STUDY_ICUSTAY_ID = 1011
_CS_ADMIT = int(np.datetime64("2143-11-22T14:00:00", "s").astype(np.int64))
_CS_LOS_H = 146
_CS_VENT = [(2, 70), (76, 140)]
_CS_VASO = [(100, 140)]


def _cs_severity(k: float) -> float:
    s = 0.15 + 1.9 * (k / _CS_LOS_H) ** 2
    if 70 <= k < 76:
        s += 0.7  # decompensation while off the ventilator
    if k >= 140:
        s += 0.9  # comfort measures, terminal decline
    return s


def _cs_hour(k: float) -> int:
    return int(_CS_ADMIT + k * HOUR)


def _case_study_vitals(k: int) -> dict[str, float]:
    s = _cs_severity(k)
    in_gap = 70 <= k < 76
    wave = np.sin(k / 3.0)
    dia = 62 - 12 * (k / _CS_LOS_H) + 2 * wave
    if 95 <= k < 100:
        dia = 45 + wave
    elif 100 <= k < 140:
        dia = 57 + 2 * wave  # vasopressor support raises diastolic pressure
    elif k >= 140:
        dia = 40 - (k - 140)
    o2 = 96.5 - 1.2 * (k / _CS_LOS_H)
    if in_gap:
        o2 = {70: 93.0, 71: 90.0, 72: 88.0, 73: 86.0, 74: 86.0, 75: 89.0}[k]
    elif k > 100:
        o2 = 93 + 3 * np.sin(k / 1.7)
    if k >= 140:
        o2 = 88 - 2.5 * (k - 140)
    rr = 17 + 6 * (k / _CS_LOS_H) + 1.5 * np.sin(k / 4.0)
    if in_gap:
        rr = {70: 10.0, 71: 7.0, 72: 4.0, 73: 2.0, 74: 5.0, 75: 9.0}[k]
    if k >= 140:
        rr = 28 + (k - 140)
    gcs = 14 if k < 48 else (12 if k < 100 else (8 if k < 140 else 3))
    return {
        "heart_rate": 88 + 26 * (k / _CS_LOS_H) + 4 * wave,
        "systolic_blood_pressure": 118 - 26 * (k / _CS_LOS_H) + 3 * wave + (12 if 100 <= k < 140 else 0),
        "diastolic_blood_pressure": dia,
        "mean_blood_pressure": (118 - 26 * (k / _CS_LOS_H) + 2 * dia) / 3 + 14,
        "respiratory_rate": rr,
        "temperature": 37.1 + 0.8 * (k / _CS_LOS_H) + 0.3 * np.sin(k / 24.0),
        "gcs_total": float(gcs),
        "oxygen_saturation": o2,
        "weight": 80.0 + 0.3 * (k // 24),
        "white_blood_cell_count": 14.5 + 14.2 * min(k, 120) / 120 - (1.2 if k > 126 else 0),
        "ph": 7.42 - 0.13 * (k / _CS_LOS_H) - (0.08 if in_gap else 0),
        "severity": s,
    }


def _case_study_lab(name: str, k: float) -> float:
    ramp = k / _CS_LOS_H
    gap = 70 <= k < 76
    values = {
        "anion_gap": 12 + 8 * ramp,
        "bicarbonate": 25 - 9 * ramp,
        "blood_urea_nitrogen": 18 + 37 * ramp,
        "chloride": 102 + 5 * ramp,
        "creatinine": 1.0 + 1.4 * ramp,
        "fraction_inspired_oxygen": (0.35 if gap else 0.5 + 0.3 * ramp),
        "glucose": 130 + 60 * ramp,
        "hematocrit": 34 - 6 * ramp,
        "hemoglobin": 11.4 - 2.1 * ramp,
        "inr": 1.2 + 1.1 * ramp,
        "lactate": 1.2 + 5.3 * ramp + (1.0 if gap else 0),
        "magnesium": 2.0 + 0.4 * ramp,
        "oxygen_saturation": 96 - 4 * ramp - (8 if gap else 0),
        "partial_thromboplastin_time": 30 + 25 * ramp,
        "phosphate": 3.3 + 1.8 * ramp,
        "platelets": 230 - 140 * ramp,
        "potassium": 4.0 + 0.9 * ramp,
        "prothrombin_time": 13.5 + 7 * ramp,
        "sodium": 138 + 6 * ramp,
    }
    return values[name]


_CS_NOTES = [
    (1, "Physician", "Admission note: 80 year old male admitted with pneumonia and congestive heart "
                     "failure. Hypoxemic on arrival; intubated and placed on mechanical ventilation."),
    (26, "Echo", "Echo report: left ventricular systolic dysfunction with ejection fraction 25-30%. "
                 "Findings consistent with congestive heart failure."),
    (49, "Radiology", "Portable chest radiograph: bilateral lower lobe opacities, worse on the right, "
                      "consistent with multifocal pneumonia."),
    (70, "Physician", "Progress note: spontaneous breathing trial initiated, patient extubated this morning."),
    (76, "Physician", "Event note: desaturation to 86% with bradypnea following extubation; patient "
                      "reintubated and ventilation resumed."),
    (101, "Nursing", "Nursing note: hypotension requiring initiation of vasopressors. Family updated."),
    (124, "Nursing", "Nursing note: worsening leukocytosis and rising lactate; patient remains critical."),
    (141, "Physician", "Care plan note: family meeting held, decision made for comfort measures only. "
                       "Vasopressors and ventilation discontinued."),
]


def _gen_case_study(buf: _Buffers):
    sid, hadm, stay = CASE_STUDY_SUBJECT_ID, CASE_STUDY_HADM_ID, CASE_STUDY_ICUSTAY_ID
    admit, death = _CS_ADMIT, _cs_hour(_CS_LOS_H)
    dob = (admit - int(80 * 365.25 * DAY)) // DAY * DAY
    buf.rows["patients"].append((sid, "M", dob, death))
    buf.rows["admissions"].append((hadm, sid, admit, death, death, "PNEUMONIA;CONGESTIVE HEART FAILURE"))
    buf.rows["icustays"].append((stay, hadm, sid, admit, death, "MICU"))
    buf.rows["transfers"].append((hadm, "MICU", admit, death))
    buf.rows["services"].append((hadm, admit, "MED"))
    buf.rows["diagnoses"].extend([(hadm, "486", 1), (hadm, "4280", 2), (hadm, "4019", 3)])
    for label, spans in (("ventilation", _CS_VENT), ("vasopressor", _CS_VASO)):
        for a, b in spans:
            buf.rows["interventions"].append((stay, label, _cs_hour(a), _cs_hour(b)))
    for k, category, text in _CS_NOTES:
        buf.rows["noteevents"].append((hadm, _cs_hour(k), category, text))

    charted = list(VITAL_DEFS) + ["oxygen_saturation"]  # pulse-ox charted at the bedside
    for k in range(_CS_LOS_H):
        vit = _case_study_vitals(k)
        for name in charted:
            dec, lo, hi = (VITAL_DEFS.get(name) or LAB_DEFS[name])[3:6]
            idx = _VITAL_IDX.get(name, _LAB_IDX.get(name))
            buf.add_chart(stay, [_cs_hour(k)], idx,
                          [float(np.clip(round(vit[name], dec), lo, hi))])
    # the pre-admission anomaly: an implausibly low WBC charted before arrival
    buf.add_chart(stay, [_cs_hour(-3)], _VITAL_IDX["white_blood_cell_count"], [2.1])

    for name in LAB_DEFS:
        dec, lo, hi = LAB_DEFS[name][3:6]
        for k in range(2, _CS_LOS_H, 8):
            buf.add_lab(hadm, [_cs_hour(k)], _LAB_IDX[name],
                        [float(np.clip(round(_case_study_lab(name, k), dec), lo, hi))])


# --- serialization ------------------------------------------------------------


def _ts_col(values):
    arr = np.array([np.datetime64("NaT", "s") if v is None else np.datetime64(int(v), "s") for v in values])
    return arr


def _write_csv(path, df: pd.DataFrame):
    df.to_csv(path, index=False, quoting=csv.QUOTE_NONNUMERIC, date_format="%Y-%m-%dT%H:%M:%S",
              lineterminator="\n")


def generate(config: SynthConfig, out_dir) -> str:
    """Emit the ten dataset CSVs into `out_dir`; byte-identical for equal configs."""
    out_dir = os.fspath(out_dir)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out_dir}: {exc}") from exc

    buf = _Buffers()
    for subject_id in range(1, config.n_patients + 1):
        if subject_id == CASE_STUDY_SUBJECT_ID:
            _gen_case_study(buf)
        else:
            _gen_patient(buf, config, subject_id)

    frames = {}
    frames["patients"] = pd.DataFrame(
        {
            "subject_id": pd.Series([r[0] for r in buf.rows["patients"]], dtype=np.int64),
            "gender": [r[1] for r in buf.rows["patients"]],
            "dob": _ts_col([r[2] for r in buf.rows["patients"]]),
            "dod": _ts_col([r[3] for r in buf.rows["patients"]]),
        }
    )
    frames["admissions"] = pd.DataFrame(
        {
            "hadm_id": pd.Series([r[0] for r in buf.rows["admissions"]], dtype=np.int64),
            "subject_id": pd.Series([r[1] for r in buf.rows["admissions"]], dtype=np.int64),
            "admittime": _ts_col([r[2] for r in buf.rows["admissions"]]),
            "dischtime": _ts_col([r[3] for r in buf.rows["admissions"]]),
            "deathtime": _ts_col([r[4] for r in buf.rows["admissions"]]),
            "admission_diagnosis": [r[5] for r in buf.rows["admissions"]],
        }
    )
    frames["icustays"] = pd.DataFrame(
        {
            "icustay_id": pd.Series([r[0] for r in buf.rows["icustays"]], dtype=np.int64),
            "hadm_id": pd.Series([r[1] for r in buf.rows["icustays"]], dtype=np.int64),
            "subject_id": pd.Series([r[2] for r in buf.rows["icustays"]], dtype=np.int64),
            "intime": _ts_col([r[3] for r in buf.rows["icustays"]]),
            "outtime": _ts_col([r[4] for r in buf.rows["icustays"]]),
            "first_careunit": [r[5] for r in buf.rows["icustays"]],
        }
    )

    if buf.chart["icustay_id"]:
        items = np.concatenate(buf.chart["item"])
        frames["chartevents"] = pd.DataFrame(
            {
                "icustay_id": np.concatenate(buf.chart["icustay_id"]),
                "charttime": np.concatenate(buf.chart["charttime"]).astype("datetime64[s]"),
                "item_name": _ITEM_NAMES[items],
                "value_num": np.concatenate(buf.chart["value"]),
                "unit": _ITEM_UNITS[items],
            }
        )
    else:
        frames["chartevents"] = pd.DataFrame(columns=TABLE_COLUMNS["chartevents"])

    if buf.lab["hadm_id"]:
        items = np.concatenate(buf.lab["item"])
        frames["labevents"] = pd.DataFrame(
            {
                "hadm_id": np.concatenate(buf.lab["hadm_id"]),
                "charttime": np.concatenate(buf.lab["charttime"]).astype("datetime64[s]"),
                "item_name": _ITEM_NAMES[items],
                "value_num": np.concatenate(buf.lab["value"]),
                "unit": _ITEM_UNITS[items],
                "fluid": _ITEM_FLUIDS[items],
            }
        )
    else:
        frames["labevents"] = pd.DataFrame(columns=TABLE_COLUMNS["labevents"])

    frames["noteevents"] = pd.DataFrame(
        {
            "hadm_id": pd.Series([r[0] for r in buf.rows["noteevents"]], dtype=np.int64),
            "charttime": _ts_col([r[1] for r in buf.rows["noteevents"]]),
            "category": [r[2] for r in buf.rows["noteevents"]],
            "text": [r[3] for r in buf.rows["noteevents"]],
        }
    )
    frames["interventions"] = pd.DataFrame(
        {
            "icustay_id": pd.Series([r[0] for r in buf.rows["interventions"]], dtype=np.int64),
            "label": [r[1] for r in buf.rows["interventions"]],
            "starttime": _ts_col([r[2] for r in buf.rows["interventions"]]),
            "endtime": _ts_col([r[3] for r in buf.rows["interventions"]]),
        }
    )
    frames["transfers"] = pd.DataFrame(
        {
            "hadm_id": pd.Series([r[0] for r in buf.rows["transfers"]], dtype=np.int64),
            "careunit": [r[1] for r in buf.rows["transfers"]],
            "intime": _ts_col([r[2] for r in buf.rows["transfers"]]),
            "outtime": _ts_col([r[3] for r in buf.rows["transfers"]]),
        }
    )
    frames["services"] = pd.DataFrame(
        {
            "hadm_id": pd.Series([r[0] for r in buf.rows["services"]], dtype=np.int64),
            "transfertime": _ts_col([r[1] for r in buf.rows["services"]]),
            "service": [r[2] for r in buf.rows["services"]],
        }
    )
    frames["diagnoses"] = pd.DataFrame(
        {
            "hadm_id": pd.Series([r[0] for r in buf.rows["diagnoses"]], dtype=np.int64),
            "icd9_code": [r[1] for r in buf.rows["diagnoses"]],
            "seq_num": pd.Series([r[2] for r in buf.rows["diagnoses"]], dtype=np.int64),
        }
    )

    for name in TABLE_COLUMNS:
        df = frames[name]
        if list(df.columns) != TABLE_COLUMNS[name]:
            df = df.reindex(columns=TABLE_COLUMNS[name])
        try:
            _write_csv(os.path.join(out_dir, name + ".csv"), df)
        except OSError as exc:
            raise IoError(f"cannot write {name}.csv: {exc}") from exc
    return out_dir
