"""Horizon-indexed cohorts and cumulative 12-hour-window feature matrices.

For a horizon of t hours, a stay contributes one row built from the first
t hours of its first ICU stay: per 12-hour window, the mean of each of the
29 tracked physiological measurements, windows concatenated in time order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohort import age_at_admission
from .datastore import HOUR, Datastore
from .errors import EmptyInput, InvalidHorizon, StayTooShort, UnknownStay

WINDOW_HOURS = 12
HORIZONS = tuple(range(12, 169, 12))  # 12, 24, ..., 168
OUTCOME_GAP_HOURS = 12
MIN_AGE_YEARS = 15

# Order is fixed: ten bedside measurements, then nineteen lab measurements.
FEATURE_NAMES = (
    "diastolic_blood_pressure",
    "systolic_blood_pressure",
    "mean_blood_pressure",
    "gcs_total",
    "heart_rate",
    "respiratory_rate",
    "temperature",
    "weight",
    "white_blood_cell_count",
    "ph",
    "anion_gap",
    "bicarbonate",
    "blood_urea_nitrogen",
    "chloride",
    "creatinine",
    "fraction_inspired_oxygen",
    "glucose",
    "hematocrit",
    "hemoglobin",
    "inr",
    "lactate",
    "magnesium",
    "oxygen_saturation",
    "partial_thromboplastin_time",
    "phosphate",
    "platelets",
    "potassium",
    "prothrombin_time",
    "sodium",
)
N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True)
class FeatureSpec:
    names: tuple = FEATURE_NAMES

    def __post_init__(self):
        if len(self.names) != N_FEATURES:
            raise ValueError(f"feature spec must list exactly {N_FEATURES} names")


def feature_dim(t_hours: int) -> int:
    return N_FEATURES * (t_hours // WINDOW_HOURS)


def _check_horizon(t_hours: int):
    if t_hours not in HORIZONS:
        raise InvalidHorizon(f"t_hours must be one of {list(HORIZONS)}, got {t_hours}")


def build_cohort(store: Datastore, t_hours: int) -> list[tuple[int, int]]:
    """(icustay_id, label) pairs eligible at horizon t, ordered by icustay_id.

    Eligibility: the patient's first ICU stay, age at admission > 15, stay at
    least t hours long, and neither death nor hospital discharge before
    t + 12 hours after ICU intime. Label 1 marks in-hospital death (which,
    given eligibility, occurs at or after the 12-hour gap).
    """
    _check_horizon(t_hours)
    cutoff_s = (t_hours + OUTCOME_GAP_HOURS) * HOUR
    rows = []
    for subject_id in store.patients:
        stay = store.first_icu_stay(subject_id)
        if stay is None:
            continue
        adm = store.admissions[stay.hadm_id]
        patient = store.patients[subject_id]
        if age_at_admission(patient.dob, adm.admittime) <= MIN_AGE_YEARS:
            continue
        if stay.outtime - stay.intime < t_hours * HOUR:
            continue
        horizon_end = stay.intime + cutoff_s
        if adm.deathtime is not None and adm.deathtime < horizon_end:
            continue  # death inside the prediction gap
        if adm.deathtime is None and adm.dischtime < horizon_end:
            continue  # discharged alive before the outcome window opens
        label = 1 if adm.deathtime is not None else 0
        rows.append((stay.icustay_id, label))
    rows.sort()
    return rows


def extract_features(store: Datastore, icustay_id: int, t_hours: int,
                     spec: FeatureSpec = FeatureSpec()) -> np.ndarray:
    """Raw feature vector for one stay: window-major means with NaN for missing.

    Each window [12k, 12(k+1)) hours from ICU intime yields one mean per
    measurement; bedside (chart) values win over lab values when both exist
    in a window. Length is 29 * t/12.
    """
    _check_horizon(t_hours)
    stay = store.icustays.get(int(icustay_id))
    if stay is None:
        raise UnknownStay(icustay_id)
    if stay.outtime - stay.intime < t_hours * HOUR:
        raise StayTooShort(f"stay {icustay_id} is shorter than {t_hours}h")
    n_windows = t_hours // WINDOW_HOURS

    codes = np.full(N_FEATURES, -1, dtype=np.int64)
    for j, name in enumerate(spec.names):
        code = store.item_code(name)
        codes[j] = -1 if code is None else code

    def window_means(items, times, values):
        sums = np.zeros((N_FEATURES, n_windows))
        counts = np.zeros((N_FEATURES, n_windows), dtype=np.int64)
        if len(times) == 0:
            return sums, counts
        rel = times - stay.intime
        win = rel // (WINDOW_HOURS * HOUR)
        ok = (rel >= 0) & (win < n_windows)
        feat = np.full(len(items), -1, dtype=np.int64)
        for j in range(N_FEATURES):
            if codes[j] >= 0:
                feat[items == codes[j]] = j
        ok &= feat >= 0
        np.add.at(sums, (feat[ok], win[ok]), values[ok])
        np.add.at(counts, (feat[ok], win[ok]), 1)
        return sums, counts

    c_sums, c_counts = window_means(*store.chart_arrays(icustay_id))
    l_sums, l_counts = window_means(*store.lab_arrays(stay.hadm_id))

    out = np.full((N_FEATURES, n_windows), np.nan)
    use_chart = c_counts > 0
    use_lab = ~use_chart & (l_counts > 0)
    out[use_chart] = c_sums[use_chart] / c_counts[use_chart]
    out[use_lab] = l_sums[use_lab] / l_counts[use_lab]
    return out.T.reshape(-1)  # window-major


def impute_and_standardize(vectors, train_stats=None):
    """Fill missing entries, then z-score columns.

    A missing window inherits the most recent earlier window of the same
    measurement (forward fill); windows still missing take the training-set
    column mean. Columns are then centered/scaled with the training mean and
    standard deviation; near-constant columns (std < 1e-12) are zeroed.
    Passing `train_stats` (means, stds) reuses a training fit, e.g. when
    standardizing test or serving rows.
    """
    X = np.asarray(vectors, dtype=np.float64)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[None, :]
    if X.size == 0:
        raise EmptyInput("no feature vectors supplied")
    d = X.shape[1]
    if d % N_FEATURES != 0:
        raise ValueError(f"vector length {d} is not a multiple of {N_FEATURES}")
    n_windows = d // N_FEATURES

    X = X.copy().reshape(-1, n_windows, N_FEATURES)
    for w in range(1, n_windows):
        missing = np.isnan(X[:, w, :])
        X[:, w, :][missing] = X[:, w - 1, :][missing]
    X = X.reshape(-1, d)

    if train_stats is None:
        observed = ~np.isnan(X)
        counts = observed.sum(axis=0)
        sums = np.where(observed, X, 0.0).sum(axis=0)
        means = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    else:
        means, stds = (np.asarray(a, dtype=np.float64) for a in train_stats)
        if means.shape[0] != d:
            raise ValueError(f"train_stats length {means.shape[0]} != vector length {d}")
    missing = np.isnan(X)
    X[missing] = np.broadcast_to(means, X.shape)[missing]

    if train_stats is None:
        stds = X.std(axis=0)

    degenerate = stds < 1e-12
    Z = (X - means) / np.where(degenerate, 1.0, stds)
    Z[:, degenerate] = 0.0
    if squeeze:
        Z = Z[0]
    return Z, (means, stds)


def horizon_matrices(store: Datastore, horizons=HORIZONS, spec: FeatureSpec = FeatureSpec()):
    """Raw (NaN-marked) cohort matrices for several horizons at once.

    Eligibility is nested (a stay in the cohort at t is in every cohort below
    t), and vectors are window-major, so each stay is extracted once at its
    largest eligible horizon and shorter vectors are prefixes of that one,
    bitwise equal to a direct extraction.
    """
    horizons = sorted(horizons)
    cohorts = {t: build_cohort(store, t) for t in horizons}
    t_max: dict[int, int] = {}
    for t in horizons:
        for stay_id, _label in cohorts[t]:
            t_max[stay_id] = max(t, t_max.get(stay_id, 0))
    cache = {sid: extract_features(store, sid, t, spec) for sid, t in t_max.items()}
    out = {}
    for t in horizons:
        rows = cohorts[t]
        ids = np.array([r[0] for r in rows], dtype=np.int64)
        y = np.array([r[1] for r in rows], dtype=np.int64)
        d = feature_dim(t)
        X = np.stack([cache[sid][:d] for sid in ids]) if len(rows) else np.zeros((0, d))
        out[t] = (ids, X, y)
    return out


def cohort_matrix(store: Datastore, t_hours: int, spec: FeatureSpec = FeatureSpec()):
    """Raw (NaN-marked) matrix plus ids and labels for a horizon's cohort."""
    rows = build_cohort(store, t_hours)
    ids = np.array([r[0] for r in rows], dtype=np.int64)
    y = np.array([r[1] for r in rows], dtype=np.int64)
    if len(rows) == 0:
        return ids, np.zeros((0, feature_dim(t_hours))), y
    X = np.stack([extract_features(store, sid, t_hours, spec) for sid in ids])
    return ids, X, y
