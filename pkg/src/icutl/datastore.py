"""Immutable, indexed in-memory store for MIMIC-shaped CSV datasets.

Ten CSV tables are read once from a dataset directory, validated against the
schema and every referential invariant, and held column-wise (numpy arrays for
the two high-volume event tables). All query methods are read-only, so a store
can be shared freely across threads.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from datetime import datetime
from typing import Optional

import numpy as np
import pandas as pd

from .errors import (
    MissingTable,
    ParseError,
    ReferentialViolation,
    SchemaMismatch,
    UnknownAdmission,
)

HOUR = 3600
SIX_HOURS = 6 * HOUR

TABLE_COLUMNS = {
    "patients": ["subject_id", "gender", "dob", "dod"],
    "admissions": ["hadm_id", "subject_id", "admittime", "dischtime", "deathtime", "admission_diagnosis"],
    "icustays": ["icustay_id", "hadm_id", "subject_id", "intime", "outtime", "first_careunit"],
    "chartevents": ["icustay_id", "charttime", "item_name", "value_num", "unit"],
    "labevents": ["hadm_id", "charttime", "item_name", "value_num", "unit", "fluid"],
    "noteevents": ["hadm_id", "charttime", "category", "text"],
    "interventions": ["icustay_id", "label", "starttime", "endtime"],
    "transfers": ["hadm_id", "careunit", "intime", "outtime"],
    "services": ["hadm_id", "transfertime", "service"],
    "diagnoses": ["hadm_id", "icd9_code", "seq_num"],
}

EVENT_KINDS = ("chart", "lab", "note", "interval")


def ts_to_iso(ts: int) -> str:
    """Epoch seconds -> 'YYYY-MM-DDTHH:MM:SS' (naive local clock)."""
    return str(np.datetime64(int(ts), "s"))


def iso_to_ts(text: str) -> int:
    return int(np.datetime64(text, "s").astype(np.int64))


@dataclass(frozen=True)
class Patient:
    subject_id: int
    gender: str
    dob: int
    dod: Optional[int]


@dataclass(frozen=True)
class Admission:
    hadm_id: int
    subject_id: int
    admittime: int
    dischtime: int
    deathtime: Optional[int]
    admission_diagnosis: str


@dataclass(frozen=True)
class IcuStay:
    icustay_id: int
    hadm_id: int
    subject_id: int
    intime: int
    outtime: int
    first_careunit: str


@dataclass(frozen=True)
class ChartEvent:
    icustay_id: int
    charttime: int
    item_name: str
    value_num: float
    unit: str


@dataclass(frozen=True)
class LabEvent:
    hadm_id: int
    charttime: int
    item_name: str
    value_num: float
    unit: str
    fluid: str


@dataclass(frozen=True)
class NoteEvent:
    hadm_id: int
    charttime: int
    category: str
    text: str


@dataclass(frozen=True)
class IntervalEvent:
    scope_id: int
    kind: str  # intervention | careunit | service
    label: str
    starttime: int
    endtime: int


@dataclass(frozen=True)
class DiagnosisRecord:
    hadm_id: int
    icd9_code: str
    seq_num: int


class _EventColumns:
    """Event rows for one table, sorted by (key, time, source row)."""

    def __init__(self, key, time, values, extras, n_rows):
        order = np.lexsort((np.arange(len(key)), time, key))
        self.key = key[order]
        self.time = time[order]
        self.values = values[order] if values is not None else None
        self.extras = {name: col[order] for name, col in extras.items()}
        self.src = order.astype(np.int64)
        self.n_rows = n_rows
        self.ranges = {}
        if len(self.key):
            uniq, starts = np.unique(self.key, return_index=True)
            bounds = np.append(starts, len(self.key))
            self.ranges = {int(k): (int(lo), int(hi)) for k, lo, hi in zip(uniq, bounds[:-1], bounds[1:])}

    def slice_for(self, key: int):
        lo, hi = self.ranges.get(int(key), (0, 0))
        return slice(lo, hi)


def _read_table(dataset_dir, name):
    path = os.path.join(dataset_dir, name + ".csv")
    if not os.path.isfile(path):
        raise MissingTable(name + ".csv")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise SchemaMismatch(name, "<missing header>") from None
    expected = TABLE_COLUMNS[name]
    got = list(df.columns)
    if got != expected:
        for col in expected:
            if col not in got:
                raise SchemaMismatch(name, col)
        for col in got:
            if col not in expected:
                raise SchemaMismatch(name, col)
        raise SchemaMismatch(name, ",".join(got))
    return df


def _parse_int(df, table, column):
    out = pd.to_numeric(df[column], errors="coerce")
    bad = out.isna() | (np.floor(out.fillna(0)) != out.fillna(0))
    if bad.any():
        line = int(np.argmax(bad.to_numpy())) + 2  # +1 header, +1 one-based
        raise ParseError(table, line, f"{column}={df[column].iloc[line - 2]!r}")
    return out.to_numpy(dtype=np.int64)


def _parse_float(df, table, column):
    out = pd.to_numeric(df[column], errors="coerce")
    bad = out.isna().to_numpy()
    if bad.any():
        line = int(np.argmax(bad)) + 2
        raise ParseError(table, line, f"{column}={df[column].iloc[line - 2]!r}")
    return out.to_numpy(dtype=np.float64)


def _parse_time(df, table, column, optional=False):
    raw = df[column]
    parsed = pd.to_datetime(raw, format="%Y-%m-%dT%H:%M:%S", errors="coerce")
    empty = (raw == "").to_numpy()
    bad = parsed.isna().to_numpy() & ~empty
    if bad.any():
        line = int(np.argmax(bad)) + 2
        raise ParseError(table, line, f"{column}={raw.iloc[line - 2]!r}")
    if not optional and empty.any():
        line = int(np.argmax(empty)) + 2
        raise ParseError(table, line, f"{column} is empty")
    secs = parsed.values.astype("datetime64[s]").astype(np.int64)
    if optional:
        return secs, empty
    return secs


def _check_nonempty(df, table, column):
    empty = (df[column] == "").to_numpy()
    if empty.any():
        row = int(np.argmax(empty))
        raise ReferentialViolation(table, row, f"{column} must be nonempty")


class Datastore:
    """Read-only image of one ingested dataset. Build via :func:`ingest`."""

    def __init__(self):
        self.patients: dict[int, Patient] = {}
        self.admissions: dict[int, Admission] = {}
        self.icustays: dict[int, IcuStay] = {}
        self.diagnoses: dict[int, list[DiagnosisRecord]] = {}
        self._adm_by_subject: dict[int, list[int]] = {}
        self._stays_by_hadm: dict[int, list[int]] = {}
        self._chart: Optional[_EventColumns] = None
        self._lab: Optional[_EventColumns] = None
        self._notes_by_hadm: dict[int, list[NoteEvent]] = {}
        self._intervals_by_hadm: dict[int, list[IntervalEvent]] = {}
        self._item_names: list[str] = []
        self._item_codes: dict[str, int] = {}
        self._counts: dict[str, int] = {}

    # -- basic queries ---------------------------------------------------

    def table_counts(self) -> dict[str, int]:
        return dict(self._counts)

    def item_names(self) -> list[str]:
        return list(self._item_names)

    def admissions_for_subject(self, subject_id: int) -> list[Admission]:
        """Admissions of one subject, ascending by admittime (empty if unknown)."""
        return [self.admissions[h] for h in self._adm_by_subject.get(int(subject_id), [])]

    def stays_for_admission(self, hadm_id: int) -> list[IcuStay]:
        if int(hadm_id) not in self.admissions:
            raise UnknownAdmission(hadm_id)
        return [self.icustays[i] for i in self._stays_by_hadm.get(int(hadm_id), [])]

    def first_icu_stay(self, subject_id: int) -> Optional[IcuStay]:
        """The subject's earliest ICU stay across all admissions, if any."""
        best = None
        for adm in self.admissions_for_subject(subject_id):
            for stay in self.stays_for_admission(adm.hadm_id):
                if best is None or (stay.intime, stay.icustay_id) < (best.intime, best.icustay_id):
                    best = stay
        return best

    def events_for_admission(self, hadm_id: int, kind: str) -> list:
        """All events of `kind` linked to the admission, ascending by time.

        Ties are broken by source row order. Chart events are resolved through
        the admission's ICU stays; `kind="interval"` covers interventions,
        careunit transfers, and services together (each carries a `.kind`).
        """
        hadm_id = int(hadm_id)
        if hadm_id not in self.admissions:
            raise UnknownAdmission(hadm_id)
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind: {kind!r}")
        if kind == "chart":
            rows = []
            for stay_id in self._stays_by_hadm.get(hadm_id, []):
                sl = self._chart.slice_for(stay_id)
                for i in range(sl.start, sl.stop):
                    ev = ChartEvent(
                        icustay_id=int(self._chart.key[i]),
                        charttime=int(self._chart.time[i]),
                        item_name=self._item_names[self._chart.extras["item"][i]],
                        value_num=float(self._chart.values[i]),
                        unit=self._chart.extras["unit"][i],
                    )
                    rows.append((ev.charttime, int(self._chart.src[i]), ev))
            rows.sort(key=lambda t: t[:2])
            return [ev for _, _, ev in rows]
        if kind == "lab":
            sl = self._lab.slice_for(hadm_id)
            return [
                LabEvent(
                    hadm_id=hadm_id,
                    charttime=int(self._lab.time[i]),
                    item_name=self._item_names[self._lab.extras["item"][i]],
                    value_num=float(self._lab.values[i]),
                    unit=self._lab.extras["unit"][i],
                    fluid=self._lab.extras["fluid"][i],
                )
                for i in range(sl.start, sl.stop)
            ]
        if kind == "note":
            return list(self._notes_by_hadm.get(hadm_id, []))
        return list(self._intervals_by_hadm.get(hadm_id, []))

    # -- fast internal views (used by features/timeline) ------------------

    def item_code(self, item_name: str) -> Optional[int]:
        return self._item_codes.get(item_name)

    def chart_arrays(self, icustay_id: int):
        """(item_codes, times, values) for one stay, time-sorted views."""
        sl = self._chart.slice_for(icustay_id)
        return self._chart.extras["item"][sl], self._chart.time[sl], self._chart.values[sl]

    def chart_units(self, icustay_id: int):
        sl = self._chart.slice_for(icustay_id)
        return self._chart.extras["unit"][sl]

    def lab_arrays(self, hadm_id: int):
        sl = self._lab.slice_for(hadm_id)
        return self._lab.extras["item"][sl], self._lab.time[sl], self._lab.values[sl]

    def lab_units_fluids(self, hadm_id: int):
        sl = self._lab.slice_for(hadm_id)
        return self._lab.extras["unit"][sl], self._lab.extras["fluid"][sl]


def ingest(dataset_dir) -> Datastore:
    """Parse and validate the ten dataset CSVs into an immutable Datastore.

    Fail-fast: the first referential or invariant violation aborts ingestion;
    a research dataset with silently dropped rows is worse than no dataset.
    """
    dataset_dir = os.fspath(dataset_dir)
    store = Datastore()
    frames = {name: _read_table(dataset_dir, name) for name in TABLE_COLUMNS}
    store._counts = {name: len(df) for name, df in frames.items()}

    # patients
    df = frames["patients"]
    subject_ids = _parse_int(df, "patients", "subject_id")
    dob = _parse_time(df, "patients", "dob")
    dod, dod_missing = _parse_time(df, "patients", "dod", optional=True)
    genders = df["gender"].to_numpy()
    for row in range(len(df)):
        sid = int(subject_ids[row])
        if genders[row] not in ("M", "F"):
            raise ParseError("patients", row + 2, f"gender={genders[row]!r}")
        if sid in store.patients:
            raise ReferentialViolation("patients", row, f"duplicate subject_id {sid}")
        d = None if dod_missing[row] else int(dod[row])
        if d is not None and d < dob[row]:
            raise ReferentialViolation("patients", row, "dod before dob")
        store.patients[sid] = Patient(sid, str(genders[row]), int(dob[row]), d)

    # admissions
    df = frames["admissions"]
    hadm_ids = _parse_int(df, "admissions", "hadm_id")
    subj = _parse_int(df, "admissions", "subject_id")
    admit = _parse_time(df, "admissions", "admittime")
    disch = _parse_time(df, "admissions", "dischtime")
    death, death_missing = _parse_time(df, "admissions", "deathtime", optional=True)
    diag = df["admission_diagnosis"].to_numpy()
    for row in range(len(df)):
        h, s = int(hadm_ids[row]), int(subj[row])
        if h in store.admissions:
            raise ReferentialViolation("admissions", row, f"duplicate hadm_id {h}")
        if s not in store.patients:
            raise ReferentialViolation("admissions", row, f"subject_id {s} not in patients")
        if not disch[row] > admit[row]:
            raise ReferentialViolation("admissions", row, "dischtime not after admittime")
        dt = None if death_missing[row] else int(death[row])
        if dt is not None and not (admit[row] <= dt <= disch[row]):
            raise ReferentialViolation("admissions", row, "deathtime outside [admittime, dischtime]")
        store.admissions[h] = Admission(h, s, int(admit[row]), int(disch[row]), dt, str(diag[row]))
        store._adm_by_subject.setdefault(s, []).append(h)
    for s, hs in store._adm_by_subject.items():
        hs.sort(key=lambda h: (store.admissions[h].admittime, h))

    # icustays
    df = frames["icustays"]
    stay_ids = _parse_int(df, "icustays", "icustay_id")
    hadm = _parse_int(df, "icustays", "hadm_id")
    subj = _parse_int(df, "icustays", "subject_id")
    intime = _parse_time(df, "icustays", "intime")
    outtime = _parse_time(df, "icustays", "outtime")
    units = df["first_careunit"].to_numpy()
    for row in range(len(df)):
        i, h, s = int(stay_ids[row]), int(hadm[row]), int(subj[row])
        if i in store.icustays:
            raise ReferentialViolation("icustays", row, f"duplicate icustay_id {i}")
        adm = store.admissions.get(h)
        if adm is None:
            raise ReferentialViolation("icustays", row, f"hadm_id {h} not in admissions")
        if s != adm.subject_id:
            raise ReferentialViolation("icustays", row, "subject_id does not match admission")
        if not outtime[row] > intime[row]:
            raise ReferentialViolation("icustays", row, "outtime not after intime")
        if intime[row] < adm.admittime or outtime[row] > adm.dischtime:
            raise ReferentialViolation("icustays", row, "stay outside admission interval")
        store.icustays[i] = IcuStay(i, h, s, int(intime[row]), int(outtime[row]), str(units[row]))
        store._stays_by_hadm.setdefault(h, []).append(i)
    for h, stays in store._stays_by_hadm.items():
        stays.sort(key=lambda i: (store.icustays[i].intime, i))

    item_codes: dict[str, int] = {}

    def code_of(name: str) -> int:
        if name not in item_codes:
            item_codes[name] = len(item_codes)
            store._item_names.append(name)
        return item_codes[name]

    # chartevents (high volume: validated vectorized, stored columnar)
    df = frames["chartevents"]
    ce_stay = _parse_int(df, "chartevents", "icustay_id")
    ce_time = _parse_time(df, "chartevents", "charttime")
    ce_val = _parse_float(df, "chartevents", "value_num")
    if len(df) and not np.isfinite(ce_val).all():
        row = int(np.argmax(~np.isfinite(ce_val)))
        raise ReferentialViolation("chartevents", row, "value_num not finite")
    ce_items = np.array([code_of(n) for n in df["item_name"]], dtype=np.int32)
    lo = np.empty(len(df), dtype=np.int64)
    hi = np.empty(len(df), dtype=np.int64)
    for row in range(len(df)):
        stay = store.icustays.get(int(ce_stay[row]))
        if stay is None:
            raise ReferentialViolation("chartevents", row, f"icustay_id {int(ce_stay[row])} not in icustays")
        adm = store.admissions[stay.hadm_id]
        # pre-ICU charting tolerated up to 6h before intime; nothing after discharge
        lo[row] = stay.intime - SIX_HOURS
        hi[row] = min(stay.outtime + SIX_HOURS, adm.dischtime)
    if len(df):
        bad = (ce_time < lo) | (ce_time > hi)
        if bad.any():
            row = int(np.argmax(bad))
            raise ReferentialViolation("chartevents", row, "charttime outside stay window (±6h slack)")
    store._chart = _EventColumns(
        ce_stay, ce_time, ce_val, {"item": ce_items, "unit": df["unit"].to_numpy()}, len(df)
    )

    # labevents
    df = frames["labevents"]
    le_hadm = _parse_int(df, "labevents", "hadm_id")
    le_time = _parse_time(df, "labevents", "charttime")
    le_val = _parse_float(df, "labevents", "value_num")
    if len(df) and not np.isfinite(le_val).all():
        row = int(np.argmax(~np.isfinite(le_val)))
        raise ReferentialViolation("labevents", row, "value_num not finite")
    _check_nonempty(df, "labevents", "fluid")
    le_items = np.array([code_of(n) for n in df["item_name"]], dtype=np.int32)
    for row in range(len(df)):
        adm = store.admissions.get(int(le_hadm[row]))
        if adm is None:
            raise ReferentialViolation("labevents", row, f"hadm_id {int(le_hadm[row])} not in admissions")
        if not (adm.admittime - SIX_HOURS <= le_time[row] <= adm.dischtime):
            raise ReferentialViolation("labevents", row, "charttime outside admission window")
    store._lab = _EventColumns(
        le_hadm, le_time, le_val,
        {"item": le_items, "unit": df["unit"].to_numpy(), "fluid": df["fluid"].to_numpy()},
        len(df),
    )

    # noteevents
    df = frames["noteevents"]
    ne_hadm = _parse_int(df, "noteevents", "hadm_id")
    ne_time = _parse_time(df, "noteevents", "charttime")
    _check_nonempty(df, "noteevents", "text")
    notes_tmp: dict[int, list[NoteEvent]] = {}
    cats = df["category"].to_numpy()
    texts = df["text"].to_numpy()
    for row in range(len(df)):
        adm = store.admissions.get(int(ne_hadm[row]))
        if adm is None:
            raise ReferentialViolation("noteevents", row, f"hadm_id {int(ne_hadm[row])} not in admissions")
        if not (adm.admittime - SIX_HOURS <= ne_time[row] <= adm.dischtime):
            raise ReferentialViolation("noteevents", row, "charttime outside admission window")
        notes_tmp.setdefault(int(ne_hadm[row]), []).append(
            NoteEvent(int(ne_hadm[row]), int(ne_time[row]), str(cats[row]), str(texts[row]))
        )
    for h, lst in notes_tmp.items():
        lst.sort(key=lambda e: e.charttime)
        store._notes_by_hadm[h] = lst

    # interval events: interventions (stay-scoped) + transfers + services (hadm-scoped)
    intervals_tmp: dict[int, list[tuple]] = {}

    def add_interval(hadm_id, ev):
        intervals_tmp.setdefault(hadm_id, []).append(ev)

    df = frames["interventions"]
    iv_stay = _parse_int(df, "interventions", "icustay_id")
    iv_start = _parse_time(df, "interventions", "starttime")
    iv_end = _parse_time(df, "interventions", "endtime")
    labels = df["label"].to_numpy()
    for row in range(len(df)):
        stay = store.icustays.get(int(iv_stay[row]))
        if stay is None:
            raise ReferentialViolation("interventions", row, f"icustay_id {int(iv_stay[row])} not in icustays")
        if iv_end[row] < iv_start[row]:
            raise ReferentialViolation("interventions", row, "endtime before starttime")
        adm = store.admissions[stay.hadm_id]
        if iv_start[row] < adm.admittime - SIX_HOURS or iv_end[row] > adm.dischtime:
            raise ReferentialViolation("interventions", row, "interval outside admission window")
        add_interval(
            stay.hadm_id,
            IntervalEvent(int(iv_stay[row]), "intervention", str(labels[row]), int(iv_start[row]), int(iv_end[row])),
        )

    df = frames["transfers"]
    tr_hadm = _parse_int(df, "transfers", "hadm_id")
    tr_in = _parse_time(df, "transfers", "intime")
    tr_out = _parse_time(df, "transfers", "outtime")
    units = df["careunit"].to_numpy()
    for row in range(len(df)):
        adm = store.admissions.get(int(tr_hadm[row]))
        if adm is None:
            raise ReferentialViolation("transfers", row, f"hadm_id {int(tr_hadm[row])} not in admissions")
        if tr_out[row] < tr_in[row]:
            raise ReferentialViolation("transfers", row, "outtime before intime")
        if tr_in[row] < adm.admittime - SIX_HOURS or tr_out[row] > adm.dischtime:
            raise ReferentialViolation("transfers", row, "interval outside admission window")
        add_interval(
            int(tr_hadm[row]),
            IntervalEvent(int(tr_hadm[row]), "careunit", str(units[row]), int(tr_in[row]), int(tr_out[row])),
        )

    # each services row becomes one interval: transfertime -> next transfer (or discharge)
    df = frames["services"]
    sv_hadm = _parse_int(df, "services", "hadm_id")
    sv_time = _parse_time(df, "services", "transfertime")
    svc = df["service"].to_numpy()
    by_hadm: dict[int, list[tuple[int, int]]] = {}
    for row in range(len(df)):
        adm = store.admissions.get(int(sv_hadm[row]))
        if adm is None:
            raise ReferentialViolation("services", row, f"hadm_id {int(sv_hadm[row])} not in admissions")
        if not (adm.admittime - SIX_HOURS <= sv_time[row] <= adm.dischtime):
            raise ReferentialViolation("services", row, "transfertime outside admission window")
        by_hadm.setdefault(int(sv_hadm[row]), []).append((int(sv_time[row]), row))
    for h, entries in by_hadm.items():
        entries.sort()
        disch = store.admissions[h].dischtime
        for (start, row), nxt in zip(entries, entries[1:] + [(disch, -1)]):
            add_interval(h, IntervalEvent(h, "service", str(svc[row]), start, max(nxt[0], start)))

    for h, lst in intervals_tmp.items():
        lst.sort(key=lambda e: e.starttime)
        store._intervals_by_hadm[h] = lst

    # diagnoses
    df = frames["diagnoses"]
    dg_hadm = _parse_int(df, "diagnoses", "hadm_id")
    dg_seq = _parse_int(df, "diagnoses", "seq_num")
    codes = df["icd9_code"].to_numpy()
    seen = set()
    for row in range(len(df)):
        h, q = int(dg_hadm[row]), int(dg_seq[row])
        if h not in store.admissions:
            raise ReferentialViolation("diagnoses", row, f"hadm_id {h} not in admissions")
        if q < 1:
            raise ReferentialViolation("diagnoses", row, "seq_num must be positive")
        if (h, q) in seen:
            raise ReferentialViolation("diagnoses", row, f"duplicate (hadm_id, seq_num) ({h}, {q})")
        seen.add((h, q))
        store.diagnoses.setdefault(h, []).append(DiagnosisRecord(h, str(codes[row]), q))
    for h, lst in store.diagnoses.items():
        lst.sort(key=lambda d: d.seq_num)

    store._item_codes = item_codes
    return store


def primary_diagnosis(store: Datastore, hadm_id: int) -> Optional[str]:
    for d in store.diagnoses.get(int(hadm_id), []):
        if d.seq_num == 1:
            return d.icd9_code
    return None
