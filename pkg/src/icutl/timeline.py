"""Per-admission timeline documents: every event class integrated into one
renderable structure, serialized as canonical JSON for the web client."""

from __future__ import annotations

from dataclasses import dataclass, field

from .cohort import age_at_admission
from .datastore import Datastore, IntervalEvent, ts_to_iso
from .errors import UnknownAdmission
from .jsonutil import canonical_dumps

# Built-in category table for the series-selection panel. A measurement may sit
# in several categories (oxygen saturation is both a vital and respiratory);
# anything unlisted falls back to "Other".
CATEGORY_ORDER = ("Blood Gases", "Chemistry", "Hematology", "Vitals", "Respiratory", "Other")
SERIES_CATEGORIES = {
    "ph": ("Blood Gases",),
    "lactate": ("Blood Gases",),
    "anion_gap": ("Chemistry",),
    "bicarbonate": ("Chemistry",),
    "blood_urea_nitrogen": ("Chemistry",),
    "chloride": ("Chemistry",),
    "creatinine": ("Chemistry",),
    "glucose": ("Chemistry",),
    "magnesium": ("Chemistry",),
    "phosphate": ("Chemistry",),
    "potassium": ("Chemistry",),
    "sodium": ("Chemistry",),
    "white_blood_cell_count": ("Hematology",),
    "hematocrit": ("Hematology",),
    "hemoglobin": ("Hematology",),
    "inr": ("Hematology",),
    "partial_thromboplastin_time": ("Hematology",),
    "platelets": ("Hematology",),
    "prothrombin_time": ("Hematology",),
    "heart_rate": ("Vitals",),
    "respiratory_rate": ("Vitals",),
    "temperature": ("Vitals",),
    "weight": ("Vitals",),
    "gcs_total": ("Vitals",),
    "diastolic_blood_pressure": ("Vitals",),
    "systolic_blood_pressure": ("Vitals",),
    "mean_blood_pressure": ("Vitals",),
    "oxygen_saturation": ("Vitals", "Respiratory"),
    "fraction_inspired_oxygen": ("Respiratory",),
}


def categories_for(item_name: str) -> tuple:
    return SERIES_CATEGORIES.get(item_name, ("Other",))


def series_catalog(store: Datastore) -> list[tuple[str, list[str]]]:
    """(category, sorted series names) pairs for every measurement in the store."""
    by_category: dict[str, list[str]] = {}
    for name in store.item_names():
        for cat in categories_for(name):
            by_category.setdefault(cat, []).append(name)
    out = []
    for cat in CATEGORY_ORDER:
        if cat in by_category:
            out.append((cat, sorted(by_category[cat])))
    return out


@dataclass
class ValueSeries:
    name: str
    categories: tuple
    unit: str
    points: list  # (time, value, tooltip dict[str, str])


@dataclass
class RiskSeries:
    model_id: str
    points: list  # (time, probability)


@dataclass
class TimelineDocument:
    hadm_id: int
    subject_attributes: dict
    point_events: list  # (time, label)
    interval_events: list  # IntervalEvent
    note_events: list  # (time, category, text)
    series: list = field(default_factory=list)
    risk_series: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "hadm_id": self.hadm_id,
            "subject_attributes": dict(self.subject_attributes),
            "point_events": [{"time": ts_to_iso(t), "label": lab} for t, lab in self.point_events],
            "interval_events": [
                {
                    "scope_id": ev.scope_id,
                    "kind": ev.kind,
                    "label": ev.label,
                    "starttime": ts_to_iso(ev.starttime),
                    "endtime": ts_to_iso(ev.endtime),
                }
                for ev in self.interval_events
            ],
            "note_events": [
                {"time": ts_to_iso(t), "category": c, "text": x} for t, c, x in self.note_events
            ],
            "series": [
                {
                    "name": s.name,
                    "categories": list(s.categories),
                    "unit": s.unit,
                    "points": [
                        {"time": ts_to_iso(t), "value": v, "tooltip": dict(tip)}
                        for t, v, tip in s.points
                    ],
                }
                for s in self.series
            ],
            "risk_series": [
                {
                    "model_id": r.model_id,
                    "points": [{"time": ts_to_iso(t), "probability": p} for t, p in r.points],
                }
                for r in self.risk_series
            ],
        }

    def to_json(self) -> str:
        return canonical_dumps(self.to_json_dict())


def _value_series(store: Datastore, hadm_id: int, name: str) -> ValueSeries:
    """One merged series from chart and lab sources, time-sorted."""
    code = store.item_code(name)
    points = []
    unit = ""
    if code is not None:
        for stay in store.stays_for_admission(hadm_id):
            items, times, values = store.chart_arrays(stay.icustay_id)
            units = store.chart_units(stay.icustay_id)
            mask = items == code
            for t, v, u in zip(times[mask], values[mask], units[mask]):
                points.append((int(t), float(v), {"source": "chart", "unit": str(u)}))
                unit = unit or str(u)
        items, times, values = store.lab_arrays(hadm_id)
        units, fluids = store.lab_units_fluids(hadm_id)
        mask = items == code
        for t, v, u, f in zip(times[mask], values[mask], units[mask], fluids[mask]):
            points.append((int(t), float(v), {"source": "lab", "unit": str(u), "fluid": str(f)}))
            unit = unit or str(u)
    points.sort(key=lambda p: p[0])
    return ValueSeries(name=name, categories=categories_for(name), unit=unit, points=points)


def assemble_timeline(store: Datastore, hadm_id: int, selected_series=()) -> TimelineDocument:
    """Integrate all events of one admission; risk series are filled by the
    service once model bundles are loaded.

    Selected series with no data in this admission still appear (with empty
    points) so the client's checkbox state and axes stay consistent.
    """
    hadm_id = int(hadm_id)
    adm = store.admissions.get(hadm_id)
    if adm is None:
        raise UnknownAdmission(hadm_id)
    patient = store.patients[adm.subject_id]

    point_events = [(adm.admittime, "admission"), (adm.dischtime, "discharge")]
    if adm.deathtime is not None:
        point_events.append((adm.deathtime, "death"))
    point_events.sort(key=lambda p: p[0])

    notes = [(e.charttime, e.category, e.text) for e in store.events_for_admission(hadm_id, "note")]
    intervals = list(store.events_for_admission(hadm_id, "interval"))

    doc = TimelineDocument(
        hadm_id=hadm_id,
        subject_attributes={
            "subject_id": adm.subject_id,
            "gender": patient.gender,
            "age": round(age_at_admission(patient.dob, adm.admittime), 2),
            "admission_diagnosis": adm.admission_diagnosis,
            "admittime": ts_to_iso(adm.admittime),
        },
        point_events=point_events,
        interval_events=intervals,
        note_events=notes,
        series=[_value_series(store, hadm_id, name) for name in sorted(selected_series)],
    )
    return doc
