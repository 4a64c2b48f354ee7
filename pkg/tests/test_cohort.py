import numpy as np
import pytest

from icutl.cohort import FilterSpec, age_at_admission, apply_filters, los_days
from icutl.datastore import ingest, iso_to_ts, primary_diagnosis
from icutl.errors import InvalidRange, NegativeAge

from conftest import write_dataset


class TestAge:
    def test_eighty_years(self):
        age = age_at_admission(iso_to_ts("2000-01-01T00:00:00"), iso_to_ts("2080-01-01T00:00:00"))
        assert age == pytest.approx(80.0, abs=0.1)

    def test_zero_age(self):
        ts = iso_to_ts("2050-05-05T12:00:00")
        assert age_at_admission(ts, ts) == 0.0

    def test_deidentification_artifact_capped(self):
        age = age_at_admission(iso_to_ts("1800-01-01T00:00:00"), iso_to_ts("2100-01-01T00:00:00"))
        assert age == 90.0

    def test_negative_age(self):
        with pytest.raises(NegativeAge):
            age_at_admission(iso_to_ts("2100-01-01T00:00:00"), iso_to_ts("2099-01-01T00:00:00"))


@pytest.fixture()
def gender_fixture(tmp_path):
    """2 F subjects + 3 M subjects, one admission each; subject 1 died."""
    patients, admissions = [], []
    for sid, gender in enumerate(["F", "F", "M", "M", "M"], start=1):
        patients.append((sid, gender, "2090-01-01T00:00:00", ""))
        died = "2150-01-03T00:00:00" if sid == 1 else ""
        admissions.append(
            (100 + sid, sid, "2150-01-01T00:00:00", "2150-01-03T00:00:00", died, "DX")
        )
    path = write_dataset(
        tmp_path / "g", patients=patients, admissions=admissions, icustays=[], diagnoses=[]
    )
    return ingest(path)


class TestApplyFilters:
    def test_empty_spec_returns_all(self, gender_fixture):
        assert apply_filters(gender_fixture, FilterSpec()) == set(gender_fixture.admissions)

    def test_gender_filter(self, gender_fixture):
        got = apply_filters(gender_fixture, FilterSpec(gender="F"))
        assert got == {101, 102}

    def test_conjunction_is_intersection_of_singles(self, gender_fixture):
        died = FilterSpec(died_in_hospital=True)
        los = FilterSpec(los_range=(0, 10))
        both = FilterSpec(died_in_hospital=True, los_range=(0, 10))
        assert apply_filters(gender_fixture, both) == (
            apply_filters(gender_fixture, died) & apply_filters(gender_fixture, los)
        )

    def test_invalid_range(self):
        with pytest.raises(InvalidRange):
            FilterSpec(los_range=(5, 2))
        with pytest.raises(InvalidRange):
            FilterSpec(age_range=(80, 20))
        with pytest.raises(InvalidRange):
            FilterSpec(gender="Q")

    def test_icd9_prefix_semantics(self, tmp_path):
        path = write_dataset(
            tmp_path / "icd",
            diagnoses=[(101, "4860", 1), (101, "428", 2)],
        )
        store = ingest(path)
        assert apply_filters(store, FilterSpec(primary_icd9=frozenset(["486"]))) == {101}
        # secondary codes do not count as the primary diagnosis
        assert apply_filters(store, FilterSpec(primary_icd9=frozenset(["428"]))) == set()
        assert apply_filters(store, FilterSpec(primary_icd9=frozenset(["487"]))) == set()

    def test_json_round_trip(self):
        spec = FilterSpec(
            primary_icd9=frozenset(["486", "428"]),
            gender="F",
            age_range=(20.0, 80.0),
            died_in_hospital=False,
        )
        again = FilterSpec.from_json_dict(spec.to_json_dict())
        assert again == spec

    def test_json_rejects_unknown_fields(self):
        with pytest.raises(InvalidRange):
            FilterSpec.from_json_dict({"ages": [1, 2]})


def naive_reference_filter(store, spec):
    """Independent full-scan evaluator built from raw enumeration per admission."""
    out = set()
    for hadm_id, adm in store.admissions.items():
        patient = store.patients[adm.subject_id]
        checks = []
        if spec.gender is not None:
            checks.append(patient.gender == spec.gender)
        if spec.died_in_hospital is not None:
            checks.append((adm.deathtime is not None) == spec.died_in_hospital)
        if spec.age_range is not None:
            age = age_at_admission(patient.dob, adm.admittime)
            lo, hi = spec.age_range
            checks.append((lo is None or age >= lo) and (hi is None or age <= hi))
        if spec.los_range is not None:
            days = los_days(adm.admittime, adm.dischtime)
            lo, hi = spec.los_range
            checks.append((lo is None or days >= lo) and (hi is None or days <= hi))
        if spec.primary_icd9 is not None:
            code = primary_diagnosis(store, hadm_id)
            checks.append(code is not None and any(code.startswith(p) for p in spec.primary_icd9))
        if spec.intervention_labels is not None:
            labels = set()
            for stay in store.stays_for_admission(hadm_id):
                for ev in store.events_for_admission(hadm_id, "interval"):
                    if ev.kind == "intervention" and ev.scope_id == stay.icustay_id:
                        labels.add(ev.label)
            checks.append(bool(labels & spec.intervention_labels))
        if spec.services is not None:
            received = {
                ev.label
                for ev in store.events_for_admission(hadm_id, "interval")
                if ev.kind == "service"
            }
            checks.append(bool(received & spec.services))
        if all(checks):
            out.add(hadm_id)
    return out


def random_spec(rng):
    kwargs = {}
    if rng.uniform() < 0.4:
        kwargs["gender"] = str(rng.choice(["M", "F"]))
    if rng.uniform() < 0.4:
        kwargs["died_in_hospital"] = bool(rng.integers(0, 2))
    if rng.uniform() < 0.4:
        lo = float(rng.uniform(15, 70))
        kwargs["age_range"] = (lo, lo + float(rng.uniform(5, 50)))
    if rng.uniform() < 0.4:
        lo = float(rng.uniform(0, 5))
        kwargs["los_range"] = (lo, lo + float(rng.uniform(0.5, 15)))
    if rng.uniform() < 0.3:
        kwargs["primary_icd9"] = frozenset(
            rng.choice(["486", "428", "038", "410", "584", "491", "577", "852"],
                       size=int(rng.integers(1, 4)), replace=False).tolist()
        )
    if rng.uniform() < 0.3:
        kwargs["intervention_labels"] = frozenset(
            rng.choice(["ventilation", "vasopressor"], size=int(rng.integers(1, 3)),
                       replace=False).tolist()
        )
    if rng.uniform() < 0.3:
        kwargs["services"] = frozenset(
            rng.choice(["MED", "SURG", "CMED", "NSURG"], size=int(rng.integers(1, 3)),
                       replace=False).tolist()
        )
    return FilterSpec(**kwargs)


class TestFilterProperties:
    def test_agrees_with_naive_reference(self, small_store):
        rng = np.random.default_rng(17)
        for _ in range(40):
            spec = random_spec(rng)
            assert apply_filters(small_store, spec) == naive_reference_filter(small_store, spec)

    def test_conjunction_law(self, small_store):
        # specs with disjoint present fields: result(A and B) == result(A) & result(B)
        rng = np.random.default_rng(23)
        demographic = ("gender", "died_in_hospital", "age_range")
        clinical = ("los_range", "primary_icd9", "intervention_labels", "services")
        for _ in range(40):
            full = random_spec(rng)
            a = FilterSpec(**{f: getattr(full, f) for f in demographic})
            b = FilterSpec(**{f: getattr(full, f) for f in clinical})
            combined = FilterSpec(
                **{f: getattr(full, f) for f in demographic + clinical}
            )
            assert apply_filters(small_store, combined) == (
                apply_filters(small_store, a) & apply_filters(small_store, b)
            )

    def test_adding_constraint_never_enlarges(self, small_store):
        rng = np.random.default_rng(31)
        fields = ("primary_icd9", "intervention_labels", "services", "age_range",
                  "los_range", "died_in_hospital")
        for _ in range(25):
            base = random_spec(rng)
            extra = FilterSpec(
                **{f: getattr(base, f) for f in fields},
                gender=base.gender or "F",
            )
            assert apply_filters(small_store, extra) <= apply_filters(small_store, base)
