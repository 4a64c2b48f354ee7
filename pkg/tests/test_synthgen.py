import numpy as np
import pytest

from icutl import synthgen
from icutl.datastore import HOUR, ingest
from icutl.synthgen import SeverityParams, SynthConfig, severity_trajectory


class TestSeverityTrajectory:
    def test_full_persistence_no_noise_is_constant(self):
        rng = np.random.default_rng(0)
        s = severity_trajectory(SeverityParams(phi=1.0, sigma=0.0, mu=1.5), 50, rng)
        assert np.all(s == 1.5)

    def test_no_persistence_no_noise(self):
        rng = np.random.default_rng(0)
        s = severity_trajectory(SeverityParams(phi=0.0, sigma=0.0, mu=2.0), 25, rng)
        assert np.all(s == 2.0)

    def test_starts_at_mu(self):
        rng = np.random.default_rng(1)
        s = severity_trajectory(SeverityParams(phi=0.5, sigma=1.0, mu=-3.0), 10, rng)
        assert s[0] == -3.0

    def test_stationary_variance(self):
        # late-sample variance approaches sigma^2 / (1 - phi^2) = 2.778
        rng = np.random.default_rng(2)
        params = SeverityParams(phi=0.8, sigma=1.0, mu=0.0)
        finals = np.array([severity_trajectory(params, 50, rng)[-1] for _ in range(100_000)])
        target = 1.0 / (1.0 - 0.8**2)
        assert abs(finals.var() / target - 1.0) < 0.05

    def test_param_validation(self):
        with pytest.raises(ValueError):
            SeverityParams(phi=1.5, sigma=1.0, mu=0.0)
        with pytest.raises(ValueError):
            SeverityParams(phi=0.5, sigma=-1.0, mu=0.0)


class TestConfigValidation:
    def test_rejects_bad_rates(self):
        with pytest.raises(ValueError):
            SynthConfig(n_patients=1, mortality_base_rate=0.0)
        with pytest.raises(ValueError):
            SynthConfig(n_patients=1, mortality_base_rate=1.0)
        with pytest.raises(ValueError):
            SynthConfig(n_patients=-1)
        with pytest.raises(ValueError):
            SynthConfig(n_patients=1, signal_strength=-0.1)


class TestGenerate:
    def test_byte_identical_across_runs(self, tmp_path):
        cfg = SynthConfig(n_patients=8, seed=21)
        a = synthgen.generate(cfg, tmp_path / "a")
        b = synthgen.generate(cfg, tmp_path / "b")
        import os

        for name in sorted(os.listdir(a)):
            with open(os.path.join(a, name), "rb") as fa, open(os.path.join(b, name), "rb") as fb:
                assert fa.read() == fb.read(), name

    def test_zero_patients_header_only(self, tmp_path):
        out = synthgen.generate(SynthConfig(n_patients=0, seed=0), tmp_path / "z")
        import os

        for name in os.listdir(out):
            with open(os.path.join(out, name), encoding="utf-8") as fh:
                assert len(fh.readlines()) == 1, name

    def test_output_passes_ingest(self, small_store):
        assert small_store.table_counts()["patients"] == 30

    def test_mortality_monotone_in_base_rate(self, tmp_path):
        deaths = []
        admissions = []
        for i, rate in enumerate((0.06, 0.15, 0.32)):
            out = tmp_path / f"m{i}"
            synthgen.generate(SynthConfig(n_patients=400, seed=13, mortality_base_rate=rate), out)
            store = ingest(out)
            adms = list(store.admissions.values())
            deaths.append(sum(a.deathtime is not None for a in adms))
            admissions.append(len(adms))
        rates = [d / n for d, n in zip(deaths, admissions)]
        assert rates[0] <= rates[1] <= rates[2]
        assert deaths[0] <= deaths[1] <= deaths[2]

    def test_every_table_feature_present(self, small_store):
        from icutl.features import FEATURE_NAMES

        present = set(small_store.item_names())
        assert set(FEATURE_NAMES) <= present

    def test_hourly_vitals_cadence(self, small_store):
        # a non-case-study stay charts each bedside vital roughly hourly
        stay = next(s for s in small_store.icustays.values() if s.subject_id != 1)
        items, times, _values = small_store.chart_arrays(stay.icustay_id)
        code = small_store.item_code("heart_rate")
        hr_times = times[items == code]
        stay_hours = (stay.outtime - stay.intime) // HOUR
        assert len(hr_times) >= 0.85 * stay_hours  # 5% dropout allowed


class TestCaseStudyFixture:
    def test_shape(self, case_study_store):
        store = case_study_store
        adm = store.admissions[synthgen.CASE_STUDY_HADM_ID]
        assert adm.deathtime is not None
        assert adm.admission_diagnosis.startswith("PNEUMONIA")
        dx = store.diagnoses[adm.hadm_id]
        assert dx[0].icd9_code == "486" and dx[0].seq_num == 1

        intervals = store.events_for_admission(adm.hadm_id, "interval")
        vents = [e for e in intervals if e.label == "ventilation"]
        vasos = [e for e in intervals if e.label == "vasopressor"]
        assert len(vents) == 2  # the mid-stay gap
        assert vents[0].endtime < vents[1].starttime
        assert len(vasos) == 1
        units = [e for e in intervals if e.kind == "careunit"]
        assert [u.label for u in units] == ["MICU"]

    def test_pre_admission_wbc_anomaly(self, case_study_store):
        store = case_study_store
        stay = store.icustays[synthgen.CASE_STUDY_ICUSTAY_ID]
        items, times, values = store.chart_arrays(stay.icustay_id)
        code = store.item_code("white_blood_cell_count")
        wbc_times = times[items == code]
        wbc_values = values[items == code]
        assert wbc_times.min() < stay.intime  # charted before arrival
        assert wbc_values[np.argmin(wbc_times)] == 2.1
        assert wbc_values.max() == 28.7

    def test_oxygen_saturation_dips_during_vent_gap(self, case_study_store):
        store = case_study_store
        stay = store.icustays[synthgen.CASE_STUDY_ICUSTAY_ID]
        items, times, values = store.chart_arrays(stay.icustay_id)
        code = store.item_code("oxygen_saturation")
        hours = (times[items == code] - stay.intime) // HOUR
        sat = values[items == code]
        gap = sat[(hours >= 70) & (hours < 76)]
        assert gap.min() == 86.0
        # level on the ventilator before the gap
        assert sat[(hours >= 10) & (hours < 70)].min() >= 94.0

    def test_death_six_days_in(self, case_study_store):
        adm = case_study_store.admissions[synthgen.CASE_STUDY_HADM_ID]
        days = (adm.deathtime - adm.admittime) / (24 * HOUR)
        assert 5.5 <= days <= 6.5
