import csv
import os

import pytest

from icutl import synthgen
from icutl.datastore import TABLE_COLUMNS, ingest


def write_dataset(path, **overrides):
    """Write a minimal valid dataset, with per-table row overrides.

    Defaults give one patient (subject 1) with one admission (hadm 101) and a
    48h ICU stay. Pass e.g. chartevents=[...] to replace a table's rows.
    """
    defaults = {
        "patients": [(1, "M", "2100-01-01T00:00:00", "")],
        "admissions": [(101, 1, "2150-01-01T00:00:00", "2150-01-04T00:00:00", "", "PNEUMONIA")],
        "icustays": [(1011, 101, 1, "2150-01-01T06:00:00", "2150-01-03T06:00:00", "MICU")],
        "chartevents": [],
        "labevents": [],
        "noteevents": [],
        "interventions": [],
        "transfers": [],
        "services": [],
        "diagnoses": [(101, "486", 1)],
    }
    defaults.update(overrides)
    os.makedirs(path, exist_ok=True)
    for table, columns in TABLE_COLUMNS.items():
        with open(os.path.join(path, table + ".csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for row in defaults[table]:
                writer.writerow(row)
    return path


@pytest.fixture(scope="session")
def small_dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "small"
    synthgen.generate(synthgen.SynthConfig(n_patients=30, seed=5), out)
    return out


@pytest.fixture(scope="session")
def small_store(small_dataset_dir):
    return ingest(small_dataset_dir)


@pytest.fixture(scope="session")
def medium_dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "medium"
    synthgen.generate(synthgen.SynthConfig(n_patients=150, seed=42), out)
    return out


@pytest.fixture(scope="session")
def medium_store(medium_dataset_dir):
    return ingest(medium_dataset_dir)


@pytest.fixture(scope="session")
def case_study_store(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "case"
    synthgen.generate(synthgen.SynthConfig(n_patients=1, seed=0), out)
    return ingest(out)
