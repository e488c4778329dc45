import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from ppdesign import io
from ppdesign.core import Design, InvalidInputError, random_design, validate_design
from ppdesign.master import MasterDesign

SETTINGS = settings(suppress_health_check=[HealthCheck.function_scoped_fixture])


@SETTINGS
@given(st.integers(0, 10_000))
def test_csv_round_trip(tmp_path, case_space, seed):
    design = random_design(case_space, seed)
    path = io.write_design_csv(design, tmp_path / "d.csv")
    back = io.read_design_csv(path)
    assert back == design
    assert validate_design(back, case_space) == []


def test_json_round_trip(tmp_path, case_space):
    design = random_design(case_space, 5)
    io.write_design_json(design, tmp_path / "d.json", case_space, note="x")
    assert io.read_design(tmp_path / "d.json") == design
    doc = json.loads((tmp_path / "d.json").read_text())
    assert io.space_from_dict(doc["space"]).forbidden_combinations == case_space.forbidden_combinations


def test_csv_is_one_based(tmp_path):
    design = Design(np.array([[[1, 2], [2, 2]]]))
    path = io.write_design_csv(design, tmp_path / "d.csv")
    assert path.read_text().splitlines() == ["choice_set,profile,attr_1,attr_2", "1,1,1,2", "1,2,2,2"]
    assert json.loads(io.sidecar_path(path).read_text())["constant_attributes"] == [[2]]


def test_sidecar_mismatch_is_rejected(tmp_path):
    design = Design(np.array([[[1, 2], [2, 2]]]))
    path = io.write_design_csv(design, tmp_path / "d.csv")
    io.sidecar_path(path).write_text(json.dumps({"constant_attributes": [[1]]}))
    with pytest.raises(InvalidInputError, match="disagree"):
        io.read_design_csv(path)


def test_incomplete_csv_is_rejected(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("choice_set,profile,attr_1\n1,1,1\n1,2,2\n2,1,1\n")
    with pytest.raises(InvalidInputError, match="expected 4 rows"):
        io.read_design_csv(p)
    p.write_text("set,alt,a\n1,1,1\n")
    with pytest.raises(InvalidInputError, match="header"):
        io.read_design_csv(p)


def test_master_round_trip(tmp_path):
    master = MasterDesign(np.array([[1, 0, 1], [0, 1, 1]]))
    back = io.read_master_csv(io.write_master_csv(master, tmp_path / "m.csv"))
    assert np.array_equal(back.incidence, master.incidence)


def test_dumps_spells_non_finite():
    doc = json.loads(io.dumps({"a": -np.inf, "b": np.float64(1.5), "c": np.arange(2)}))
    assert doc == {"a": "-inf", "b": 1.5, "c": [0, 1]}


def test_rows_csv_formats_exactly(tmp_path):
    p = io.write_rows_csv(tmp_path / "r.csv", ["a", "b", "c"], [(1, 0.1, True)])
    assert p.read_text() == "a,b,c\n1,0.1,1\n"
