import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onewaygate.gate import gate1, gate2
from onewaygate.io import (
    InputParseError,
    build_test_report,
    dump_json,
    load_schema,
    params_from_dict,
    params_to_dict,
    read_grouped_csv,
    read_params,
    write_grouped_csv,
    write_params,
)
from onewaygate.model import DensitySpec, GammParams, GroupedObservations, build_lfdr_table, generate_dataset

jsonschema = pytest.importorskip("jsonschema")


def _write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_read_groups_in_first_appearance_order(tmp_path):
    p = _write(tmp_path, "group_id,unit_id,z\nB,s1,1.5\nA,s2,-0.5\nB,s3,2.0\n")
    data = read_grouped_csv(p)
    assert data.group_ids == ("B", "A")
    assert data.sizes.tolist() == [2, 1]
    assert data.values.tolist() == [1.5, 2.0, -0.5]
    assert data.unit_ids == ("s1", "s3", "s2")


@pytest.mark.parametrize("text,needle", [
    ("", "empty file"),
    ("a,b,c\n1,2,3\n", "header"),
    ("group_id,unit_id,z\n", "no data rows"),
    ("group_id,unit_id,z\nA,1,0.5\nA,2\n", ":3: expected 3 fields"),
    ("group_id,unit_id,z\nA,1,abc\n", ":2: field z is not a number"),
    ("group_id,unit_id,z\nA,1,nan\n", ":2: field z is not finite"),
    ("group_id,unit_id,z\n,1,0.3\n", ":2: empty group_id"),
])
def test_parse_errors_name_the_row(tmp_path, text, needle):
    with pytest.raises(InputParseError, match=needle):
        read_grouped_csv(_write(tmp_path, text))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=4), min_size=1, max_size=5))
def test_csv_round_trip(tmp_path_factory, groups):
    d = tmp_path_factory.mktemp("rt")
    data = GroupedObservations.from_groups(groups, [f"g{i}" for i in range(len(groups))])
    write_grouped_csv(data, d / "a.csv")
    again = read_grouped_csv(d / "a.csv")
    assert again == data
    write_grouped_csv(again, d / "b.csv")
    assert (d / "a.csv").read_bytes() == (d / "b.csv").read_bytes()


def test_params_round_trip(tmp_path):
    p = GammParams(0.53, 0.59, DensitySpec((0.4, 0.6), (-1.88, 2.64), 1.0))
    write_params(p, tmp_path / "p.json")
    assert read_params(tmp_path / "p.json") == p
    jsonschema.validate(json.loads((tmp_path / "p.json").read_text()), load_schema("params"))
    assert params_from_dict({"pi1": 0.5, "pi2": 0.3, "weights": [1], "means": [2]}).densities.alt_sd == 1.0


def test_params_errors(tmp_path):
    with pytest.raises(InputParseError, match="missing"):
        params_from_dict({"pi1": 0.5})
    with pytest.raises(InputParseError, match="invalid JSON"):
        read_params(_write(tmp_path, "{", "p.json"))
    with pytest.raises(ValueError):
        params_from_dict({"pi1": 1.5, "pi2": 0.3, "weights": [1], "means": [2]})


def test_dump_json_is_deterministic_and_strict():
    obj = {"b": np.float64(0.1), "a": [np.int64(3), np.bool_(True)], "c": float("inf")}
    assert dump_json(obj) == '{\n  "a": [\n    3,\n    true\n  ],\n  "b": 0.1,\n  "c": null\n}\n'
    x = 0.1 + 0.2
    assert json.loads(dump_json({"x": x}))["x"] == x


@pytest.mark.parametrize("method", ["gate1", "gate2"])
def test_report_validates_against_schema(method):
    params = GammParams(0.5, 0.3)
    data, _ = generate_dataset(30, 5, params, np.random.default_rng(0))
    table = build_lfdr_table(data, params)
    dec = gate1(table, 0.05) if method == "gate1" else gate2(table, 0.05, 0.025)
    report = build_test_report(data, table, dec, method=method, alpha=0.05,
                               eta=0.025 if method == "gate2" else None,
                               params=params, parameter_source="supplied")
    jsonschema.validate(json.loads(dump_json(report)), load_schema("test_report"))
    assert report["summary"]["total_rejections"] == dec.n_rejections
    assert sum(g["rejections"] for g in report["groups"]) == dec.n_rejections
    if method == "gate2":
        assert set(report["threshold"]) >= {"alpha_star", "R_i", "eta"}
