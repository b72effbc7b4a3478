import json

import jsonschema
import numpy as np
import pytest

from nucav import io, parratt, qomodel
from nucav.domain import InputError, Spectrum


@pytest.fixture
def small_spectrum(eit_stack):
    return parratt.grid(eit_stack, [3.4e-3, 3.5e-3], np.linspace(-5, 5, 3))


@pytest.mark.parametrize("name", io.SCHEMAS)
def test_schemas_are_valid(name):
    jsonschema.Draft202012Validator.check_schema(io.load_schema(name))


def test_unknown_schema():
    with pytest.raises(InputError):
        io.load_schema("nope")


@pytest.mark.parametrize("fixture,schema", [("eit_params", "params"), ("non_eit_params", "params")])
def test_param_fixtures_validate(fixture, schema):
    from nucav.domain import _data_path

    jsonschema.validate(json.loads(_data_path(f"{fixture}.json").read_text()), io.load_schema(schema))


def test_stack_fixtures_validate(eit_stack, non_eit_stack):
    for st in (eit_stack, non_eit_stack):
        jsonschema.validate(st.to_dict(), io.load_schema("stack"))


@pytest.mark.parametrize("suffix", [".csv", ".json"])
def test_spectrum_round_trip(tmp_path, small_spectrum, suffix):
    path = io.write_spectrum(small_spectrum, tmp_path / f"s{suffix}", manifest="s.manifest.json")
    back = io.read_spectrum(path)
    np.testing.assert_array_equal(back.values, small_spectrum.values)
    np.testing.assert_array_equal(back.theta, small_spectrum.theta)
    assert back.engine == "parratt" and back.params_hash == small_spectrum.params_hash
    if suffix == ".json":
        jsonschema.validate(json.loads(path.read_text()), io.load_schema("spectrum"))


def test_csv_header_names_columns_and_units(small_spectrum):
    lines = io.spectrum_csv(small_spectrum, "m.json").splitlines()
    assert lines[0].startswith("# nucav spectrum engine=parratt")
    assert "manifest=m.json" in lines[0]
    assert lines[1] == "theta_rad,delta_gamma,re_R,im_R,abs2_R"
    assert len(lines) == 2 + 6


def test_writers_are_deterministic(tmp_path, small_spectrum):
    a = io.write_spectrum(small_spectrum, tmp_path / "a.csv").read_bytes()
    b = io.write_spectrum(small_spectrum, tmp_path / "b.csv").read_bytes()
    assert a == b


def test_read_spectrum_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n1,2\n")
    with pytest.raises(InputError):
        io.read_spectrum(bad)
    with pytest.raises(InputError):
        io.read_spectrum(tmp_path / "missing.csv")
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    with pytest.raises(InputError):
        io.read_spectrum(broken)


def test_field_json_validates(tmp_path, eit_stack):
    fm = parratt.field_map(eit_stack, 3.5e-3, depth_step=1.0)
    path = io.write_field(fm, tmp_path / "f.json")
    jsonschema.validate(json.loads(path.read_text()), io.load_schema("field"))
    csv_lines = io.field_csv(fm).splitlines()
    assert csv_lines[1] == "depth_nm,re_E,im_E,intensity"


def test_params_round_trip(tmp_path, eit_params):
    mp, cs = eit_params
    path = io.save_params(tmp_path / "p.json", mp, cs)
    jsonschema.validate(json.loads(path.read_text()), io.load_schema("params"))
    mp2, cs2 = io.load_params(path)
    np.testing.assert_allclose(mp2.kappa, mp.kappa)
    np.testing.assert_array_equal(cs2.g, cs.g)
    assert cs2.scale == cs.scale


def test_params_matrix_form(tmp_path, eit_params):
    mp, cs = eit_params
    plain = qomodel.CouplingSet(cs.g)
    d = io.params_to_dict(mp, plain)
    assert "matrix" in d["couplings"]
    jsonschema.validate(d, io.load_schema("params"))
    np.testing.assert_array_equal(io.load_params(d)[1].g, cs.g)


def test_params_errors(tmp_path):
    with pytest.raises(InputError):
        io.load_params({"modes": [{"theta0_mrad": 3.0}]})
    with pytest.raises(InputError):
        io.load_params(tmp_path / "none.json")
