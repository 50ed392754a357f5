import json

import jsonschema
import numpy as np
import pytest

from contact_wkam.config import RunConfig, load_config, parse_config, parse_number, seed_slug
from contact_wkam.errors import ConfigError
from contact_wkam.io import load_schema, read_grid_csv, write_columns_csv, write_grid_csv, write_json
from contact_wkam.model import CircleDomain, GridFunction


class TestNumbers:
    @pytest.mark.parametrize("text,value", [
        ("1.5", 1.5), ("pi", np.pi), ("pi/2", np.pi / 2), ("-3*pi/4", -0.75 * np.pi),
        ("2pi", 2 * np.pi), ("-pi", -np.pi), ("1e-3", 1e-3),
    ])
    def test_parse(self, text, value):
        assert parse_number(text) == pytest.approx(value)

    @pytest.mark.parametrize("text", ["", "tau", "pi/", "1..2"])
    def test_reject(self, text):
        with pytest.raises(ValueError):
            parse_number(text)


class TestConfig:
    def test_defaults(self):
        cfg = load_config(None)
        assert cfg.lam == 0.5 and cfg.n_points == 512 and cfg.rule_or_none is None
        assert cfg.domain().dx == pytest.approx(2 * np.pi / 512)

    def test_parse_and_comments(self, tmp_path):
        cfg = parse_config("# demo\nhamiltonian.lambda = 3  # three\n\ndomain.n_points = 64\n"
                           "numerics.v_max = none\nsolve.seeds = zero, cos-1, -cos-1\n"
                           "transit.t_list = 5, pi\n", tmp_path)
        assert cfg.lam == 3.0 and cfg.n_points == 64 and cfg.v_max is None
        assert cfg.seeds == ("zero", "cos-1", "-cos-1")
        assert cfg.t_list == pytest.approx((5.0, np.pi))

    @pytest.mark.parametrize("text,key", [
        ("hamiltonian.mu = 1", "hamiltonian.mu"),
        ("hamiltonian.lambda = abc", "hamiltonian.lambda"),
        ("domain.n_points = 4", "domain.n_points"),
        ("numerics.dt = 0.5\nhamiltonian.lambda = 1", "numerics.dt"),
        ("numerics.rule = exact", "numerics.rule"),
        ("hamiltonian.drift = table:missing.csv", "hamiltonian.drift"),
        ("just words", "line 1"),
    ])
    def test_errors_name_the_key(self, text, key):
        with pytest.raises(ConfigError) as err:
            parse_config(text)
        assert err.value.key == key and str(err.value).startswith(key)

    def test_hash_is_stable_and_sensitive(self):
        a, b = parse_config("numerics.dt = 0.1"), parse_config("numerics.dt=0.1\n# x")
        assert a.hash == b.hash and len(a.hash) == 16
        assert parse_config("numerics.dt = 0.05").hash != a.hash

    def test_seeds(self, tmp_path):
        cfg = parse_config("domain.n_points = 16", tmp_path)
        assert cfg.seed("cos-1").values[0] == 0.0
        assert cfg.seed("-cos-1").values[0] == -2.0
        write_grid_csv(tmp_path / "s.csv", GridFunction.from_callable(cfg.domain(), np.sin))
        assert cfg.seed("table:s.csv").values == pytest.approx(np.sin(cfg.domain().x))
        with pytest.raises(ConfigError):
            cfg.seed("u_minus")
        with pytest.raises(ConfigError):
            cfg.seed("triangle")

    @pytest.mark.parametrize("name,slug", [("-cos-1", "neg_cos_minus_1"), ("cos-1", "cos_minus_1"),
                                           ("zero", "zero")])
    def test_slugs(self, name, slug):
        assert seed_slug(name) == slug

    def test_period_one_circle(self):
        cfg = parse_config("domain.circumference = 1\ndomain.n_points = 32")
        m = cfg.model()
        assert m.drift(np.array([0.25]))[0] == pytest.approx(1.0)
        assert cfg.domain().circumference == 1.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.cfg")

    def test_model_tolerances_flow_through(self):
        m = parse_config("hamiltonian.tol_legendre = 1e-11").model()
        assert m.tol_legendre == 1e-11 and isinstance(RunConfig().model().lam, float)


class TestIO:
    def test_grid_csv_roundtrip_is_exact(self, tmp_path):
        g = GridFunction.from_callable(CircleDomain(32), lambda x: np.exp(np.sin(x)) / 3)
        write_grid_csv(tmp_path / "g.csv", g, "line one\nline two")
        text = (tmp_path / "g.csv").read_text().splitlines()
        assert text[:3] == ["# line one", "# line two", "x,value"]
        x, v = read_grid_csv(tmp_path / "g.csv")
        assert np.array_equal(x, g.x) and np.array_equal(v, g.values)

    def test_columns_must_match(self, tmp_path):
        with pytest.raises(ValueError):
            write_columns_csv(tmp_path / "c.csv", {"a": [1, 2], "b": [1]})

    def test_bools_as_ints(self, tmp_path):
        write_columns_csv(tmp_path / "c.csv", {"a": np.array([True, False]), "b": [1, 2]})
        assert (tmp_path / "c.csv").read_text().splitlines()[1:] == ["1,1", "0,2"]

    @pytest.mark.parametrize("name", ["solve_summary", "inclusion", "diamond", "validation"])
    def test_schemas_are_valid(self, name):
        jsonschema.Draft7Validator.check_schema(load_schema(name))

    def test_write_json_validates(self, tmp_path):
        with pytest.raises(jsonschema.ValidationError):
            write_json(tmp_path / "v.json", {"ok": "yes"}, "validation")
        write_json(tmp_path / "free.json", {"b": 1, "a": [1.5]})
        assert json.loads((tmp_path / "free.json").read_text()) == {"a": [1.5], "b": 1}
