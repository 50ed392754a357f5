"""Plain-text run configuration: ``section.key = value`` lines.

Blank lines and ``#`` comments are ignored.  Unknown keys, malformed
values and unstable step sizes raise :class:`ConfigError` naming the key.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .io import config_hash
from .model import CircleDomain, Drift, GridFunction, HamiltonianModel, example_e

_PI_EXPR = re.compile(r"^\s*([+-]?\d*\.?\d*)\s*\*?\s*pi\s*(?:/\s*(\d+\.?\d*))?\s*$")


def parse_number(text: str) -> float:
    """A float, or a multiple of pi such as ``pi/2``, ``2pi``, ``-3*pi/4``."""
    try:
        return float(text)
    except ValueError:
        pass
    m = _PI_EXPR.match(text.lower())
    if not m:
        raise ValueError(f"not a number: {text!r}")
    coef = m.group(1)
    c = -1.0 if coef == "-" else 1.0 if coef in ("", "+") else float(coef)
    return c * np.pi / (float(m.group(2)) if m.group(2) else 1.0)


def _float(v: str) -> float:
    return parse_number(v)


def _opt_float(v: str) -> float | None:
    return None if v.lower() in ("none", "all", "inf") else parse_number(v)


def _int(v: str) -> int:
    return int(v)


def _list_float(v: str) -> tuple:
    return tuple(parse_number(s) for s in v.split(",") if s.strip())


def _list_str(v: str) -> tuple:
    return tuple(s.strip() for s in v.split(",") if s.strip())


def _str(v: str) -> str:
    return v.strip()


# key -> (attribute, parser)
_KEYS = {
    "hamiltonian.kind": ("kind", _str),
    "hamiltonian.lambda": ("lam", _float),
    "hamiltonian.drift": ("drift", _str),
    "hamiltonian.tol_legendre": ("tol_legendre", _float),
    "hamiltonian.h_fd": ("h_fd", _float),
    "domain.circumference": ("circumference", _float),
    "domain.n_points": ("n_points", _int),
    "numerics.dt": ("dt", _float),
    "numerics.t_max": ("t_max", _float),
    "numerics.window": ("window", _float),
    "numerics.v_max": ("v_max", _opt_float),
    "numerics.tol_fix": ("tol_fix", _float),
    "numerics.tol_limit": ("tol_limit", _float),
    "numerics.rule": ("rule", _str),
    "solve.backward_seed": ("backward_seed", _str),
    "solve.seeds": ("seeds", _list_str),
    "sets.tol": ("sets_tol", _float),
    "sets.t_forward": ("sets_t_forward", _float),
    "sets.t_backward": ("sets_t_backward", _float),
    "sets.window": ("sets_window", _float),
    "sets.recurrence_horizon": ("recurrence_horizon", _float),
    "transit.t_list": ("t_list", _list_float),
    "transit.eps": ("eps", _float),
    "transit.horizon": ("horizon", _float),
    "figure2.w_seed": ("w_seed", _str),
    "flow.dt": ("flow_dt", _float),
    "output.dir": ("output_dir", _str),
}


@dataclass
class RunConfig:
    kind: str = "example-E"
    lam: float = 0.5
    drift: str = "sin"
    tol_legendre: float = 1e-9
    h_fd: float = 1e-5
    circumference: float = 2 * np.pi
    n_points: int = 512
    dt: float = 0.1
    t_max: float = 50.0
    window: float = 5.0
    v_max: float | None = 4.0
    tol_fix: float = 1e-4
    tol_limit: float = 1e-3
    rule: str = "auto"
    backward_seed: str = "zero"
    seeds: tuple = ("u_minus",)
    sets_tol: float = 5e-3
    sets_t_forward: float = 20.0
    sets_t_backward: float = 30.0
    sets_window: float = 5.0
    recurrence_horizon: float = 50.0
    t_list: tuple = (5.0, 10.0, 20.0, 40.0)
    eps: float = 0.05
    horizon: float = 200.0
    w_seed: str = "cos-1"
    flow_dt: float = 0.005
    output_dir: str = "out"
    base_dir: Path = field(default=Path("."), repr=False)
    text: str = field(default="", repr=False)

    @property
    def hash(self) -> str:
        return config_hash(self.canonical())

    def canonical(self) -> str:
        """Sorted key = value listing of every setting (defaults included)."""
        out = []
        for key, (attr, _) in sorted(_KEYS.items()):
            v = getattr(self, attr)
            if isinstance(v, tuple):
                v = ",".join(map(str, v))
            out.append(f"{key} = {v}")
        return "\n".join(out)

    @property
    def rule_or_none(self) -> str | None:
        return None if self.rule == "auto" else self.rule

    def domain(self) -> CircleDomain:
        return CircleDomain(self.n_points, self.circumference)

    def model(self) -> HamiltonianModel:
        m = example_e(self.lam, self.build_drift(), self.circumference)
        return replace(m, tol_legendre=self.tol_legendre, h_fd=self.h_fd)

    def build_drift(self) -> Drift:
        d = self.drift
        if d == "sin":
            if not np.isclose(self.circumference, 2 * np.pi):
                k = 2 * np.pi / self.circumference
                return Drift(lambda x: np.sin(k * x), lambda x: k * np.cos(k * x), "sin")
            return Drift.sine()
        if d.startswith("const:"):
            return Drift.constant(parse_number(d[6:]))
        if d.startswith("table:"):
            return Drift.from_table(self.resolve(d[6:]), self.circumference)
        raise ConfigError("hamiltonian.drift", f"unknown drift {d!r} (sin, const:<c>, table:<path>)")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else (self.base_dir / p).resolve()

    def seed(self, name: str, u_minus: GridFunction | None = None) -> GridFunction:
        """Named initial grid function."""
        dom = self.domain()
        k = 2 * np.pi / self.circumference
        table = {
            "zero": lambda x: np.zeros_like(x),
            "cos": lambda x: np.cos(k * x),
            "cos-1": lambda x: np.cos(k * x) - 1.0,
            "-cos-1": lambda x: -np.cos(k * x) - 1.0,
        }
        if name in table:
            return GridFunction.from_callable(dom, table[name])
        if name == "u_minus":
            if u_minus is None:
                raise ConfigError("solve.seeds", "u_minus seed needs a backward solution")
            return u_minus
        if name.startswith("table:"):
            from .io import read_grid_csv
            x, v = read_grid_csv(self.resolve(name[6:]))
            if x.size != dom.n_points:
                raise ConfigError("solve.seeds", f"{name}: {x.size} rows, grid has {dom.n_points}")
            return GridFunction(dom, v)
        raise ConfigError("solve.seeds", f"unknown seed {name!r}")


def seed_slug(name: str) -> str:
    """File-name form of a seed name: ``-cos-1`` becomes ``neg_cos_minus_1``."""
    s = name
    if s.startswith("-"):
        s = "neg_" + s[1:]
    s = s.replace("-", "_minus_").replace("+", "_plus_")
    return re.sub(r"[^A-Za-z0-9_.]", "_", s)


def parse_config(text: str, base_dir: Path | str = ".") -> RunConfig:
    cfg = RunConfig(base_dir=Path(base_dir), text=text)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(key, "unknown key")
        attr, parser = _KEYS[key]
        try:
            setattr(cfg, attr, parser(value))
        except (ValueError, TypeError) as exc:
            raise ConfigError(key, f"bad value {value!r}: {exc}") from None
    _check(cfg)
    return cfg


def load_config(path: Path | str | None) -> RunConfig:
    """Read a config file; ``None`` gives the defaults."""
    if path is None:
        cfg = RunConfig()
        _check(cfg)
        return cfg
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {p}: {exc.strerror}") from None
    return parse_config(text, p.parent.resolve())


def _check(cfg: RunConfig) -> None:
    if cfg.kind != "example-E":
        raise ConfigError("hamiltonian.kind", "only example-E can be built from a config file")
    if cfg.lam < 0:
        raise ConfigError("hamiltonian.lambda", "must be >= 0")
    if cfg.circumference <= 0:
        raise ConfigError("domain.circumference", "must be positive")
    if cfg.n_points < 8:
        raise ConfigError("domain.n_points", "must be >= 8")
    if cfg.tol_legendre <= 0 or cfg.h_fd <= 0:
        raise ConfigError("hamiltonian.tol_legendre" if cfg.tol_legendre <= 0
                          else "hamiltonian.h_fd", "must be positive")
    if cfg.dt <= 0:
        raise ConfigError("numerics.dt", "must be positive")
    if cfg.dt * cfg.lam >= 0.5:
        raise ConfigError("numerics.dt", f"dt*lambda = {cfg.dt * cfg.lam:g} must be < 0.5")
    if cfg.v_max is not None and cfg.v_max <= 0:
        raise ConfigError("numerics.v_max", "must be positive or 'none'")
    if cfg.rule not in ("auto", "drift", "midpoint"):
        raise ConfigError("numerics.rule", "must be auto, drift or midpoint")
    for key, attr in (("numerics.t_max", "t_max"), ("transit.eps", "eps"),
                      ("transit.horizon", "horizon"), ("flow.dt", "flow_dt"),
                      ("numerics.window", "window")):
        if getattr(cfg, attr) <= 0:
            raise ConfigError(key, "must be positive")
    if not cfg.seeds:
        raise ConfigError("solve.seeds", "at least one seed is needed")
    if cfg.drift.startswith("table:") and not cfg.resolve(cfg.drift[6:]).exists():
        raise ConfigError("hamiltonian.drift", f"table {cfg.drift[6:]} not found")
