"""Command-line front end: ``contact-wkam <command> [--config F] [--out D]``.

Exit codes: 0 success, 1 configuration error, 2 a computed negative result
(no convergence, broken set inclusion, no transitive orbit found).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, parse_number, seed_slug
from .errors import (ConfigError, ContactWKAMError, DegenerateEquilibrium, InclusionViolation,
                     NotConverged, NotFound)
from .flow import (PhaseState, classify_equilibrium, find_equilibria, integrate,
                   write_trajectory_csv)
from .io import write_columns_csv, write_grid_csv, write_json
from .model import GridFunction, validate_model
from .semigroup import SemigroupRun, solve_backward, solve_forward
from .sets import (OrbitSampling, build_set_report, build_transitive_orbit, check_diamond,
                   inclusion_report)

EXIT_OK, EXIT_CONFIG, EXIT_RESULT = 0, 1, 2


def _header(cfg: RunConfig, what: str) -> str:
    return (f"{what}\nconfig_hash = {cfg.hash}\n"
            f"lambda = {cfg.lam!r}, n_points = {cfg.n_points}, dt = {cfg.dt!r}")


def _run_dict(run: SemigroupRun, seed: str | None = None) -> dict:
    d = run.summary()
    d.update(verify_residual=float(run.verify_residual), monotone=bool(run.monotone))
    if seed is not None:
        d["seed"] = seed
    return d


def _backward(cfg: RunConfig) -> SemigroupRun:
    model = cfg.model()
    return solve_backward(model, cfg.seed(cfg.backward_seed), cfg.dt, cfg.t_max,
                          tol_fix=cfg.tol_fix, v_max=cfg.v_max, rule=cfg.rule_or_none)


def _forward(cfg: RunConfig, seed: GridFunction) -> SemigroupRun:
    return solve_forward(cfg.model(), seed, cfg.dt, cfg.t_max, tol_fix=cfg.tol_fix,
                         v_max=cfg.v_max, rule=cfg.rule_or_none)


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    bwd = _backward(cfg)
    write_grid_csv(out / "u_minus.csv", bwd.result, _header(cfg, "backward solution"))
    summary = {"config_hash": cfg.hash, "lambda": cfg.lam, "n_points": cfg.n_points,
               "dt": cfg.dt, "backward": _run_dict(bwd), "forward": {}}
    results = {}
    for name in cfg.seeds:
        run = _forward(cfg, cfg.seed(name, bwd.result))
        slug = seed_slug(name)
        write_grid_csv(out / f"u_plus_{slug}.csv", run.result,
                       _header(cfg, f"forward solution from seed {name}"))
        summary["forward"][slug] = _run_dict(run, name)
        results[slug] = run.result
    names = sorted(results)
    summary["pairwise_distance"] = {f"{a}|{b}": results[a].sup_distance(results[b])
                                    for i, a in enumerate(names) for b in names[i + 1:]}
    write_json(out / "solve_summary.json", summary, "solve_summary")
    ok = bwd.converged and all(v["converged"] for v in summary["forward"].values())
    if not ok:
        raise NotConverged("a semigroup iteration did not reach numerics.tol_fix")
    return EXIT_OK


def _sampling(cfg: RunConfig) -> OrbitSampling:
    return OrbitSampling(dt=cfg.dt, t_forward=cfg.sets_t_forward, t_backward=cfg.sets_t_backward,
                         window=cfg.sets_window, v_max=cfg.v_max, rule=cfg.rule_or_none)


def cmd_sets(cfg: RunConfig, out: Path) -> int:
    model = cfg.model()
    u_minus = _backward(cfg).result
    u_plus_max = _forward(cfg, u_minus).result
    report = build_set_report(model, u_minus, u_plus_max, tol_mane=cfg.sets_tol,
                              tol_static=cfg.sets_tol, tol_strong=cfg.sets_tol,
                              sampling=_sampling(cfg),
                              recurrence_horizon=cfg.recurrence_horizon)
    report.write_csv(out / "sets.csv", _header(cfg, "set classification"))
    inc = inclusion_report(model, report, dt=cfg.dt, eps=cfg.eps, raise_on_violation=False)
    doc = inc.as_dict()
    doc["config_hash"] = cfg.hash
    doc["tolerances"] = report.tolerances
    write_json(out / "inclusion.json", doc, "inclusion")
    if not inc.passed:
        v = inc.violations[0]
        raise InclusionViolation(f"{v['reason']} (index {v['index']})", v["index"], v["x"])
    return EXIT_OK


def _graph_point(cfg: RunConfig, u_minus: GridFunction, x: float) -> PhaseState:
    left, right = u_minus.one_sided_slopes()
    d = u_minus.domain
    k = int(d.nearest_index(x))
    return PhaseState(float(np.mod(x, d.circumference)), float(0.5 * (left[k] + right[k])),
                      float(u_minus(x)))


def cmd_transit(cfg: RunConfig, out: Path, x1: float, x2: float) -> int:
    model, dom = cfg.model(), cfg.domain()
    u_minus = _backward(cfg).result
    X1, X2 = _graph_point(cfg, u_minus, x1), _graph_point(cfg, u_minus, x2)
    verdict = check_diamond(model, dom, X1, X2, t_max=cfg.t_max, dt=cfg.dt, window=cfg.window,
                            tol=5 * cfg.tol_limit, v_max=cfg.v_max, rule=cfg.rule_or_none)
    doc = verdict.as_dict()
    doc["config_hash"] = cfg.hash
    try:
        traj = build_transitive_orbit(model, dom, X1, X2, cfg.t_list, dt=cfg.dt, eps=cfg.eps,
                                      horizon=cfg.horizon, v_max=cfg.v_max,
                                      rule=cfg.rule_or_none)
    except NotFound:
        doc["transit"] = {"found": False, "eps": cfg.eps, "duration": None}
        write_json(out / "diamond.json", doc, "diamond")
        raise
    doc["transit"] = {"found": True, "eps": cfg.eps, "duration": float(traj.times[-1])}
    write_trajectory_csv(out / "transit_orbit.csv", model, traj, _header(cfg, "transitive orbit"))
    write_json(out / "diamond.json", doc, "diamond")
    return EXIT_OK


def _two_solution_threshold(cfg: RunConfig) -> float:
    """min |V'| over rest points of the drift where V' < 0."""
    model = cfg.model()
    eqs = find_equilibria(model)
    slopes = [float(model.drift.derivative(np.array([e.x]))[0]) for e in eqs]
    neg = [abs(s) for s in slopes if s < 0]
    return min(neg) if neg else 0.0


def cmd_figure2(cfg: RunConfig, out: Path) -> int:
    thr = _two_solution_threshold(cfg)
    if not cfg.lam < thr:
        raise ConfigError("hamiltonian.lambda",
                          f"the two-solution picture needs lambda < |V'| at the repelling rest "
                          f"point ({thr:g}); got {cfg.lam:g}")
    bwd = _backward(cfg)
    fmax = _forward(cfg, bwd.result)
    w = _forward(cfg, cfg.seed(cfg.w_seed, bwd.result))
    write_columns_csv(out / "figure2.csv",
                      {"x": bwd.result.x, "u_minus": bwd.result.values,
                       "u_plus_max": fmax.result.values, "w_plus": w.result.values},
                      _header(cfg, "backward solution, maximal and lower forward solutions"))
    if not (bwd.converged and fmax.converged and w.converged):
        raise NotConverged("a semigroup iteration did not reach numerics.tol_fix")
    return EXIT_OK


def cmd_flow(cfg: RunConfig, out: Path, start: str, duration: float) -> int:
    try:
        x, p, u = (parse_number(s) for s in start.split(","))
    except ValueError:
        raise ConfigError("--start", f"expected x,p,u got {start!r}") from None
    traj = integrate(cfg.model(), PhaseState(x, p, u), duration, cfg.flow_dt)
    write_trajectory_csv(out / "flow.csv", cfg.model(), traj, _header(cfg, "characteristic orbit"))
    return EXIT_OK


def cmd_validate(cfg: RunConfig, out: Path) -> int:
    model = cfg.model()
    rep = validate_model(model, certificate=lambda x: (np.zeros_like(x), np.zeros_like(x)))
    doc = rep.as_dict()
    doc["config_hash"] = cfg.hash
    eqs = []
    for e in find_equilibria(model):
        try:
            r = classify_equilibrium(model, e)
            eqs.append({"x": e.x, "type": r.classification,
                        "eigenvalues": [float(v.real) for v in r.eigenvalues]})
        except DegenerateEquilibrium:
            eqs.append({"x": e.x, "type": "degenerate", "eigenvalues": []})
    doc["equilibria"] = eqs
    write_json(out / "validation.json", doc, "validation")
    return EXIT_OK if rep.ok else EXIT_RESULT


def _set_threads(cli_value: int | None) -> None:
    env = os.environ.get("CONTACT_WKAM_THREADS")
    n = int(env) if env else cli_value
    if n is None:
        return
    import numba
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="contact-wkam",
                                 description="Weak KAM computations for contact Hamiltonians "
                                             "on the circle.")
    ap.add_argument("--config", help="key = value configuration file")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--threads", type=int, default=None,
                    help="kernel threads (default all; CONTACT_WKAM_THREADS overrides)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", help="backward solution and forward solutions per seed")
    sub.add_parser("sets", help="set classification and inclusion report")
    t = sub.add_parser("transit", help="barrier identities and a transitive orbit")
    t.add_argument("--x1", required=True)
    t.add_argument("--x2", required=True)
    sub.add_parser("figure2", help="u_minus, maximal and lower forward solutions")
    f = sub.add_parser("flow", help="integrate the characteristic system")
    f.add_argument("--start", required=True, help="x,p,u")
    f.add_argument("--duration", required=True)
    sub.add_parser("validate", help="check the model assumptions and list rest points")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        out = Path(args.out) if args.out else cfg.resolve(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _set_threads(args.threads)
        if args.command == "solve":
            return cmd_solve(cfg, out)
        if args.command == "sets":
            return cmd_sets(cfg, out)
        if args.command == "transit":
            try:
                x1, x2 = parse_number(args.x1), parse_number(args.x2)
            except ValueError as exc:
                raise ConfigError("--x1/--x2", str(exc)) from None
            return cmd_transit(cfg, out, x1, x2)
        if args.command == "figure2":
            return cmd_figure2(cfg, out)
        if args.command == "flow":
            try:
                duration = parse_number(args.duration)
            except ValueError as exc:
                raise ConfigError("--duration", str(exc)) from None
            return cmd_flow(cfg, out, args.start, duration)
        return cmd_validate(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NotConverged, InclusionViolation, NotFound) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RESULT
    except ContactWKAMError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RESULT


if __name__ == "__main__":
    sys.exit(main())
