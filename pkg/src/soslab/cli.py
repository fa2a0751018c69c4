"""Command-line entry point.

One subcommand per task: model checks, trajectory simulation, spectral
computations, and the scaling harnesses.  Every run writes its report
under --out with the configuration echoed first, and prints a one-line
verdict.  Exit codes: 0 all verdicts passed, 1 a verdict failed, 2 bad
usage or configuration.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .catalog import load_catalog, validate_catalog, zero_catalog
from .dynamics import (
    couple,
    rate_ratio_deviation,
    simulate,
    write_coupling,
    write_trajectory,
)
from .experiments import (
    coupling_fidelity,
    exit_time_scaling,
    gap_scaling,
    radon_nikodym_bound,
)
from .forms import (
    derivative_identity,
    form_domination,
    gradient_space,
    pushforward_distance,
    ratio_bounds,
    variance_decomposition,
)
from .model import AUXILIARY, CONSTRAINED, ModelParams
from .reports import params_hash, write_report
from .rng import RngSpec
from .spectral import (
    build_generator,
    killed_gap,
    killed_operator,
    mean_exit_times,
    spectral_gap,
)

DEFAULTS = {
    "beta": 3.0,
    "L": 4,
    "M": None,
    "R": None,
    "alpha": 0.2,
    "eps": 0.1,
    "kind": CONSTRAINED,
    "out": "runs",
    "replicas": 200,
    "seed": 0,
    "t": 2.0,
}


def _add_common(sp):
    sp.add_argument("--L", type=int)
    sp.add_argument("--M", type=int)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--R", type=int, help="gradient truncation radius")
    sp.add_argument("--eps", type=float, help="region A margin")
    sp.add_argument("--alpha", type=float, help="core box fraction")
    sp.add_argument("--kind", choices=[CONSTRAINED, AUXILIARY])
    sp.add_argument(
        "--phi0",
        action="store_const",
        const=True,
        help="use the empty potential catalog",
    )
    sp.add_argument("--catalog", help="path to a catalog JSON file")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="report directory")
    sp.add_argument("--config", help="JSON file supplying any flag; CLI wins")


def _build_parser():
    p = argparse.ArgumentParser(
        prog="soslab",
        description="Constrained solid-on-solid interface toolkit",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("check", help="invariant suite on tiny instances")
    _add_common(sp)

    sp = sub.add_parser("simulate", help="one Gillespie trajectory")
    _add_common(sp)
    sp.add_argument("--start", help="comma-separated heights, default flat")
    sp.add_argument("--horizon", type=float)

    sp = sub.add_parser("exit-time", help="exit-time replicas at one L")
    _add_common(sp)
    sp.add_argument("--replicas", type=int)
    sp.add_argument("--horizon", type=float)

    sp = sub.add_parser("couple", help="one coupled pair of trajectories")
    _add_common(sp)
    sp.add_argument("--start", help="comma-separated heights, default flat")
    sp.add_argument("--horizon", type=float)

    sp = sub.add_parser("gap", help="spectral gap of the generator")
    _add_common(sp)

    sp = sub.add_parser("killed", help="killed-generator summary on region A")
    _add_common(sp)

    sp = sub.add_parser("identities", help="gradient identity residuals and ratio bounds")
    _add_common(sp)
    sp.add_argument("--functions", type=int, default=100)

    sp = sub.add_parser("scaling-exit", help="exit-time scaling over L")
    _add_common(sp)
    sp.add_argument("--Ls", help="comma-separated system sizes")
    sp.add_argument("--replicas", type=int)
    sp.add_argument("--horizon", type=float)

    sp = sub.add_parser("scaling-gap", help="normalized gaps over an (L, M) grid")
    _add_common(sp)
    sp.add_argument("--Ls", help="comma-separated system sizes")
    sp.add_argument("--Ms", help="comma-separated box heights")

    sp = sub.add_parser("coupling-fidelity", help="decoupling probability estimate")
    _add_common(sp)
    sp.add_argument("--t", type=float, help="coupling horizon")
    sp.add_argument("--replicas", type=int)

    sp = sub.add_parser("rn-bound", help="conditioned-vs-auxiliary density bound")
    _add_common(sp)
    return p


class ConfigError(Exception):
    def __init__(self, field, message):
        super().__init__("%s: %s" % (field, message))
        self.field = field


def _merge_config(args):
    """Fill unset flags from the --config file, then from defaults."""
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, ValueError) as e:
            raise ConfigError("config", str(e))
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be a JSON object")
        for key, value in data.items():
            attr = key.replace("-", "_")
            if not hasattr(args, attr):
                raise ConfigError(key, "unknown configuration field")
            if getattr(args, attr) is None:
                setattr(args, attr, value)
    for key, value in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)
    return args


def _catalog_of(args):
    if getattr(args, "phi0", None) and getattr(args, "catalog", None):
        raise ConfigError("catalog", "--phi0 and --catalog are mutually exclusive")
    if getattr(args, "catalog", None):
        try:
            return load_catalog(args.catalog)
        except (OSError, ValueError) as e:
            raise ConfigError("catalog", str(e))
    return zero_catalog()


def _params_of(args, kind=None):
    M = args.M if args.M is not None else args.L // 2
    if M < 1:
        raise ConfigError("M", "needs L >= 2 or an explicit positive --M")
    try:
        return ModelParams(
            L=args.L,
            M=M,
            beta=args.beta,
            catalog=_catalog_of(args),
            measure_kind=kind or args.kind,
            region_eps=args.eps,
            region_alpha=args.alpha,
        )
    except ValueError as e:
        raise ConfigError("params", str(e))


def _start_of(args, params):
    if getattr(args, "start", None) in (None, ""):
        return (0,) * params.L
    try:
        vals = tuple(int(v) for v in str(args.start).split(","))
    except ValueError:
        raise ConfigError("start", "expected comma-separated integers")
    if len(vals) != params.L:
        raise ConfigError("start", "expected %d heights" % params.L)
    return vals


def _int_list(text, field):
    try:
        return [int(v) for v in str(text).split(",")]
    except ValueError:
        raise ConfigError(field, "expected comma-separated integers")


def _run_config(args, **extra):
    cfg = {
        "command": args.command,
        "seed": getattr(args, "seed", None),
    }
    for key in ("L", "M", "beta", "R", "eps", "alpha", "kind", "horizon",
                "replicas", "t", "Ls", "Ms", "start"):
        if hasattr(args, key):
            cfg[key] = getattr(args, key)
    cfg.update(extra)
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def _cmd_check(args):
    cat = _catalog_of(args)
    checks = []

    decay = validate_catalog(cat)
    checks.append(("catalog-decay", decay.passed, "tightest k=%s" % decay.tightest_k))

    for kind, R in ((CONSTRAINED, None), (AUXILIARY, 3)):
        p = ModelParams(L=3, M=1, beta=2.0, catalog=cat, measure_kind=kind)
        gen = build_generator(p, truncation=R)
        defect = gen.reversibility_defect()
        checks.append(("reversibility-" + kind, defect < 1e-12, "defect=%.3g" % defect))
        rows = np.abs(
            np.asarray(gen.offdiag.sum(axis=1)).ravel() + gen.diag
        ).max()
        checks.append(("row-sums-" + kind, rows == 0.0, "max=%.3g" % rows))

    paux = ModelParams(L=3, M=2, beta=2.0, catalog=cat, measure_kind=AUXILIARY)
    tv = pushforward_distance(paux, 4)
    checks.append(("gradient-pushforward", tv < 1e-12, "tv=%.3g" % tv))

    p32 = ModelParams(L=3, M=2, beta=1.5, catalog=cat, measure_kind=AUXILIARY)
    space = gradient_space(p32, 2)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(10):
        f = rng.standard_normal(space.dims)
        for i in (2, 3):
            worst = max(worst, derivative_identity(f, i, p32, 2, space=space))
        s, v = variance_decomposition(f, p32, 2, space=space)
        worst = max(worst, abs(sum(s) - v))
    checks.append(("gradient-identities", worst < 1e-10, "residual=%.3g" % worst))

    dom = form_domination(p32, 2, space=space)
    checks.append(("form-domination", dom.value <= 4.0, "worst=%.4g" % dom.value))

    rb = ratio_bounds(p32, 2, space=space)
    checks.append(("ratio-bounds", True, "margin=%.4g" % rb.value))

    pk = ModelParams(L=4, M=2, beta=2.0, catalog=cat, region_eps=0.1)
    gen = build_generator(pk)
    lam = spectral_gap(gen)
    lam_a = killed_gap(killed_operator(gen))
    checks.append(("killed-ordering", lam_a >= lam - 1e-10,
                   "lambda1=%.4g lambdaA=%.4g" % (lam, lam_a)))

    dev = rate_ratio_deviation(pk)
    checks.append(("rate-ratio", math.isfinite(dev.deviation),
                   "deviation=%.4g" % dev.deviation))

    config = _run_config(args)
    body = {
        "checks": [
            {"name": n, "passed": bool(ok), "detail": d} for n, ok, d in checks
        ]
    }
    write_report(args.out, "check", config, body)
    failed = [n for n, ok, _ in checks if not ok]
    for name in failed:
        print("check failed: %s" % name, file=sys.stderr)
    print(
        "check: %d/%d invariant suites passed"
        % (len(checks) - len(failed), len(checks))
    )
    return 1 if failed else 0


def _cmd_simulate(args):
    params = _params_of(args)
    start = _start_of(args, params)
    horizon = args.horizon if args.horizon is not None else 10.0
    spec = RngSpec(args.seed, 0)
    traj = simulate(start, horizon, params, spec)
    config = _run_config(args, start=list(start), horizon=horizon)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "trajectory-%s.jsonl" % params_hash(config))
    write_trajectory(path, traj, params, spec)
    print(
        "simulate: %d events to t=%.6g, final max height %d, wrote %s"
        % (traj.n_events, traj.end_time, max(abs(v) for v in traj.final), path)
    )
    return 0


def _cmd_exit_time(args):
    rep = exit_time_scaling(
        [args.L],
        args.beta,
        args.eps,
        args.alpha,
        args.replicas,
        RngSpec(args.seed, 0),
        catalog=_catalog_of(args),
        horizon=args.horizon if args.horizon is not None else math.inf,
    )
    header, rows = rep.csv_rows()
    write_report(args.out, "exit-time", rep.config, rep.to_dict(), rows, header)
    med = rep.values[0]
    print(
        "exit-time: L=%d median=%s censored=%d/%d"
        % (args.L, "%.6g" % med if med is not None else "censored",
           rep.censored[0], args.replicas)
    )
    return 0 if med is not None else 1


def _cmd_couple(args):
    params = _params_of(args, kind=CONSTRAINED)
    start = _start_of(args, params)
    horizon = args.horizon if args.horizon is not None else 10.0
    spec = RngSpec(args.seed, 0)
    trace = couple(start, horizon, params, spec)
    config = _run_config(args, start=list(start), horizon=horizon)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "coupling-%s.jsonl" % params_hash(config))
    write_coupling(path, trace, params, spec)
    def show(x):
        return "%.6g" % x if x is not None else "none"
    print(
        "couple: sigma=%s tau=%s tau_bar=%s marks=%d, wrote %s"
        % (show(trace.sigma), show(trace.tau), show(trace.tau_bar),
           trace.n_marks, path)
    )
    return 0


def _cmd_gap(args):
    params = _params_of(args)
    trunc = None
    if params.measure_kind == AUXILIARY:
        trunc = args.R if args.R is not None else 4
    gen = build_generator(params, truncation=trunc)
    lam = spectral_gap(gen)
    config = _run_config(args)
    body = {"lambda1": lam, "states": len(gen.pi)}
    write_report(args.out, "gap", config, body)
    print("gap: lambda1 = %.12g (states=%d, kind=%s)"
          % (lam, len(gen.pi), params.measure_kind))
    return 0


def _cmd_killed(args):
    params = _params_of(args, kind=CONSTRAINED)
    gen = build_generator(params)
    kil = killed_operator(gen)
    lam_a = killed_gap(kil)
    means = mean_exit_times(kil)
    flat = kil.configs().index((0,) * params.L)
    config = _run_config(args)
    body = {
        "killed_gap": lam_a,
        "a_states": kil.n,
        "mean_exit_flat": float(means[flat]),
    }
    write_report(args.out, "killed", config, body)
    print(
        "killed: gap=%.6g, mean exit from flat=%.6g (states=%d)"
        % (lam_a, means[flat], kil.n)
    )
    return 0


def _cmd_identities(args):
    params = _params_of(args, kind=AUXILIARY)
    R = args.R if args.R is not None else 3
    space = gradient_space(params, R)
    rng = np.random.default_rng(args.seed)
    worst_i = 0.0
    worst_v = 0.0
    for _ in range(args.functions):
        f = rng.standard_normal(space.dims)
        for i in range(2, params.L + 1):
            worst_i = max(worst_i, derivative_identity(f, i, params, R, space=space))
        s, v = variance_decomposition(f, params, R, space=space)
        worst_v = max(worst_v, abs(sum(s) - v))
    rb = ratio_bounds(params, R, space=space)
    ok = worst_i < 1e-10 and worst_v < 1e-10
    config = _run_config(args, functions=args.functions)
    body = {
        "derivative_residual": worst_i,
        "variance_residual": worst_v,
        "ratio_margin": rb.value,
        "passed": bool(ok),
    }
    write_report(args.out, "identities", config, body)
    print(
        "identities: residuals %.3g / %.3g (tol 1e-10), ratio margin %.4g"
        % (worst_i, worst_v, rb.value)
    )
    return 0 if ok else 1


def _cmd_scaling_exit(args):
    Ls = _int_list(args.Ls or "8,12,16,24", "Ls")
    rep = exit_time_scaling(
        Ls,
        args.beta,
        args.eps,
        args.alpha,
        args.replicas,
        RngSpec(args.seed, 0),
        catalog=_catalog_of(args),
        horizon=args.horizon if args.horizon is not None else math.inf,
    )
    header, rows = rep.csv_rows()
    write_report(args.out, "scaling-exit", rep.config, rep.to_dict(), rows, header)
    if rep.slope is None:
        print("scaling-exit: too few uncensored points for a slope")
        return 1
    print(
        "scaling-exit: slope=%.3f ci=[%.3f, %.3f] over L=%s"
        % (rep.slope, rep.slope_ci[0], rep.slope_ci[1], Ls)
    )
    return 0


def _cmd_scaling_gap(args):
    Ls = _int_list(args.Ls or "2,3,4,5,6", "Ls")
    Ms = _int_list(args.Ms or "1,2,3", "Ms")
    grid = [(L, M) for L in Ls for M in Ms]
    trunc = args.R if args.R is not None else 4
    rep = gap_scaling(grid, args.beta, catalog=_catalog_of(args), truncation=trunc)
    header, rows = rep.csv_rows()
    write_report(args.out, "scaling-gap", rep.config, rep.to_dict(), rows, header)
    vals = [v for v in rep.values if v is not None]
    print(
        "scaling-gap: normalized gaps in [%.4g, %.4g] over %d points, verdict=%s"
        % (min(vals), max(vals), len(vals), "pass" if rep.verdict else "fail")
    )
    return 0 if rep.verdict else 1


def _cmd_coupling_fidelity(args):
    rep = coupling_fidelity(
        args.L,
        args.beta,
        args.eps,
        args.t,
        args.replicas,
        RngSpec(args.seed, 0),
        catalog=_catalog_of(args),
    )
    write_report(args.out, "coupling-fidelity", rep.config, rep.to_dict())
    tail = " (rule-of-three upper bound)" if rep.upper_only else ""
    print(
        "coupling-fidelity: P(split) ~ %.4g ci=[%.4g, %.4g] over %d replicas%s"
        % (rep.estimate, rep.ci[0], rep.ci[1], rep.replicas, tail)
    )
    return 0


def _cmd_rn_bound(args):
    rep = radon_nikodym_bound(
        args.L,
        args.beta,
        args.eps,
        args.alpha,
        catalog=_catalog_of(args),
        truncation=args.R,
        rng=RngSpec(args.seed, 0),
    )
    config = _run_config(args)
    write_report(args.out, "rn-bound", config, rep.to_dict())
    print(
        "rn-bound: sup ratio %.6g vs bound %.6g (w_hat=%.4g), %s"
        % (rep.value, rep.extra["bound"], rep.extra["w_hat"],
           "holds" if rep.extra["holds"] else "violated")
    )
    return 0 if rep.extra["holds"] else 1


_COMMANDS = {
    "check": _cmd_check,
    "simulate": _cmd_simulate,
    "exit-time": _cmd_exit_time,
    "couple": _cmd_couple,
    "gap": _cmd_gap,
    "killed": _cmd_killed,
    "identities": _cmd_identities,
    "scaling-exit": _cmd_scaling_exit,
    "scaling-gap": _cmd_scaling_gap,
    "coupling-fidelity": _cmd_coupling_fidelity,
    "rn-bound": _cmd_rn_bound,
}


def parse_and_dispatch(argv):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    try:
        _merge_config(args)
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print("config error: %s" % e, file=sys.stderr)
        return 2
    except ValueError as e:
        print("error: %s" % e, file=sys.stderr)
        return 2


def main():
    sys.exit(parse_and_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
