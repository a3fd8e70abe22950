"""Command-line frontend: ``ajk <command> [options]``.

Models come either from the catalogue (``--model NAME`` with parameters
given as ``--params key=value ...`` or as bare ``--key value`` pairs; with
no parameters the representative catalogue instance is used) or
from a JSON parameter file (``--model-file``).  Tables are written as CSV
and reports as JSON, to ``--out`` or standard output.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.
"""
from __future__ import annotations

import argparse
import inspect
import json
import re
import sys

import numpy as np

from . import models as _models
from . import termstructure as ts
from .errors import AJKError, ConfigError
from .levy import check_admissible, load_params
from .riccati import conservativeness_check, solve_backward
from .simulate import block_rng, compare_charfn, simulate

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4

_ALIASES = {"lambda": "lam"}


# ---------------------------------------------------------------------------
# argument parsing helpers


def parse_complex(text: str) -> complex:
    """Parse ``"a+bi"``, ``"a"``, ``"bi"`` or ``"a-bi"`` (``j`` also accepted)."""
    s = text.strip().replace(" ", "").replace("i", "j")
    try:
        z = complex(s)
    except ValueError:
        raise ConfigError(f"malformed complex number {text!r}") from None
    if not np.isfinite(z):
        raise ConfigError(f"non-finite complex number {text!r}")
    return z


def parse_vector(text: str, kind=float) -> list:
    parts = [p for p in re.split(r"[;,]", text) if p.strip()]
    if not parts:
        raise ConfigError(f"empty list {text!r}")
    conv = parse_complex if kind is complex else _float
    return [conv(p) for p in parts]


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"not a number: {text!r}") from None


def _value(text: str):
    """Scalar or ``;``/``,``-separated list of floats."""
    if re.search(r"[;,]", text):
        return parse_vector(text)
    return _float(text)


def collect_params(pairs, extra) -> dict:
    """Merge ``key=value`` pairs and leftover ``--key value`` arguments."""
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"parameter {item!r} is not of the form key=value")
        k, v = item.split("=", 1)
        out[_ALIASES.get(k.strip(), k.strip())] = _value(v)
    it = iter(extra or ())
    for tok in it:
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, v = key.split("=", 1)
        else:
            v = next(it, None)
            if v is None:
                raise ConfigError(f"missing value for {tok}")
        key = key.replace("-", "_")
        out[_ALIASES.get(key, key)] = _value(v)
    return out


def build_catalog_model(name: str, params: dict) -> _models.ModelSpec:
    if name not in _models.CATALOG:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(_models.CATALOG)}")
    if not params:
        return _models.default_catalog()[name]
    params = dict(params)
    if name == "ar1_embed":
        sigma = float(params.pop("noise_sigma", params.pop("sigma", 1.0)))
        alpha = params.pop("alpha_schedule", params.pop("alpha", None))
        if alpha is None:
            raise ConfigError("ar1_embed needs alpha=a1;a2;...")
        if params:
            raise ConfigError(f"unknown parameters for ar1_embed: {sorted(params)}")
        noise, sampler = _models.gaussian_noise(sigma)
        return _models.ar1_embed(np.atleast_1d(alpha).tolist(), noise, sampler)
    ctor = _models.CATALOG[name]
    sig = inspect.signature(ctor)
    unknown = set(params) - set(sig.parameters)
    if unknown:
        raise ConfigError(f"unknown parameters for {name}: {sorted(unknown)}")
    for k, v in list(params.items()):
        if k in ("m", "n", "n_steps"):
            params[k] = int(v)
        elif k in ("jump_times", "p") and not isinstance(v, list):
            params[k] = [v] if k == "jump_times" else v
    try:
        return ctor(**params)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_model(args, extra) -> _models.ModelSpec:
    params = collect_params(getattr(args, "params", None), extra)
    if bool(args.model) == bool(args.model_file):
        raise ConfigError("give exactly one of --model and --model-file")
    if args.model_file:
        if params:
            raise ConfigError("--params cannot be combined with --model-file")
        p = load_params(args.model_file)
        x0 = tuple([0.0] * p.d)
        return _models.ModelSpec("file", p, None, None, x0)
    return build_catalog_model(args.model, params)


def _threads(args):
    return getattr(args, "threads", None)


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _u_arg(text, d):
    u = parse_vector(text, complex)
    if len(u) != d:
        raise ConfigError(f"u has {len(u)} coordinates, the model has {d}")
    return np.array(u)


def _x0_arg(text, model):
    if text is None:
        return np.asarray(model.x0, dtype=float)
    x = np.array(parse_vector(text), dtype=float)
    if x.size != model.d:
        raise ConfigError(f"x0 has {x.size} coordinates, the model has {model.d}")
    return x


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args, extra) -> int:
    model = load_model(args, extra)
    u = _u_arg(args.u, model.d)
    T = model.params.driver.horizon if args.T is None else args.T
    sol = solve_backward(model.params, T, u, rtol=args.rtol, atol=args.atol)
    _emit(sol.to_csv(), args.out)
    if args.jumps:
        _emit(sol.jumps_json(), args.jumps)
    return EXIT_OK


def cmd_check(args, extra) -> int:
    model = load_model(args, extra)
    adm = check_admissible(model.params)
    report = {"model": model.name, "admissibility": adm.to_dict()}
    ok = adm.passed
    if adm.passed:
        cons = conservativeness_check(model.params)
        report["conservativeness"] = cons.to_dict()
        ok = cons.conservative
    report["passed"] = bool(ok)
    _emit(dump_json(report), args.out)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_simulate(args, extra) -> int:
    model = load_model(args, extra)
    x0 = _x0_arg(args.x0, model)
    grid = parse_vector(args.grid) if args.grid else None
    T = model.params.driver.horizon if args.T is None else args.T
    ens = simulate(model, x0, T, args.n_paths, args.seed, grid=grid, threads=_threads(args))
    _emit(ens.to_csv(), args.out)
    return EXIT_OK


def cmd_compare(args, extra) -> int:
    model = load_model(args, extra)
    x0 = _x0_arg(args.x0, model)
    T = model.params.driver.horizon if args.T is None else args.T
    if args.u_grid:
        u_grid = [np.array([v]) for v in parse_vector(args.u_grid, complex)] if model.d == 1 else \
            [_u_arg(part, model.d) for part in args.u_grid.split("|")]
    else:
        u_grid = [np.full(model.d, 1j * k / 5) for k in range(1, 11)]
    report = compare_charfn(model, x0, T, u_grid, args.n_paths, args.seed, s=args.s,
                            threads=_threads(args), z_max=args.z_max)
    _emit(dump_json(report), args.out)
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def _ts_model(args, extra) -> ts.TermStructureModel:
    p = collect_params(args.params, extra)
    allowed = {"alpha", "beta", "sigma", "r0", "horizon", "gamma", "jump_times"}
    unknown = set(p) - allowed
    if unknown:
        raise ConfigError(f"unknown term-structure parameters: {sorted(unknown)}")
    jt = p.get("jump_times", [])
    jt = [jt] if not isinstance(jt, list) else jt
    return ts.build_model(args.family, float(p.get("alpha", 0.1)), float(p.get("beta", -0.5)),
                          float(p.get("sigma", 0.1)), float(p.get("r0", 0.05)),
                          float(p.get("horizon", 5.0)), float(p.get("gamma", 0.0)), jt)


def cmd_price(args, extra) -> int:
    m = _ts_model(args, extra)
    maturities = parse_vector(args.maturities)
    t = args.t
    grid = ts.state_grid(m, max(maturities + [t]), args.dt, [t])
    path = ts.simulate_state(m, grid, 1, block_rng(args.seed, 1)[0])
    k = int(np.argmin(np.abs(grid - t)))
    rows = ["t,T,r_t,price"]
    for T in maturities:
        if T < t:
            raise ConfigError(f"maturity {T} is before t={t}")
        price = float(np.ravel(ts.bond_price(m, t, T, path))[0])
        rows.append(",".join(repr(float(v)) for v in (t, T, path.X[0, k, 2], price)))
    _emit("\n".join(rows) + "\n", args.out)
    return EXIT_OK


def cmd_verify_drift(args, extra) -> int:
    m = _ts_model(args, extra)
    if args.perturb != 1.0:
        m = m.with_loadings(m.loadings.perturbed(args.perturb))
    rng = np.random.default_rng(args.seed)
    H = min(m.driver.horizon, args.T_max)
    pairs = np.sort(rng.uniform(0.0, H, size=(args.n_pairs, 2)), axis=1)
    res = [ts.drift_residual(m, float(t), float(T)) for t, T in pairs]
    for ti in m.loadings.jump_times:
        if ti <= H:
            res.append(ts.drift_residual(m, ti, H))
    worst = float(max(res))
    report = {"family": args.family, "n_pairs": args.n_pairs, "seed": args.seed,
              "max_residual": worst, "tolerance": args.tol, "passed": worst < args.tol}
    _emit(dump_json(report), args.out)
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def cmd_verify_martingale(args, extra) -> int:
    m = _ts_model(args, extra)
    check = True
    if args.perturb != 1.0:
        m = m.with_loadings(m.loadings.perturbed(args.perturb))
        check = False
    report = ts.martingale_test(m, args.T, args.n_paths, args.seed, dt=args.dt,
                                z_max=args.z_max, check_drift=check)
    report["family"] = args.family
    _emit(dump_json(report), args.out)
    return EXIT_OK if report["passed"] else EXIT_VERIFY


# ---------------------------------------------------------------------------
# parser


def _model_opts(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--model", help="catalogue model name")
    g.add_argument("--model-file", help="JSON parameter file")
    p.add_argument("--params", nargs="*", default=[], metavar="KEY=VALUE",
                   help="model parameters; lists separated by ';'")


def _common(p):
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--threads", type=int, default=None, help="worker cap (default: AJK_THREADS or 1)")


def _ts_opts(p):
    p.add_argument("--family", choices=["vasicek", "gaussian", "discontinuous"], default="vasicek")
    p.add_argument("--params", nargs="*", default=[], metavar="KEY=VALUE",
                   help="alpha, beta, sigma, r0, horizon, gamma, jump_times")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ajk", description="Affine processes on general time scales.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the Riccati equations backwards")
    _model_opts(p)
    _common(p)
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--u", required=True, help="complex vector, e.g. 0+1i or 0.5i;-1")
    p.add_argument("--rtol", type=float, default=1e-9)
    p.add_argument("--atol", type=float, default=1e-11)
    p.add_argument("--jumps", help="write the jump log JSON here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check", help="admissibility and conservativeness report")
    _model_opts(p)
    _common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", help="simulate paths to CSV")
    _model_opts(p)
    _common(p)
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--n-paths", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0")
    p.add_argument("--grid", help="extra grid times separated by ';'")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare-charfn", help="Monte Carlo vs solver characteristic function")
    _model_opts(p)
    _common(p)
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--s", type=float, default=0.0)
    p.add_argument("--u-grid", help="';'-separated u values (vectors separated by '|')")
    p.add_argument("--n-paths", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0")
    p.add_argument("--z-max", type=float, default=4.0)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("price", help="bond prices along one simulated factor path")
    _ts_opts(p)
    _common(p)
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--maturities", required=True, help="';'-separated maturities")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=float, default=1e-2)
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("verify-drift", help="drift-condition residuals on random (t, T)")
    _ts_opts(p)
    _common(p)
    p.add_argument("--n-pairs", type=int, default=100)
    p.add_argument("--T-max", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--perturb", type=float, default=1.0, help="factor on the first loading")
    p.set_defaults(func=cmd_verify_drift)

    p = sub.add_parser("verify-martingale", help="Monte Carlo martingale test of discounted bonds")
    _ts_opts(p)
    _common(p)
    p.add_argument("--T", type=float, default=2.0)
    p.add_argument("--n-paths", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=float, default=1e-2)
    p.add_argument("--z-max", type=float, default=4.0)
    p.add_argument("--perturb", type=float, default=1.0, help="factor on the first loading")
    p.set_defaults(func=cmd_verify_martingale)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args, extra = ap.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args, extra)
    except AJKError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if exc.kind == "numerical" else EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
