"""Command-line front end: ``saesci {fit,predict,sci,test,simulate,direct}``.

Every output carries a provenance header (tool version, seed, config hash)
and no timestamps, so rerunning a command with the same inputs, flags and
seed reproduces its files byte for byte for any ``--threads`` value.

Exit codes: 0 success, 1 input or validation error, 2 numerical
non-convergence, 3 bootstrap failure rate exceeded.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .area import FitOptions, fit_area_model, nb_information, predict_area
from .bootstrap import (
    BootstrapConfig,
    bootstrap_area,
    bootstrap_unit,
    mtp_from_ensemble,
    paired_difference_contrast,
    sci,
    write_json,
)
from .data import direct_estimators, load_area_csv, load_unit_csv, write_area_csv
from .errors import (
    BootstrapFailure,
    DegenerateDispersionWarning,
    DimensionMismatch,
    NonConvergence,
    NumericalError,
    SaeError,
    ValidationError,
)
from .numerics import order_statistic_index
from .simulate import Scenario, run_reliability
from .unit import AGQConfig, fit_unit_model, unit_cells, unit_ebp

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_BOOTSTRAP = 0, 1, 2, 3
SEED_ENV = "SAE_SIMUL_SEED"

# flags that never change results and therefore stay out of the config hash
_NEUTRAL = {"threads", "out", "data", "class_sizes", "contrast", "scenario", "func", "area_out"}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def provenance(args: argparse.Namespace) -> dict:
    """Version, seed and a hash over the flags and input file contents."""
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in _NEUTRAL}
    for key in ("data", "class_sizes", "contrast", "scenario"):
        path = getattr(args, key, None)
        if path:
            cfg[f"{key}_sha256"] = _file_digest(path)
    target = getattr(args, "target", None)
    if target and os.path.exists(target):
        cfg["target_sha256"] = _file_digest(target)
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return {"tool": "saesci", "version": __version__, "seed": args.seed,
            "config_hash": hashlib.sha256(blob).hexdigest()[:16]}


def _header_lines(prov: dict) -> list[str]:
    return [f"{k}={prov[k]}" for k in sorted(prov)]


def resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise CliError(f"{SEED_ENV} must be an integer, got {env!r}") from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise CliError(f"output directory {out} is not writable")
    return out


def _load(args):
    if args.data is None:
        raise CliError("--data is required")
    if args.model == "area":
        return load_area_csv(args.data)
    return load_unit_csv(args.data, args.class_sizes)


def _boot_cfg(args) -> BootstrapConfig:
    return BootstrapConfig(B1=args.B1, B2=args.B2, alpha=args.alpha, seed=args.seed,
                           sigma_kind=args.sigma, threads=args.threads)


def _fit(args, data, out: Path, prov: dict):
    """Fit the model; on non-convergence write fit_failed.json and re-raise."""
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateDispersionWarning)
            if args.model == "area":
                fit = fit_area_model(data, FitOptions(algorithm=args.algorithm, max_iter=args.max_iter))
            else:
                fit = fit_unit_model(unit_cells(data), AGQConfig(q=args.q, mc_draws=args.mc_draws))
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    except NonConvergence as exc:
        write_json({"error": str(exc), "diagnostics": exc.diagnostics}, out / "fit_failed.json", prov)
        raise
    return fit


def cmd_fit(args) -> int:
    out = _out_dir(args)
    prov = provenance(args)
    data = _load(args)
    fit = _fit(args, data, out, prov)
    payload = fit.to_dict()
    payload["covariates"] = list(data.covariate_names)
    write_json(payload, out / "fit.json", prov)
    return EXIT_OK


def _area_vcov(fit, data) -> np.ndarray:
    """Inverse observed information mapped from (beta, alpha) to (beta, delta)."""
    info = nb_information(data, fit.params, "observed")
    jac = np.ones(data.p + 1)
    jac[-1] = -fit.params.delta ** 2
    return np.linalg.inv(info) * np.outer(jac, jac)


def _write_csv(path, prov: dict, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in _header_lines(prov):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def cmd_predict(args) -> int:
    out = _out_dir(args)
    prov = provenance(args)
    data = _load(args)
    fit = _fit(args, data, out, prov)
    write_json(fit.to_dict(), out / "fit.json", prov)
    if args.model == "area":
        pred = predict_area(fit, data, vcov=_area_vcov(fit, data))
        rows = [[r.area_id, _fmt(r.mu_hat), _fmt(r.prop_hat), _fmt(r.g1), _fmt(r.mse_plugin)] for r in pred.rows()]
        _write_csv(out / "predictions.csv", prov, ["area", "ebp", "prop", "g1", "mse_plugin"], rows)
    else:
        pred = unit_ebp(unit_cells(data), fit.params, AGQConfig(q=args.q, mc_draws=args.mc_draws),
                        seed=args.seed, key=(0,))
        rows = [[a, _fmt(pred.mu_hat[d]), _fmt(pred.prop_hat[d]), _fmt(pred.u_hat[d])]
                for d, a in enumerate(data.area_ids)]
        _write_csv(out / "predictions.csv", prov, ["area", "ebp", "prop", "u_hat"], rows)
    return EXIT_OK


def _ensemble(args, data, fit, cfg):
    if args.model == "area":
        return bootstrap_area(data, fit, cfg)
    agq = AGQConfig(q=args.q, mc_draws=args.mc_draws)
    return bootstrap_unit(unit_cells(data), fit, cfg, agq, area_ids=data.area_ids)


def cmd_sci(args) -> int:
    out = _out_dir(args)
    prov = provenance(args)
    cfg = _boot_cfg(args)
    data = _load(args)
    fit = _fit(args, data, out, prov)
    ens = _ensemble(args, data, fit, cfg)
    res = sci(ens, cfg=cfg, statistic=args.statistic)
    res.write_csv(out / "intervals.csv", _header_lines(prov))
    side = {"q": res.q_sci, "B1": cfg.B1, "B2": cfg.B2, "seed": cfg.seed, "alpha": cfg.alpha,
            "order_index": res.order_index, "replicates_used": res.n_replicates,
            "failures": ens.failures, "sigma_kind": res.sigma_kind.value, "statistic": res.statistic,
            "mean_width_prop": float(res.width_prop.mean()), "fit": fit.to_dict()}
    write_json(side, out / "intervals.json", prov)
    return EXIT_OK


def _read_matrix(path) -> np.ndarray:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.reader(ln for ln in fh if ln.strip() and not ln.startswith("#")):
            try:
                rows.append([float(v) for v in rec])
            except ValueError as exc:
                raise CliError(f"{path}: non-numeric contrast entry in row {len(rows) + 1}") from exc
    if not rows or len({len(r) for r in rows}) != 1:
        raise CliError(f"{path}: contrast must be a non-empty rectangular numeric matrix")
    return np.array(rows)


def _read_target(spec: str | None, n: int) -> np.ndarray:
    if spec is None:
        return np.zeros(n)
    if os.path.exists(spec):
        vals = _read_matrix(spec).reshape(-1)
    else:
        try:
            vals = np.array([float(v) for v in spec.split(",")])
        except ValueError as exc:
            raise CliError(f"--target must be a file or comma-separated numbers, got {spec!r}") from exc
    return vals


def cmd_test(args) -> int:
    out = _out_dir(args)
    prov = provenance(args)
    cfg = _boot_cfg(args)
    data = _load(args)
    if args.paired_diff == (args.contrast is not None):
        raise CliError("give exactly one of --contrast or --paired-diff")
    B = paired_difference_contrast(data.D) if args.paired_diff else _read_matrix(args.contrast)
    if B.shape[1] != data.D:
        raise DimensionMismatch(f"contrast has {B.shape[1]} columns but the data have {data.D} areas")
    b = _read_target(args.target, B.shape[0])
    if b.size != B.shape[0]:
        raise DimensionMismatch(f"target has {b.size} entries, contrast has {B.shape[0]} rows")
    fit = _fit(args, data, out, prov)
    ens = _ensemble(args, data, fit, cfg)
    res = mtp_from_ensemble(ens, B, b, cfg.alpha, scale=args.scale)
    payload = res.to_dict()
    payload.update({"B1": cfg.B1, "seed": cfg.seed, "scale": args.scale,
                    "order_index": order_statistic_index(cfg.alpha, ens.n_ok)})
    write_json(payload, out / "test.json", prov)
    return EXIT_OK


def _parse_deltas(text: str | None) -> tuple[float, ...]:
    if not text:
        return ()
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise CliError(f"--power-deltas must be comma-separated numbers, got {text!r}") from exc


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    prov = provenance(args)
    if args.scenario:
        try:
            with open(args.scenario, encoding="utf-8") as fh:
                spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CliError(f"{args.scenario}: invalid JSON ({exc})") from exc
    else:
        spec = {"model": args.model, "K": args.K, "B1": args.B1, "B2": args.B2, "alpha": args.alpha,
                "D_mode": args.D_mode, "power_deltas": list(_parse_deltas(args.power_deltas))}
    spec["seed"] = args.seed
    spec["threads"] = args.threads
    scenario = Scenario.from_dict(spec)
    report = run_reliability(scenario)
    report.write(out, prov)
    return EXIT_OK


def cmd_direct(args) -> int:
    out = _out_dir(args)
    prov = provenance(args)
    units = load_unit_csv(args.data, args.class_sizes)
    est = direct_estimators(units)
    names = list(units.covariate_names[1:])
    rows = [[a, _fmt(est.Y[d]), _fmt(est.N[d]), *(_fmt(v) for v in est.X_mean[d, 1:])]
            for d, a in enumerate(est.area_ids)]
    _write_csv(out / "direct.csv", prov, ["area", "Y_hat", "N_hat", *names], rows)
    write_area_csv(est.to_area_dataset(), out / "area.csv")
    return EXIT_OK


def _common(p: argparse.ArgumentParser, boot: bool = False, data: bool = True) -> None:
    p.add_argument("--model", choices=("area", "unit"), default="area")
    if data:
        p.add_argument("--data", help="area CSV (area,y,N,x..) or unit CSV (area,y,m,w,x..)")
        p.add_argument("--class-sizes", dest="class_sizes", help="unit class sizes CSV (area,class,N)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=None, help=f"master seed (fallback: ${SEED_ENV}, then 0)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--algorithm", choices=("fisher", "newton"), default="fisher")
    p.add_argument("--max-iter", dest="max_iter", type=int, default=100)
    p.add_argument("--q", type=int, default=15, help="AGQ nodes (unit model)")
    p.add_argument("--mc-draws", dest="mc_draws", type=int, default=2000, help="EBP draws (unit model)")
    if boot:
        p.add_argument("--B1", type=int, default=1000)
        p.add_argument("--B2", type=int, default=1)
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--sigma", default="g1",
                       choices=("g1", "plugin", "boot", "boot-bc", "mse-boot", "mse-boot-bc", "mse-plugin"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saesci", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"saesci {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="maximum likelihood fit, writes fit.json")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="EBPs with g1 and plug-in MSE, writes predictions.csv")
    _common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sci", help="bootstrap simultaneous intervals, writes intervals.csv")
    _common(p, boot=True)
    p.add_argument("--statistic", choices=("S", "R"), default="S")
    p.set_defaults(func=cmd_sci)

    p = sub.add_parser("test", help="max-type test of H0: B zeta = b, writes test.json")
    _common(p, boot=True)
    p.add_argument("--contrast", help="CSV matrix B (one row per contrast, D columns)")
    p.add_argument("--paired-diff", dest="paired_diff", action="store_true",
                   help="contrast rows e_(2d-1) - e_(2d) over consecutive areas")
    p.add_argument("--target", help="b as a CSV file or comma-separated values (default 0)")
    p.add_argument("--scale", choices=("prop", "count"), default="prop")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("simulate", help="reliability study, writes report.json and tidy CSVs")
    _common(p, boot=True, data=False)
    p.add_argument("--scenario", help="scenario JSON (overrides --model/--K/--B1/...)")
    p.add_argument("--K", type=int, default=500)
    p.add_argument("--D-mode", dest="D_mode", choices=("original", "half", "extended"), default="original")
    p.add_argument("--power-deltas", dest="power_deltas", help="comma-separated shifts for the power study")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("direct", help="weighted direct estimators from unit data")
    p.add_argument("--data", required=True)
    p.add_argument("--class-sizes", dest="class_sizes")
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1, help="accepted for uniformity; direct estimation is serial")
    p.set_defaults(func=cmd_direct)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.seed = resolve_seed(args.seed)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except BootstrapFailure as exc:
        print(f"bootstrap failure: {exc}", file=sys.stderr)
        return EXIT_BOOTSTRAP
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, SaeError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
