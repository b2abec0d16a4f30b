"""``mcno`` command line: gen-data, train, eval, verify-bound, gradcheck, sweep.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import io
from .mc_bound import KERNELS, TrialConfig, run_trials
from .model import MCNOConfig, init_model
from .rng import Rng
from .spectral import PDE_DEFAULTS, BurgersParams, KdvParams, generate_dataset
from .training import TrainConfig, evaluate, train

DEFAULT_SAMPLES = {"burgers": 100, "kdv": 75}


def int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


# ----------------------------------------------------------------------------
# gen-data


def cmd_gen_data(args):
    pde = args.pde
    d = PDE_DEFAULTS[pde]
    hi = args.hi_res or d["hi_res"]
    res = args.res or [r for r in d["resolutions"] if r <= hi]
    if pde == "burgers":
        params = BurgersParams(nu=args.nu, dt=args.dt or 1e-4, n_hi=hi)
    else:
        params = KdvParams(dt=args.dt or 1e-4, n_hi=hi)
    sets = generate_dataset(pde, args.n, hi, res, seed=args.seed, params=params, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    for r, ds in sets.items():
        path = os.path.join(args.out, f"{pde}_s{r}.mcnd")
        io.save_dataset(path, ds)
        print(f"{path}: n={ds.n_samples} s={r} u min={ds.u.min():.6g} max={ds.u.max():.6g} "
              f"mean={ds.u.mean():.6g}")
    return 0


# ----------------------------------------------------------------------------
# train / sweep

_MODEL_FLAGS = {"dv": "d_v", "layers": "n_layers", "samples": "n_samples",
                "variant": "kernel_variant", "d_proj": "d_proj"}
_TRAIN_FLAGS = {"epochs": "epochs", "batch": "batch_size", "lr": "base_lr",
                "halving": "halving_period", "seed": "seed",
                "checkpoint_every": "checkpoint_every"}


def _resolve_configs(args, pde):
    """Built-in defaults < --config file < explicitly passed flags."""
    model_kw = {"n_samples": DEFAULT_SAMPLES.get(pde, 100)}
    train_kw = {}
    if args.config:
        io.load_config(args.config)
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        model_kw.update(raw.get("model", {}))
        train_kw.update(raw.get("train", {}))
    for flag, key in _MODEL_FLAGS.items():
        if getattr(args, flag) is not None:
            model_kw[key] = getattr(args, flag)
    if args.no_coordinate:
        model_kw["include_coordinate"] = False
    if args.no_normalize:
        train_kw["normalize"] = False
    for flag, key in _TRAIN_FLAGS.items():
        if getattr(args, flag) is not None:
            train_kw[key] = getattr(args, flag)
    return MCNOConfig(**model_kw), TrainConfig(**train_kw)


def _load_split(args):
    if args.config:
        io.load_config(args.config)  # fail on schema errors before touching the data
    ds = io.load_dataset(args.data)
    return ds, ds.split(args.n_train, args.n_test)


def _train_one(model_cfg, train_cfg, tr, te, out):
    model = init_model(model_cfg, tr.resolution, Rng(train_cfg.seed))
    report = train(model, tr, te, train_cfg, out_dir=out)
    if out:
        io.export_metrics(os.path.join(out, "metrics.csv"), report)
    return model, report


def cmd_train(args):
    ds, (tr, te) = _load_split(args)
    model_cfg, train_cfg = _resolve_configs(args, ds.pde)
    _, report = _train_one(model_cfg, train_cfg, tr, te, args.out)
    print(f"final test rel-L2: {report.final_test:.6g}")
    print(f"mean seconds/epoch: {report.mean_epoch_seconds:.4g}")
    return 0


def cmd_sweep(args):
    ds, (tr, te) = _load_split(args)
    rows = []
    for value in args.values:
        args.samples = value
        model_cfg, train_cfg = _resolve_configs(args, ds.pde)
        out = os.path.join(args.out, f"samples_{value}") if args.out else None
        _, report = _train_one(model_cfg, train_cfg, tr, te, out)
        rows.append([value, io.decimal(report.final_test), io.decimal(report.mean_epoch_seconds)])
        print(f"N={value}: test rel-L2 {report.final_test:.6g}, "
              f"{report.mean_epoch_seconds:.4g} s/epoch")
    if args.out:
        io._write_csv(os.path.join(args.out, "sweep.csv"),
                      ["n_samples", "test_rel_l2", "seconds_per_epoch"], rows)
    return 0


# ----------------------------------------------------------------------------
# eval


def cmd_eval(args):
    model = io.load_checkpoint(args.ckpt)
    print("resolution,test_rel_l2")
    for path in args.data:
        ds = io.load_dataset(path)
        if args.resolution:
            ds = ds.at_resolution(args.resolution)
        n_test = min(args.n_test, ds.n_samples)
        test = ds.take(slice(ds.n_samples - n_test, ds.n_samples))
        print(f"{ds.resolution},{evaluate(model, test):.12g}")
    return 0


# ----------------------------------------------------------------------------
# verify-bound / gradcheck


def cmd_verify_bound(args):
    cfg = TrialConfig(kernel=args.kernel, n_grid=tuple(args.ngrid), n=tuple(args.n),
                      delta=args.delta, trials=args.trials, probes=args.probes,
                      seed=args.seed, replace=args.replace)
    report = run_trials(cfg, jobs=args.jobs)
    if args.out:
        io.export_bound_report(args.out, report)
    print("n_grid,n,bias_sup,bound_theorem,bound_appendix,coverage,quantile_sup_error")
    for c in report.cells:
        print(f"{c['n_grid']},{c['n']},{c['bias_sup']:.3e},{c['bound_theorem']:.4f},"
              f"{c['bound_appendix']:.4f},{c['coverage']:.3f},{c['quantile_sup_error']:.4f}")
    for g, s in report.deviation_slopes.items():
        print(f"deviation-quantile slope vs N at n_grid={g}: {s:.3f}")
    ok = report.min_coverage >= 1.0 - cfg.delta
    print(f"min coverage {report.min_coverage:.3f} ({'ok' if ok else 'BELOW'} 1-delta="
          f"{1 - cfg.delta:.3f})")
    return 0 if ok else 1


def cmd_gradcheck(args):
    from .checks import run_gradcheck

    ok = True
    for name, rep in run_gradcheck(args.scope, args.seed, h=args.h, tol=args.tol):
        print(f"{name}: {rep}")
        ok &= rep.passed
    return 0 if ok else 1


# ----------------------------------------------------------------------------
# parser


def _add_train_flags(p):
    p.add_argument("--data", required=True, help="dataset file (.mcnd)")
    p.add_argument("--n-train", type=int, default=1000)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--dv", type=int, default=None, help="latent width (default 64)")
    p.add_argument("--layers", type=int, default=None, help="kernel layers (default 4)")
    p.add_argument("--samples", type=int, default=None,
                   help="Monte Carlo samples N (default 100 Burgers, 75 KdV)")
    p.add_argument("--variant", choices=["interp", "global"], default=None,
                   help="kernel variant (default interp)")
    p.add_argument("--d-proj", type=int, default=None, help="projection width (default 128)")
    p.add_argument("--no-coordinate", action="store_true", help="do not feed x to the lift")
    p.add_argument("--no-normalize", action="store_true",
                   help="keep raw input/output units instead of RMS scaling")
    p.add_argument("--epochs", type=int, default=None, help="default 500")
    p.add_argument("--batch", type=int, default=None, help="default 20")
    p.add_argument("--lr", type=float, default=None, help="default 1e-3")
    p.add_argument("--halving", type=int, default=None, help="lr halving period (default 100)")
    p.add_argument("--checkpoint-every", type=int, default=None, help="default 100")
    p.add_argument("--seed", type=int, default=None, help="default 0")
    p.add_argument("--config", help="JSON with 'model'/'train' sections; flags override it")
    p.add_argument("--out", help="output directory for metrics and checkpoints")


def build_parser():
    parser = argparse.ArgumentParser(prog="mcno", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate Burgers/KdV datasets")
    p.add_argument("--pde", choices=sorted(PDE_DEFAULTS), default="burgers")
    p.add_argument("--n", type=int, default=1100, help="number of samples")
    p.add_argument("--hi-res", type=int, default=None, help="solver grid (8192 Burgers, 1024 KdV)")
    p.add_argument("--res", type=int_list, default=None, help="comma-separated output resolutions")
    p.add_argument("--nu", type=float, default=0.1, help="Burgers viscosity")
    p.add_argument("--dt", type=float, default=None, help="solver time step (default 1e-4)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train an MCNO model")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, nargs="+", help="one or more dataset files")
    p.add_argument("--resolution", type=int, default=None, help="subsample data to this grid")
    p.add_argument("--n-test", type=int, default=100, help="evaluate the last N samples")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify-bound", help="Monte Carlo estimation-error bound trials")
    p.add_argument("--kernel", choices=sorted(KERNELS), default="gauss")
    p.add_argument("--ngrid", type=int_list, default=[16, 64, 256, 1024])
    p.add_argument("--n", type=int_list, default=[25, 50, 100, 200, 400])
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--probes", type=int, default=256)
    p.add_argument("--replace", action="store_true", help="sample grid points with replacement")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="report prefix; writes PREFIX.json and PREFIX.csv")
    p.set_defaults(func=cmd_verify_bound)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--scope", choices=["ops", "model", "all"], default="ops")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="train across Monte Carlo sample counts")
    p.add_argument("--vary", choices=["samples"], default="samples")
    p.add_argument("--values", type=int_list, default=[25, 50, 75, 100, 150])
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as e:  # runtime failures map to exit code 1
        print(f"mcno {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
