"""Experiment runner: train, sweep, prune, lasso-verify, init-stats.

Every command is a pure function of (config, data files, seed): rerunning
with the same resolved config writes byte-identical artifacts into the same
run directory (keyed by a hash of the resolved config). Exit codes: 0 ok,
2 config error, 3 numeric divergence, 4 data error.
"""

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import init as init_mod
from .data import load_mnist, split_train_val, synth_sparse_regression
from .errors import ConfigError, DataError, DivergedError, LayerCollapseError
from .lasso import FactorizedLassoConfig, factorized_lasso_train, lasso_cd, lasso_objective
from .metrics import sparsity_report
from .model import (
    DenseMlp,
    MlpSpec,
    accuracy,
    load_dense,
    save_checkpoint,
    save_dense,
)
from .ndcore import SeededRng
from .optimizer import (
    EPS_TINY,
    TrainConfig,
    collapse_and_threshold,
    train,
    train_dense,
    write_traces_csv,
    write_traces_json,
)
from .pruning import (
    PruneTarget,
    apply_mask_and_train,
    magnitude_mask,
    posthoc_prune_curve,
    random_mask,
    save_mask,
    snip_mask,
    synflow_prune,
)

CONFIG_VERSION = 1

PROFILES = {
    "ci": {"epochs": 30, "batch_size": 128},
    "paper": {"epochs": 75, "batch_size": 256},
}

_COMMON = {
    "version": CONFIG_VERSION,
    "dataset": "mnist",
    "data_dir": None,
    "layer_sizes": [784, 300, 100, 10],
    "activation": "relu",
    "loss": "softmax_ce",
    "depth": 3,
    "lambda": 3e-05,
    "epochs": None,  # resolved from the profile when null
    "batch_size": None,  # likewise
    "momentum": 0.9,
    "lr": 0.15,
    "schedule": "cosine",
    "milestones": [],
    "gamma": 0.1,
    "init": "dwf",  # standard | varmatch | dwf | root | gpf
    "init_eps": init_mod.DEFAULT_TRUNC_EPS,
    "gpf_k_max": 5,
    "variance_rule": "kaiming",
    "seed": 0,
    "eps_tiny": EPS_TINY,
    "val_fraction": 0.1,
    "train_limit": None,  # cap on training samples, for quick runs
}

DEFAULTS = {
    "train": dict(_COMMON),
    "sweep": dict(
        _COMMON,
        # eighth-decade spacing: the grid holds the reproduction operating
        # points (7.5e-4, 1e-3, 1.33e-3, ...) without interpolation
        lambda_grid={"lo": 1e-6, "hi": 1e-1, "count": 41},
        depth_list=[2, 3],
    ),
    "prune": dict(
        _COMMON,
        method="gmp",
        cr_list=[2.0, 10.0, 50.0, 100.0],
        model_path=None,  # posthoc only: dense .npz to prune
    ),
    "lasso-verify": {
        "version": CONFIG_VERSION,
        "n": 50,
        "p": 10,
        "k_nonzero": 3,
        "noise_sigma": 0.1,
        "n_seeds": 20,
        "depth": 2,
        "lambda_fracs": [0.02, 0.1, 0.5],  # of lambda_max = 2 ||X^T y||_inf
        "steps": 60000,
        "seed": 0,
    },
    "init-stats": {
        "version": CONFIG_VERSION,
        "init": "varmatch",
        "depth": 3,
        "sigma_w": 0.1,
        "n": 100000,
        "init_eps": init_mod.DEFAULT_TRUNC_EPS,
        "gpf_k_max": 5,
        "eps_tiny": EPS_TINY,
        "seed": 0,
    },
}


def resolve_config(command, user_cfg, args):
    defaults = DEFAULTS[command]
    unknown = sorted(set(user_cfg) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config fields for {command}: {', '.join(unknown)}")
    cfg = dict(defaults, **user_cfg)
    if cfg["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {cfg['version']}")
    if args.seed is not None:
        cfg["seed"] = args.seed
    for key, value in PROFILES[args.profile].items():
        if key in cfg and cfg[key] is None:
            cfg[key] = value
    if "data_dir" in cfg:
        resolved = args.data_dir or cfg["data_dir"] or os.environ.get("DWF_DATA_DIR")
        cfg["data_dir"] = str(resolved) if resolved is not None else None
    return cfg


def _scheme(cfg):
    name = cfg["init"]
    if name == "standard":
        return init_mod.Standard()
    if name == "varmatch":
        return init_mod.VarMatch()
    if name == "dwf":
        return init_mod.DwfTruncated(cfg["init_eps"])
    if name == "root":
        return init_mod.Root()
    if name == "gpf":
        return init_mod.GpfTruncated(cfg["gpf_k_max"])
    raise ConfigError(f"unknown init scheme {name!r}")


def _train_config(cfg, **overrides):
    base = dict(
        depth=cfg["depth"],
        lam=cfg["lambda"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        momentum=cfg["momentum"],
        lr=cfg["lr"],
        schedule=cfg["schedule"],
        milestones=tuple(cfg["milestones"]),
        gamma=cfg["gamma"],
        init=_scheme(cfg),
        variance_rule=cfg["variance_rule"],
        seed=cfg["seed"],
        eps_tiny=cfg["eps_tiny"],
    )
    base.update(overrides)
    return TrainConfig(**base)


def _load_splits(cfg):
    if cfg["dataset"] != "mnist":
        raise ConfigError(f"unknown dataset {cfg['dataset']!r}")
    if not cfg["data_dir"]:
        raise ConfigError("no data directory: pass --data-dir, set DWF_DATA_DIR, or set data_dir")
    full = load_mnist(cfg["data_dir"], "train")
    if cfg["train_limit"]:
        full = full.subset(np.arange(int(cfg["train_limit"])))
    test = load_mnist(cfg["data_dir"], "test")
    train_ds, val_ds = split_train_val(
        full, cfg["val_fraction"], SeededRng(cfg["seed"]).child("split")
    )
    return train_ds, val_ds, test


def _spec(cfg):
    return MlpSpec(tuple(cfg["layer_sizes"]), cfg["activation"], cfg["loss"])


class RunDir:
    def __init__(self, out_root, command, cfg):
        canonical = json.dumps({"command": command, "config": cfg}, sort_keys=True)
        tag = hashlib.sha256(canonical.encode()).hexdigest()[:8]
        self.command = command
        self.cfg = cfg
        self.path = Path(out_root) / f"{command}-{tag}"
        self.path.mkdir(parents=True, exist_ok=True)
        self.artifacts = []
        self.write_json("config.json", cfg)

    def file(self, name):
        if name not in self.artifacts:
            self.artifacts.append(name)
        return self.path / name

    def write_json(self, name, payload):
        with open(self.file(name), "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")

    def finish(self):
        manifest = {
            "command": self.command,
            "run_dir": str(self.path),
            "artifacts": sorted(self.artifacts),
        }
        self.write_json("manifest.json", manifest)
        print(str(self.path))


def cmd_train(cfg, out_root):
    run = RunDir(out_root, "train", cfg)
    train_ds, val_ds, test_ds = _load_splits(cfg)
    model, traces = train(_spec(cfg), _train_config(cfg), (train_ds, val_ds))
    write_traces_csv(run.file("trace.csv"), traces)
    write_traces_json(run.file("trace.json"), traces)
    save_checkpoint(run.file("checkpoint.npz"), model)
    dense = collapse_and_threshold(model, cfg["eps_tiny"])
    save_dense(run.file("collapsed.npz"), dense)
    report = sparsity_report(dense, factorized=model).to_json()
    report["test_acc"] = accuracy(DenseMlp.from_params(model.spec, dense), test_ds.inputs, test_ds.labels)
    run.write_json("report.json", report)
    run.finish()
    return run


def _lambda_grid(grid):
    lo, hi, count = grid["lo"], grid["hi"], int(grid["count"])
    if count < 2:
        raise ConfigError("lambda grid count must be >= 2")
    return np.geomspace(lo, hi, count)


def default_lambda_grid():
    return _lambda_grid(DEFAULTS["sweep"]["lambda_grid"])


def _pareto_flags(rows):
    flags = []
    for r in rows:
        if r.get("error") or not math.isfinite(r["cr"]):
            flags.append(False)
            continue
        dominated = any(
            o is not r
            and not o.get("error")
            and math.isfinite(o["cr"])
            and o["test_acc"] >= r["test_acc"]
            and o["cr"] >= r["cr"]
            and (o["test_acc"] > r["test_acc"] or o["cr"] > r["cr"])
            for o in rows
        )
        flags.append(not dominated)
    return flags


def cmd_sweep(cfg, out_root):
    run = RunDir(out_root, "sweep", cfg)
    train_ds, val_ds, test_ds = _load_splits(cfg)
    spec = _spec(cfg)
    lambdas = _lambda_grid(cfg["lambda_grid"])
    rows = []
    for depth in cfg["depth_list"]:
        for li, lam in enumerate(lambdas):
            # worker seed keyed by (base seed, depth, grid index) for row independence
            seed = int(
                hashlib.sha256(f"{cfg['seed']}-{depth}-{li}".encode()).hexdigest()[:8], 16
            )
            row = {"depth": depth, "lambda": float(lam), "seed": seed}
            try:
                tc = _train_config(cfg, depth=depth, lam=float(lam), seed=seed)
                model, traces = train(spec, tc, (train_ds, val_ds))
                dense = collapse_and_threshold(model, cfg["eps_tiny"])
                rep = sparsity_report(dense, factorized=model)
                row.update(
                    test_acc=accuracy(DenseMlp.from_params(spec, dense), test_ds.inputs, test_ds.labels),
                    cr=rep.compression_ratio,
                    l2_collapsed=rep.collapsed_l2,
                    misalignment=rep.misalignment_total,
                )
            except (DivergedError, ConfigError) as e:
                row["error"] = str(e)
            rows.append(row)
    for row, flag in zip(rows, _pareto_flags(rows)):
        row["pareto"] = flag
    header = ["depth", "lambda", "seed", "test_acc", "cr", "l2_collapsed", "misalignment", "pareto", "error"]
    with open(run.file("sweep.csv"), "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(row.get(k)) for k in header) + "\n")
    run.write_json("sweep.json", rows)
    run.finish()
    return run


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def cmd_prune(cfg, out_root):
    run = RunDir(out_root, "prune", cfg)
    method = cfg["method"]
    if method not in ("gmp", "random", "snip", "synflow", "posthoc"):
        raise ConfigError(f"unknown prune method {method!r}")
    train_ds, val_ds, test_ds = _load_splits(cfg)
    spec = _spec(cfg)
    tc = _train_config(cfg, lam=0.0)
    crs = sorted(float(c) for c in cfg["cr_list"])
    rows = []

    if method in ("gmp", "posthoc"):
        if method == "posthoc" and cfg["model_path"]:
            model = DenseMlp.from_params(spec, load_dense(cfg["model_path"]))
        else:
            model, traces = train_dense(spec, tc, (train_ds, val_ds))
            write_traces_csv(run.file("trace-dense.csv"), traces)
            write_traces_json(run.file("trace-dense.json"), traces)
        for cr, acc in posthoc_prune_curve(model, crs, test_ds):
            rows.append({"cr": cr, "test_acc": acc})
    else:
        init_rng = SeededRng(cfg["seed"])
        model = DenseMlp.build(spec, init_rng.child("init"), cfg["variance_rule"])
        batch = None
        if method == "snip":
            order = init_rng.child("snip").permutation(len(train_ds))[: cfg["batch_size"]]
            batch = (train_ds.inputs[order], train_ds.labels[order])
        for cr in crs:
            row = {"cr": cr}
            try:
                target = PruneTarget(cr=cr)
                if method == "random":
                    mask = random_mask(model.params(), target, init_rng.child(f"mask{cr}"))
                elif method == "snip":
                    mask = snip_mask(model, batch, target)
                else:
                    mask = synflow_prune(model, target)
                save_mask(run.file(f"mask-cr{cr:g}.bits"), mask)
                pruned, traces = apply_mask_and_train(spec, mask, tc, (train_ds, val_ds))
                write_traces_csv(run.file(f"trace-cr{cr:g}.csv"), traces)
                row["test_acc"] = accuracy(pruned, test_ds.inputs, test_ds.labels)
            except LayerCollapseError as e:
                row["error"] = str(e)
            rows.append(row)

    with open(run.file(f"curve-{method}.csv"), "w") as fh:
        fh.write("cr,test_acc,error\n")
        for row in rows:
            fh.write(
                f"{_csv_cell(row['cr'])},{_csv_cell(row.get('test_acc'))},{_csv_cell(row.get('error'))}\n"
            )
    run.write_json(f"curve-{method}.json", rows)
    run.finish()
    return run


def cmd_lasso_verify(cfg, out_root):
    run = RunDir(out_root, "lasso-verify", cfg)
    rows = []
    for s in range(int(cfg["n_seeds"])):
        rng = SeededRng(cfg["seed"]).child(f"problem{s}")
        ds, w_true = synth_sparse_regression(
            cfg["n"], cfg["p"], cfg["k_nonzero"], cfg["noise_sigma"], rng
        )
        X, y = ds.inputs, ds.labels
        lam_max = 2.0 * float(np.max(np.abs(X.T @ y)))
        for frac in cfg["lambda_fracs"]:
            lam = frac * lam_max
            w_cd = lasso_cd(X, y, lam)
            w_f, info = factorized_lasso_train(
                X,
                y,
                lam,
                depth=cfg["depth"],
                cfg=FactorizedLassoConfig(steps=int(cfg["steps"])),
                return_info=True,
            )
            obj_cd = lasso_objective(X, y, w_cd, lam)
            gap = abs(info["objective"] - obj_cd) / (1.0 + abs(obj_cd))
            support_cd = np.abs(w_cd) >= EPS_TINY
            support_f = np.abs(w_f) >= EPS_TINY
            rows.append(
                {
                    "seed": s,
                    "lambda": lam,
                    "obj_cd": obj_cd,
                    "obj_factorized": info["objective"],
                    "gap": gap,
                    "misalignment": info["misalignment"],
                    "support_match": bool((support_cd == support_f).all()),
                    "converged": bool(info["converged"]),
                }
            )
    header = ["seed", "lambda", "obj_cd", "obj_factorized", "gap", "misalignment", "support_match", "converged"]
    with open(run.file("report.csv"), "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(row[k]) for k in header) + "\n")
    summary = {
        "rows": len(rows),
        "max_gap": max(r["gap"] for r in rows),
        "max_misalignment": max(r["misalignment"] for r in rows),
        "all_converged": all(r["converged"] for r in rows),
        "support_match_rate": sum(r["support_match"] for r in rows) / len(rows),
    }
    run.write_json("report.json", {"summary": summary, "rows": rows})
    run.finish()
    return run


def cmd_init_stats(cfg, out_root):
    from scipy import stats

    run = RunDir(out_root, "init-stats", cfg)
    if cfg["n"] < 10_000:
        raise ConfigError("n must be >= 10000 for stable statistics")
    rng = SeededRng(cfg["seed"]).child("init-stats")
    scheme = _scheme(cfg)
    depth, sigma_w, n = cfg["depth"], cfg["sigma_w"], int(cfg["n"])
    factors = init_mod.sample_factors_at_sigma(scheme, depth, n, sigma_w, rng)
    prod = factors[0].copy()
    for f in factors[1:]:
        prod *= f
    centered = prod - prod.mean()
    m2 = float(np.mean(centered**2))
    m4 = float(np.mean(centered**4))
    ks = stats.kstest(prod, "norm", args=(0.0, sigma_w))
    payload = {
        "scheme": cfg["init"],
        "depth": depth,
        "sigma_w": sigma_w,
        "n": n,
        "variance": m2,
        "kurtosis": m4 / m2**2,
        "min_abs": float(np.min(np.abs(prod))),
        "max_abs": float(np.max(np.abs(prod))),
        "ks_statistic": float(ks.statistic),
        "ks_pvalue": float(ks.pvalue),
        "dead_fraction": float(np.mean(np.abs(prod) < cfg["eps_tiny"])),
    }
    run.write_json("stats.json", payload)
    run.finish()
    return run


COMMANDS = {
    "train": cmd_train,
    "sweep": cmd_sweep,
    "prune": cmd_prune,
    "lasso-verify": cmd_lasso_verify,
    "init-stats": cmd_init_stats,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="dwf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="JSON config file")
        p.add_argument("--out", type=Path, default=Path("runs"), help="output root directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--profile", choices=sorted(PROFILES), default="ci")
        p.add_argument("--data-dir", type=Path, default=None, help="dataset directory (or $DWF_DATA_DIR)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        user_cfg = {}
        if args.config is not None:
            try:
                user_cfg = json.loads(Path(args.config).read_text())
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {args.config}")
            except json.JSONDecodeError as e:
                raise ConfigError(f"config is not valid JSON: {e}")
        cfg = resolve_config(args.command, user_cfg, args)
        COMMANDS[args.command](cfg, args.out)
        return 0
    except DivergedError as e:
        _emit_error(e)
        return 3
    except DataError as e:
        _emit_error(e)
        return 4
    except (ConfigError, ValueError) as e:
        _emit_error(e)
        return 2


def _emit_error(exc):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if getattr(exc, "step", None) is not None:
        payload["step"] = exc.step
    print(json.dumps(payload), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
