"""Command line entry point: ``dgz <command> [options]``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from dgz import __version__
from dgz.dataio import (
    SynthSpec,
    export_report,
    load_dataset_dir,
    read_config,
    read_matrix,
    save_dataset,
    synth_dataset,
    write_matrix,
    write_table,
)
from dgz.errors import ConfigError, DGZError
from dgz.nets import load_mlp, save_mlp
from dgz.pipelines import (
    ABLATIONS,
    TOY_PROTOCOLS,
    TrainConfig,
    TrainedModel,
    ablation_suite,
    evaluate,
    genbound_study,
    probe_dist,
    run_dgz,
    toy2d,
    toy2d_config,
)
from dgz.pipelines.config import apply_overrides
from dgz.selfcheck import run_all


def _parse_sets(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _settings(args):
    values = read_config(args.config) if args.config else {}
    values.update(_parse_sets(args.set))
    if args.seed is not None:
        values["seed"] = str(args.seed)
    return values


def _train_config(args, base=None):
    cfg = base or TrainConfig()
    if getattr(args, "paper_scale", False):
        cfg = cfg.paper_scale()
    return apply_overrides(cfg, _settings(args))


def _print_table(rows, leading):
    names = (leading, "T1", "A_u", "A_s", "H", "cmmd")
    print("  ".join(f"{n:>8}" for n in names))
    for name, rep in rows:
        cells = [f"{name:>8}"]
        for n in names[1:]:
            v = getattr(rep, n)
            cells.append(f"{'-':>8}" if v is None else f"{v:>8.4f}" if n == "cmmd" else f"{v:>8.2f}")
        print("  ".join(cells))


# --- checkpoints ---------------------------------------------------------------------


def save_model(model, directory):
    """Weights as DGZW/DGZM files plus the config snapshot as JSON."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "config.json"), "w") as fh:
        json.dump(model.config.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    if model.mapping_net is not None:
        save_mlp(model.mapping_net, os.path.join(directory, "mapping.dgzw"))
    else:
        write_matrix(os.path.join(directory, "weights.dgzm"), model.free_weights)
    if model.generator is not None:
        save_mlp(model.generator, os.path.join(directory, "generator.dgzw"))
    if model.center_mapper is not None:
        save_mlp(model.center_mapper, os.path.join(directory, "center_mapper.dgzw"))


def load_model(directory):
    with open(os.path.join(directory, "config.json")) as fh:
        cfg = TrainConfig.from_mapping(json.load(fh))
    mapping = os.path.join(directory, "mapping.dgzw")
    if os.path.exists(mapping):
        return TrainedModel(cfg, mapping_net=load_mlp(mapping, slope=cfg.slope))
    return TrainedModel(cfg, free_weights=read_matrix(os.path.join(directory, "weights.dgzm")))


# --- commands --------------------------------------------------------------------------


def cmd_synth(args):
    spec = apply_overrides(SynthSpec(), _settings(args))
    ds = synth_dataset(spec)
    save_dataset(ds, args.out)
    print(f"wrote {ds.n_classes} classes, {ds.features.shape[0]} samples to {args.out}")
    return 0


def cmd_train(args):
    ds = load_dataset_dir(args.data)
    cfg = _train_config(args)
    model, report = run_dgz(ds, cfg)
    save_model(model, os.path.join(args.out, "model"))
    export_report(report, args.out)
    _print_table([(cfg.dist_kind, report)], "dist")
    return 0


def cmd_eval(args):
    ds = load_dataset_dir(args.data)
    model = load_model(args.model)
    report = evaluate(model, ds, meta={"model": os.path.abspath(args.model)})
    export_report(report, args.out, "eval")
    _print_table([("model", report)], "name")
    return 0


def cmd_probe_dist(args):
    ds = load_dataset_dir(args.data)
    reports = probe_dist(ds, _train_config(args), kinds=tuple(args.kinds))
    os.makedirs(args.out, exist_ok=True)
    for kind, rep in reports.items():
        export_report(rep, args.out, f"probe_{kind}")
    write_table(os.path.join(args.out, "probe_dist.csv"), reports.items(), "dist")
    _print_table(reports.items(), "dist")
    return 0


def cmd_gradcheck(args):
    results = run_all(seed=args.seed or 0, instances=args.instances)
    print(f"{'check':<28} {'n':>5} {'worst':>12} {'tol':>9}  status")
    for r in results:
        print(r.line())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "gradcheck.csv"), "w") as fh:
            fh.write("check,instances,worst,tol,passed\n")
            for r in results:
                fh.write(f"{r.name},{r.instances},{r.worst!r},{r.tol!r},{int(r.passed)}\n")
    return 0 if all(r.passed for r in results) else 1


def cmd_toy2d(args):
    cfg = _train_config(args, toy2d_config())
    out = toy2d(cfg, protocol=args.protocol)
    os.makedirs(args.out, exist_ok=True)
    summary = {}
    for sigma, res in out.items():
        write_matrix(os.path.join(args.out, f"samples_sigma{sigma:g}.csv"), res["samples"])
        summary[f"{sigma:g}"] = {k: np.asarray(res[k]).tolist() for k in ("mean", "std", "cov")}
        print(f"sigma={sigma:<5g} mean={np.round(res['mean'], 3).tolist()} std={np.round(res['std'], 3).tolist()}")
    with open(os.path.join(args.out, "toy2d_summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return 0


def cmd_genbound(args):
    ds = load_dataset_dir(args.data)
    cfg = _train_config(args)
    kwargs = {}
    if args.class_counts:
        kwargs["class_counts"] = tuple(args.class_counts)
    if args.per_class_counts:
        kwargs["per_class_counts"] = tuple(args.per_class_counts)
    if args.per_class_classes:
        kwargs["per_class_classes"] = args.per_class_classes
    rows = genbound_study(ds, cfg, **kwargs)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "genbound.csv"), "w") as fh:
        fh.write("sweep,value,H,cmmd\n")
        for sweep, value, h, cm in rows:
            fh.write(f"{sweep},{value!r},{h!r},{cm!r}\n")
    for sweep, value, h, cm in rows:
        print(f"{sweep:>10} {value:>8g}  H={h:6.2f}  cmmd={cm:.4f}")
    return 0


def cmd_ablate(args):
    ds = load_dataset_dir(args.data)
    reports = ablation_suite(ds, _train_config(args), variants=tuple(args.variants))
    os.makedirs(args.out, exist_ok=True)
    for v, rep in reports.items():
        export_report(rep, args.out, f"ablation_{v}")
    write_table(os.path.join(args.out, "ablation.csv"), reports.items(), "variant")
    _print_table(reports.items(), "variant")
    return 0


# --- parser ----------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="dgz", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dgz {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, fn, help_text, data=True, out_required=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value settings file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
        if data:
            p.add_argument("--data", required=True, help="dataset directory")
        p.set_defaults(func=fn)
        return p

    add("synth", cmd_synth, "write a synthetic dataset", data=False)
    p = add("train", cmd_train, "train the full pipeline and report")
    p.add_argument("--paper-scale", action="store_true", help="use the large network widths")
    p = add("eval", cmd_eval, "evaluate a saved model")
    p.add_argument("--model", required=True, help="model directory written by train")
    p = add("probe-dist", cmd_probe_dist, "compare pseudo-unseen distributions")
    p.add_argument("--kinds", nargs="+", default=["GEN", "SVG", "LVG", "SCG"], choices=["GEN", "SVG", "LVG", "SCG"])
    p = add("gradcheck", cmd_gradcheck, "run the gradient self-checks", data=False, out_required=False)
    p.add_argument("--instances", type=int, default=100, help="random instances per identity check")
    p = add("toy2d", cmd_toy2d, "2-D unit Gaussian study", data=False)
    p.add_argument("--protocol", choices=TOY_PROTOCOLS, default="augment")
    p = add("genbound", cmd_genbound, "attribute generalization study")
    p.add_argument("--class-counts", type=int, nargs="+")
    p.add_argument("--per-class-counts", type=int, nargs="+")
    p.add_argument("--per-class-classes", type=int)
    p = add("ablate", cmd_ablate, "ablation variants")
    p.add_argument("--variants", nargs="+", default=["full", *ABLATIONS], choices=["full", *ABLATIONS])
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"dgz: configuration error: {exc}", file=sys.stderr)
        return 2
    except (DGZError, OSError, ValueError) as exc:
        print(f"dgz: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
