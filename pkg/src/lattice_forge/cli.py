"""Command-line entry point: ``lattice-forge <command> ...``.

Physical quantities are MPa / GPa / mm at this boundary and SI everywhere else.
Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint
from .dataset import (
    STREAM_DESIGN,
    STREAM_HIDDEN_TEST,
    STREAM_TRAIN,
    DatasetConfig,
    default_workers,
    draw_n_free,
    export,
    generate_labeled,
    load,
    split,
)
from .errors import (
    CorruptRecord,
    DegenerateTarget,
    DimensionMismatch,
    EmptyRange,
    GenerationFailed,
    IsolatedNode,
    NonFiniteLoss,
    SchemaMismatch,
    SingularSystem,
    ZeroArea,
)
from .experiments import (
    DENSE_ACTIVATIONS,
    GnnConfig,
    SliceConfig,
    ToyConfig,
    dense_sizes,
    run_gnn,
    run_slice_dnn,
    run_toy,
    slice_arrays,
    toy_dataset,
)
from .gnn import GnnModel, build_graph_sample, closed_form_param_count
from .inverse import MPA, bulk_predict, local_query, pareto_front, validate_candidate, write_design_csv
from .lattice import GenConfig, generate_lattice
from .neural import MLP
from .slicing import SlicePlan, featurize, histogram_rows, limit_analysis, write_histogram_csv

log = logging.getLogger("lattice_forge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
SEED_ENV = "LATTICE_FORGE_SEED"
STREAMS = {"train": STREAM_TRAIN, "test": STREAM_HIDDEN_TEST, "design": STREAM_DESIGN}

# desk-scale validation share: 600 of 4600 records
DESK_VAL_FRAC = 600 / 4600
FULL_VAL_FRAC = 0.15


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _print_config(command: str, resolved: dict) -> None:
    print(json.dumps({"command": command, **resolved}, sort_keys=True, default=str))


def _out_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- commands ---------------------------------------------------------------------

def cmd_generate(args) -> int:
    seed = resolve_seed(args.seed)
    out = Path(args.out)
    name = out.name.split(".")[0]
    cfg = DatasetConfig(
        n=args.n, kind=args.model, seed=seed, stream=STREAMS[args.stream],
        n_free_min=args.n_free_min, n_free_max=args.n_free_max,
        radius=args.radius_mm * 1e-3, young_modulus=args.young_gpa * 1e9, name=name,
    )
    workers = args.workers or default_workers()
    _print_config("generate", {"dataset": cfg.to_dict(), "workers": workers, "out": str(out)})
    records, manifest = generate_labeled(cfg, workers=workers)
    if args.slices:
        from .dataset import attach_slice_features
        attach_slice_features(records, SlicePlan(n_s=args.slices, L=cfg.domain_edge))
        manifest.flagged_zero_area = sum(bool(r.flags.get("zero_area")) for r in records)
    export(records, out, manifest)
    print(f"wrote {manifest.kept} records to {out} (discarded {manifest.discarded}, requested {manifest.requested})")
    return EXIT_OK


def _load_records(path: str):
    if not Path(path).exists():
        raise FileNotFoundError(f"data file not found: {path}")
    return load(path)


def _train_toy(args, seed: int, out: Path) -> int:
    cfg = ToyConfig.full_scale(seed) if args.mode == "full" else ToyConfig(seed=seed)
    if args.epochs:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    if args.samples:
        cfg = replace(cfg, n_samples=args.samples)
    _announce_mode(args.mode, {"samples": cfg.n_samples, "epochs": cfg.train.epochs}, ToyConfig.full_scale(seed))
    _print_config("train dnn-toy", {"mode": args.mode, "seed": seed, "config": cfg.to_dict(), "out": str(out)})
    res = run_toy(cfg, progress=args.progress)
    return _finish_training(res, out, "dnn-toy", cfg.to_dict(), seed, extra={"toy": cfg.to_dict()})


def _train_slice(args, seed: int, out: Path) -> int:
    records, _ = _load_records(args.data)
    cfg = SliceConfig.full_scale(seed) if args.mode == "full" else SliceConfig(seed=seed)
    if args.epochs:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    if args.slices:
        cfg = replace(cfg, n_s=args.slices)
    if args.mode == "desk":
        print(f"desk mode: {len(records)} lattices from {args.data} (full scale uses 10000)")
    _print_config("train dnn-slice", {"mode": args.mode, "seed": seed, "config": cfg.to_dict(),
                                      "data": args.data, "out": str(out)})
    res = run_slice_dnn(records, cfg, progress=args.progress)
    return _finish_training(res, out, "dnn-slice", cfg.to_dict(), seed, extra={"n_s": cfg.n_s})


def _train_gnn(args, seed: int, out: Path) -> int:
    records, manifest = _load_records(args.data)
    kind = records[0].model_kind if records else "truss"
    cfg = GnnConfig.full_scale(kind, seed) if args.mode == "full" else GnnConfig(kind=kind, seed=seed)
    val_frac = FULL_VAL_FRAC if args.mode == "full" else DESK_VAL_FRAC
    n_val = int(round(val_frac * len(records)))
    cfg = replace(cfg, n_train=len(records) - n_val, n_val=n_val)
    if args.epochs:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    if args.test_n:
        cfg = replace(cfg, n_test=args.test_n)
    if args.test_data:
        test_records, _ = _load_records(args.test_data)
    else:
        base = manifest.config if manifest is not None else {"n": cfg.n_test, "kind": kind}
        base = {k: v for k, v in base.items() if k in DatasetConfig.__dataclass_fields__}
        base.update(n=cfg.n_test, stream=STREAM_HIDDEN_TEST, name="hidden-test")
        base.setdefault("seed", seed)
        test_cfg = DatasetConfig(**base)
        print(f"generating hidden test set: {cfg.n_test} fresh lattices (seed stream {STREAM_HIDDEN_TEST})")
        test_records, _ = generate_labeled(test_cfg, workers=args.workers or default_workers())
    cfg = replace(cfg, n_test=len(test_records))
    _announce_mode(args.mode, {"epochs": cfg.train.epochs, "train+val": len(records), "test": len(test_records)},
                   GnnConfig.full_scale(kind, seed))
    _print_config("train gnn", {"mode": args.mode, "seed": seed, "config": cfg.to_dict(),
                                "data": args.data, "test_data": args.test_data, "out": str(out)})
    res = run_gnn(records, test_records, cfg, progress=args.progress)
    return _finish_training(res, out, "gnn", cfg.to_dict(), seed, extra={"kind": kind})


def _announce_mode(mode: str, actual: dict, full_cfg) -> None:
    if mode != "desk":
        return
    full = {}
    if hasattr(full_cfg, "n_samples"):
        full["samples"] = full_cfg.n_samples
    if hasattr(full_cfg, "n_train"):
        full["train+val"] = full_cfg.n_train + full_cfg.n_val
        full["test"] = full_cfg.n_test
    full["epochs"] = full_cfg.train.epochs
    parts = [f"{k} {actual[k]} (full scale {full[k]})" for k in actual if k in full]
    print("desk mode reductions: " + ", ".join(parts))


def _finish_training(res, out: Path, experiment: str, train_config: dict, seed: int, extra: dict) -> int:
    metrics = {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in res.metrics.items()}
    checkpoint.save(out / "model.json", res.model, experiment=experiment, train_config=train_config,
                    seed=seed, metrics=metrics, extra=extra)
    res.history.write_csv(out / "history.csv")
    res.write_predictions(out / "predictions.csv")
    _write_json(out / "metrics.json", metrics)
    print(f"loss_train {metrics.get('loss_train', float('nan')):.4e}  loss_test {metrics.get('loss_test', float('nan')):.4e}")
    print(f"R2_train {metrics.get('r2_train', float('nan')):.4f}  R2_test {metrics.get('r2_test', float('nan')):.4f}")
    print(f"parameters {metrics['n_params']}  epochs {metrics['epochs_run']}  -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    seed = resolve_seed(args.seed)
    out = _out_dir(args.out)
    if args.experiment != "dnn-toy" and not args.data:
        raise UsageError(f"train {args.experiment} needs --data")
    return {"dnn-toy": _train_toy, "dnn-slice": _train_slice, "gnn": _train_gnn}[args.experiment](args, seed, out)


def _load_model(path: str):
    if not Path(path).exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return checkpoint.load(path)


def _predict_lattices(model, doc: dict, lattices) -> np.ndarray:
    if isinstance(model, GnnModel):
        return model.predict([build_graph_sample(lat) for lat in lattices])
    if doc.get("experiment") == "dnn-slice":
        from .mechanics import lattice_volume
        n_s = int(doc.get("extra", {}).get("n_s", 19))
        x = np.array([featurize(lat, SlicePlan(n_s, lat.domain_edge)).inv_features for lat in lattices])
        vol = np.array([lattice_volume(lat) for lat in lattices])
        return model.predict(x) * vol
    raise UsageError(f"checkpoint of experiment {doc.get('experiment')!r} cannot score lattices")


def cmd_predict(args) -> int:
    model, doc = _load_model(args.model_ckpt)
    _print_config("predict", {"model_ckpt": args.model_ckpt, "lattice_file": args.lattice_file,
                              "seed": args.seed, "n_free": args.n_free})
    if args.lattice_file:
        records, _ = _load_records(args.lattice_file)
        preds = _predict_lattices(model, doc, [r.lattice for r in records])
        print("id,seed,e_pred_MPa,e_label_MPa")
        for r, p in zip(records, preds):
            print(f"{r.id},{r.seed},{p / MPA:.6f},{r.label / MPA:.6f}")
        return EXIT_OK
    if args.seed is None:
        raise UsageError("predict needs --lattice-file or --seed")
    n_free = args.n_free if args.n_free is not None else draw_n_free(args.seed, 1, 50)
    lat = generate_lattice(GenConfig(n_free, seed=args.seed))
    pred = _predict_lattices(model, doc, [lat])[0]
    print(f"seed {args.seed} n_free {n_free} volume_m3 {lat.section.area * lat.edge_lengths().sum():.6e} "
          f"e_pred_MPa {pred / MPA:.6f}")
    return EXIT_OK


def cmd_inverse(args) -> int:
    seed = resolve_seed(args.seed)
    model, doc = _load_model(args.model_ckpt)
    if not isinstance(model, GnnModel):
        raise UsageError("inverse design needs a graph-network checkpoint")
    kind = doc.get("extra", {}).get("kind", "truss")
    cfg = DatasetConfig(n=args.n, kind=kind, seed=seed, stream=STREAM_DESIGN, name="design")
    _print_config("inverse", {"n": args.n, "seed": seed, "target_mpa": args.target_mpa, "band_mpa": args.band_mpa,
                              "validate": args.validate, "kind": kind, "out": args.out})
    points = bulk_predict(model, args.n, cfg, workers=args.workers or default_workers())
    front = pareto_front(points)
    if args.out:
        write_design_csv(args.out, points, front)
    print(f"database {len(points)} designs, Pareto front {len(front)} members")
    lo = (args.target_mpa - args.band_mpa) * MPA
    hi = (args.target_mpa + args.band_mpa) * MPA
    try:
        q = local_query(points, lo, hi)
    except EmptyRange as exc:
        if exc.nearest is not None:
            a, b = exc.nearest
            print(f"no design in [{lo / MPA:.3f}, {hi / MPA:.3f}] MPa; nearest available band "
                  f"[{a / MPA:.3f}, {b / MPA:.3f}] MPa", file=sys.stderr)
        raise
    c = q.best
    print(f"candidate id {c.id} seed {c.seed} n_free {c.n_free} volume_m3 {c.volume:.6e} "
          f"e_pred_MPa {c.predicted_modulus / MPA:.4f} ({q.n_in_band} designs in band, local front {len(q.local_front)})")
    if args.validate:
        truth, err = validate_candidate(c, kind, cfg)
        print(f"ground truth e_MPa {truth / MPA:.4f} relative error {err:.4%}")
    return EXIT_OK


def cmd_export_plot(args) -> int:
    _print_config("export-plot", {k: v for k, v in vars(args).items() if k != "func"})
    out = Path(args.out)
    if args.figure == "slice-histogram":
        if not args.data:
            raise UsageError("slice-histogram needs --data")
        records, _ = _load_records(args.data)
        values = limit_analysis([r.lattice for r in records], tuple(args.candidates))
        write_histogram_csv(out, histogram_rows(values, bins=args.bins))
    elif args.figure in ("toy-scatter", "pred-scatter"):
        if not args.ckpt:
            raise UsageError(f"{args.figure} needs --ckpt")
        model, doc = _load_model(args.ckpt)
        _write_scatter(out, model, doc, args)
    elif args.figure == "pareto":
        if not args.ckpt:
            raise UsageError("pareto needs --ckpt")
        model, doc = _load_model(args.ckpt)
        seed = resolve_seed(args.seed)
        cfg = DatasetConfig(n=args.n, kind=doc.get("extra", {}).get("kind", "truss"), seed=seed,
                            stream=STREAM_DESIGN, name="design")
        points = bulk_predict(model, args.n, cfg, workers=args.workers or default_workers())
        write_design_csv(out, points, pareto_front(points))
    print(f"wrote {out}")
    return EXIT_OK


def _write_scatter(out: Path, model, doc: dict, args) -> None:
    import csv

    rows = []
    if doc.get("experiment") == "dnn-toy":
        cfg = doc["extra"]["toy"]
        x, y = toy_dataset(cfg["n_samples"], cfg["n_springs"], cfg["low"], cfg["high"], cfg["seed"])
        parts = split(len(y), cfg["train"]["val_split"], cfg["test_frac"], cfg["seed"])
        for name in ("train", "val", "test"):
            idx = parts[name]
            rows += [(name, t, p) for t, p in zip(y[idx], model.predict(x[idx]))]
    else:
        if not args.data:
            raise UsageError("pred-scatter needs --data for this checkpoint")
        records, _ = _load_records(args.data)
        label = args.split_name
        if doc.get("experiment") == "dnn-slice":
            x, y, _ = slice_arrays(records, int(doc.get("extra", {}).get("n_s", 19)))
            pred = model.predict(x)
        else:
            y = np.array([r.label for r in records])
            pred = _predict_lattices(model, doc, [r.lattice for r in records])
        rows = [(label, t, p) for t, p in zip(y, pred)]
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "truth", "prediction"])
        for name, t, p in rows:
            w.writerow([name, repr(float(t)), repr(float(p))])


def cmd_model_info(args) -> int:
    if args.model_ckpt:
        model, doc = _load_model(args.model_ckpt)
        rows = model.architecture()
        print(f"experiment {doc.get('experiment')}  seed {doc.get('seed')}")
    else:
        model = GnnModel.init(0)
        rows = model.architecture()
    for r in rows:
        name = r.get("layer", "dense")
        print(f"{name:18s} ({r['in']},) -> ({r['out']},)  {r['activation']:7s} {r.get('params', '')}")
    print(f"trainable parameters {model.n_params()}")
    if isinstance(model, GnnModel):
        slice_count = MLP.build(dense_sizes(57), DENSE_ACTIVATIONS).n_params()
        print(f"closed-form count {closed_form_param_count()}; slice DNN (57 inputs) {slice_count}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lattice-forge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--config", help="JSON or TOML file with flag defaults (see README)")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate and label a lattice dataset")
    g.add_argument("--n", type=_positive_int, required=True)
    g.add_argument("--model", choices=["truss", "beam"], default="truss")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True, help="<name>.jsonl or <name>.jsonl.gz")
    g.add_argument("--stream", choices=sorted(STREAMS), default="train",
                   help="seed stream; 'test' gives a hidden test set disjoint from 'train'")
    g.add_argument("--n-free-min", type=int, default=1)
    g.add_argument("--n-free-max", type=int, default=50)
    g.add_argument("--radius-mm", type=_positive_float, default=5.0)
    g.add_argument("--young-gpa", type=_positive_float, default=193.0)
    g.add_argument("--slices", type=int, default=0, help="also attach slice features with this n_s")
    g.add_argument("--workers", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a surrogate")
    t.add_argument("experiment", choices=["dnn-toy", "dnn-slice", "gnn"])
    t.add_argument("--data")
    t.add_argument("--test-data", help="hidden test set (gnn); generated fresh when omitted")
    t.add_argument("--test-n", type=_positive_int, help="size of a freshly generated hidden test set")
    t.add_argument("--mode", choices=["desk", "full"], default="desk")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--epochs", type=_positive_int)
    t.add_argument("--samples", type=_positive_int, help="toy sample count override")
    t.add_argument("--slices", type=_positive_int, help="slice count for dnn-slice")
    t.add_argument("--progress", type=int, default=0, help="log every N epochs")
    t.add_argument("--workers", type=int, default=0)
    t.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict E_z^eq (MPa)")
    p.add_argument("--model-ckpt", required=True)
    p.add_argument("--lattice-file")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-free", type=int)
    p.set_defaults(func=cmd_predict)

    i = sub.add_parser("inverse", help="surrogate database, Pareto front and range query")
    i.add_argument("--model-ckpt", required=True)
    i.add_argument("--n", type=_positive_int, default=100_000)
    i.add_argument("--target-mpa", type=_positive_float, default=170.0)
    i.add_argument("--band-mpa", type=_positive_float, default=1.0)
    i.add_argument("--validate", action="store_true")
    i.add_argument("--seed", type=int)
    i.add_argument("--out", help="database CSV")
    i.add_argument("--workers", type=int, default=0)
    i.set_defaults(func=cmd_inverse)

    e = sub.add_parser("export-plot", help="write figure data as CSV")
    e.add_argument("figure", choices=["toy-scatter", "slice-histogram", "pred-scatter", "pareto"])
    e.add_argument("--data")
    e.add_argument("--ckpt")
    e.add_argument("--out", required=True)
    e.add_argument("--candidates", type=int, nargs="+", default=[9, 19, 49, 99])
    e.add_argument("--bins", type=_positive_int, default=30)
    e.add_argument("--split-name", default="data")
    e.add_argument("--n", type=_positive_int, default=10_000)
    e.add_argument("--seed", type=int)
    e.add_argument("--workers", type=int, default=0)
    e.set_defaults(func=cmd_export_plot)

    m = sub.add_parser("model-info", help="print layer shapes and parameter counts")
    m.add_argument("--model-ckpt")
    m.set_defaults(func=cmd_model_info)
    parser.subcommands = sub.choices
    return parser


def read_overlay(path: str) -> dict:
    """Flag defaults from a JSON or TOML file.

    Top-level scalar keys apply to every command; a table named after a command
    (``[generate]``, ``[train]``, ...) applies to that command only.
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    if p.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        with open(p, "rb") as fh:
            data = tomllib.load(fh)
    else:
        data = json.loads(p.read_text())
    if not isinstance(data, dict):
        raise UsageError("config file must hold a table/object")
    return data


def apply_overlay(parser: argparse.ArgumentParser, overlay: dict, command: str) -> None:
    """Install overlay values as defaults of ``command``'s sub-parser; explicit flags still win."""
    sub = parser.subcommands[command]
    section = overlay.get(command, {})
    if not isinstance(section, dict):
        raise UsageError(f"config: [{command}] must be a table")
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "func")}
    shared = {k: v for k, v in overlay.items() if not isinstance(v, dict)}
    defaults = {}
    for key, value in {**shared, **section}.items():
        action = actions.get(key.replace("-", "_"))
        if action is None:
            if key in section:
                raise UsageError(f"config: {command} has no option {key!r}")
            continue  # shared key this command does not take
        dest = action.dest
        if action.type is not None and value is not None and not isinstance(value, list):
            try:
                value = action.type(str(value))
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config: bad value for {key}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config: {key} must be one of {sorted(action.choices)}")
        action.required = False
        defaults[dest] = value
    sub.set_defaults(**defaults)


def _command_of(parser: argparse.ArgumentParser, argv: list[str]) -> str | None:
    return next((a for a in argv if a in parser.subcommands), None)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            overlay = read_overlay(known.config)
            command = _command_of(parser, argv)
            if command is not None:
                apply_overlay(parser, overlay, command)
        except UsageError as exc:
            print(f"usage error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        except (FileNotFoundError, ValueError) as exc:
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or getattr(args, "progress", 0) else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, SchemaMismatch, CorruptRecord, EmptyRange, GenerationFailed,
            IsolatedNode, DimensionMismatch, ZeroArea) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SingularSystem, NonFiniteLoss, DegenerateTarget, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
