"""Command line entry point: ``spacetime-set {generate,train,eval,ablate,verify,scale-sweep}``.

Exit codes: 0 success, 1 property failure, 2 usage or configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import warnings
from pathlib import Path

from . import __version__, checkpoint
from .model import MODELS, Model, count_params, default_config
from .nbody import SPLITS, DataConfig, DatasetFormatError, generate_dataset, read_dataset, write_dataset
from .training import DivergenceError, TrainConfig, evaluate, load_model, train
from .verify import run_suite

log = logging.getLogger("spacetime_set")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
MANIFEST_SCHEMA = "spacetime-set/dataset-manifest"
MANIFEST_VERSION = 1

TABLE1_HEADER = ["Ablation", "Model", "Params", "Val MSE", "Test MSE", "MSE Ratio"]
# (ablation axis, config overrides) for the four rows of the ablation table
TABLE1_ROWS = [
    ("Equivariance", {}),
    ("Equivariance", {"equivariant": False}),
    ("Adjacency", {"adjacency": True}),
    ("Attention", {"temporal": False}),
]


class UsageError(ValueError):
    pass


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# ---------------------------------------------------------------- arguments


def _add_data_flags(p: argparse.ArgumentParser, counts=(1000, 200, 200)) -> None:
    g = p.add_argument_group("dataset")
    g.add_argument("--n-particles", type=int, default=5, help="particles per system N")
    g.add_argument("--seq-len", type=int, default=10, help="observed frames L")
    g.add_argument("--horizon", type=int, default=500, help="steps H from frame L to the target (paper scale: 10000)")
    g.add_argument("--n-train", type=int, default=counts[0], help="training trajectories (paper scale: 16000)")
    g.add_argument("--n-val", type=int, default=counts[1], help="validation trajectories")
    g.add_argument("--n-test", type=int, default=counts[2], help="test trajectories")
    g.add_argument("--noise-variance", type=float, default=0.0, help="Gaussian noise variance on positions and velocities")
    g.add_argument("--dt", type=float, default=1e-3, help="leapfrog step size")
    g.add_argument("--softening", type=float, default=0.1, help="Coulomb softening constant")
    g.add_argument("--stride", type=int, default=1, help="integrator steps per stored frame")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--d", type=int, default=16, help="feature width d")
    g.add_argument("--hdim", type=int, default=32, help="hidden width of every MLP")
    g.add_argument("--K", type=int, default=None, help="EGCL layers per block (default: 2, egnn 3)")
    g.add_argument("--M", type=int, default=None, help="stacked blocks (default: 2, egnn 1)")
    g.add_argument("--B", type=float, default=0.5, help="position attention coefficient")
    g.add_argument("--alpha", type=float, default=1.0, help="velocity weight in the loss")
    g.add_argument("--dropout", type=float, default=0.1, help="dropout rate in feed-forward nets")
    g.add_argument("--pe", dest="positional", action="store_true", help="enable positional encodings")
    g.add_argument("--no-pe", dest="positional", action="store_false", help="disable positional encodings")
    g.add_argument("--adj", dest="adjacency", action="store_true", help="enable temporal adjacency attention")
    g.add_argument("--no-adj", dest="adjacency", action="store_false", help="disable temporal adjacency attention")
    g.add_argument("--no-equivariant", dest="equivariant", action="store_false", help="plain message passing")
    g.add_argument("--no-spatial", dest="spatial", action="store_false", help="skip the EGCL stack")
    g.add_argument("--no-temporal", dest="temporal", action="store_false", help="skip temporal attention")
    g.add_argument("--causal", action="store_true", help="causal temporal attention")
    g.add_argument(
        "--no-recompute-edges", dest="recompute_edges", action="store_false", help="reuse first-layer edge attributes"
    )
    p.set_defaults(positional=False, adjacency=False, equivariant=True, spatial=True, temporal=None, recompute_edges=True)


def _add_train_flags(p: argparse.ArgumentParser, epochs: int = 10) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=epochs, help="passes over the training split")
    g.add_argument("--batch-size", type=int, default=100, help="minibatch size")
    g.add_argument("--lr", type=float, default=None, help="Adam learning rate (default: per-model reported value)")
    g.add_argument("--weight-decay", type=float, default=None, help="L2 weight decay (default: per-model)")
    g.add_argument("--grad-clip", type=float, default=None, help="global gradient norm clip (off by default)")
    g.add_argument("--eval-every", type=int, default=1, help="epochs between validation passes")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spacetime-set", description=__doc__, formatter_class=_Formatter)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="simulate train/val/test splits", formatter_class=_Formatter)
    _add_data_flags(p)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", type=Path, default=Path("data"), help="output directory")

    p = sub.add_parser("train", help="train one model on a generated dataset", formatter_class=_Formatter)
    p.add_argument("--model", choices=MODELS, default="set", help="architecture")
    p.add_argument("--data", type=Path, default=Path("data"), help="dataset directory from `generate`")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0, help="seed for init, data order, and dropout")
    p.add_argument("--out", type=Path, default=Path("model.sett"), help="best-validation checkpoint path")
    p.add_argument("--log", type=Path, default=None, help="JSON-lines metrics log (default: <out>.jsonl)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split", formatter_class=_Formatter)
    p.add_argument("--checkpoint", type=Path, default=Path("model.sett"), help="checkpoint from `train`")
    p.add_argument("--data", type=Path, default=Path("data"), help="dataset directory")
    p.add_argument("--split", choices=SPLITS, default="test", help="split to evaluate")

    p = sub.add_parser("ablate", help="train the four ablation rows and emit a CSV table", formatter_class=_Formatter)
    p.add_argument("--data", type=Path, default=Path("data"), help="dataset directory")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0, help="seed shared by all rows")
    p.add_argument("--out", type=Path, default=None, help="CSV path (default: stdout)")

    p = sub.add_parser("verify", help="run the randomized property suite", formatter_class=_Formatter)
    p.add_argument("--trials", type=int, default=100, help="random trials for the main equivariance checks")
    p.add_argument("--tolerance", type=float, default=None, help="override every per-property tolerance")
    p.add_argument("--seed", type=int, default=0, help="seed for the random inputs")
    p.add_argument("--only", nargs="*", default=None, help="restrict to these property names")
    p.add_argument("--json", type=Path, default=None, help="also write the report as JSON")

    p = sub.add_parser("scale-sweep", help="parameter counts and test MSE across N", formatter_class=_Formatter)
    p.add_argument("--n-list", type=_int_list, default=[5, 20, 30], help="comma-separated particle counts")
    p.add_argument("--models", nargs="+", choices=MODELS, default=list(MODELS), help="models to sweep")
    p.add_argument("--seq-len", type=int, default=10, help="observed frames L")
    p.add_argument("--horizon", type=int, default=500, help="steps H")
    p.add_argument("--n-train", type=int, default=100, help="training trajectories per N")
    p.add_argument("--n-val", type=int, default=20, help="validation trajectories per N")
    p.add_argument("--n-test", type=int, default=20, help="test trajectories per N")
    _add_model_flags(p)
    _add_train_flags(p, epochs=2)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", type=Path, default=None, help="CSV path (default: stdout)")
    return parser


# ----------------------------------------------------------------- helpers


def _data_config(args, n_particles=None) -> DataConfig:
    return DataConfig(
        n_particles=n_particles or args.n_particles,
        seq_len=args.seq_len,
        horizon=args.horizon,
        n_train=args.n_train,
        n_val=args.n_val,
        n_test=args.n_test,
        noise_variance=getattr(args, "noise_variance", 0.0),
        dt=getattr(args, "dt", 1e-3),
        softening=getattr(args, "softening", 0.1),
        stride=getattr(args, "stride", 1),
        seed=args.seed,
    )


def _model_config(args, model: str, data: DataConfig, **override):
    kw = dict(
        d=args.d,
        hdim=args.hdim,
        B=args.B,
        alpha=args.alpha,
        dropout=args.dropout,
        positional=args.positional,
        adjacency=args.adjacency,
        equivariant=args.equivariant,
        spatial=args.spatial,
        causal=args.causal,
        recompute_edges=args.recompute_edges,
    )
    for key in ("K", "M", "temporal"):
        if getattr(args, key) is not None:
            kw[key] = getattr(args, key)
    kw.update(override)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return default_config(model, data.n_particles, data.seq_len, data.horizon, **kw)


def _train_config(args, **kw) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        weight_decay=args.weight_decay,
        seed=args.seed,
        eval_every=args.eval_every,
        grad_clip=args.grad_clip,
        **kw,
    )


def _write_csv(rows: list[list], header: list[str], out: Path | None) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    if out is None:
        sys.stdout.write(buf.getvalue())
    else:
        out.write_bytes(buf.getvalue().encode("utf-8"))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_splits(splits: dict, out: Path, config: DataConfig) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for split, dataset in splits.items():
        path = out / f"{split}.setd"
        write_dataset(dataset, path)
        files[split] = {"path": path.name, "count": len(dataset), "sha256": _sha256(path)}
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "schema_version": MANIFEST_VERSION,
        "package_version": __version__,
        "config": config.to_dict(),
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def load_splits(directory: Path, splits=SPLITS) -> dict:
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory {directory} not found")
    return {s: read_dataset(directory / f"{s}.setd") for s in splits}


def _fmt(x: float) -> str:
    return f"{x:.6g}"


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    config = _data_config(args)
    splits = {s: generate_dataset(config, s) for s in SPLITS}
    manifest = write_splits(splits, args.out, config)
    print(json.dumps(manifest, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    splits = load_splits(args.data)
    data_cfg = splits["train"].config
    model = Model(_model_config(args, args.model, data_cfg), seed=args.seed)
    log_path = args.log if args.log is not None else args.out.with_suffix(args.out.suffix + ".jsonl")
    if log_path.exists():
        log_path.unlink()
    history = train(model, splits, _train_config(args, checkpoint_path=str(args.out), log_path=str(log_path)))
    summary = {
        "model": args.model,
        "params": count_params(model.config),
        "epochs": args.epochs,
        "initial_train_loss": history[0]["train_loss"],
        "final_train_loss": history[-1]["train_loss"],
        "best_val_mse": min(r.get("val_mse", float("inf")) for r in history),
        "checkpoint": str(args.out),
        "log": str(log_path),
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    (dataset,) = load_splits(args.data, (args.split,)).values()
    metrics = evaluate(model, dataset)
    print(json.dumps({"split": args.split, "model": model.config.model, **metrics}, sort_keys=True))
    return EXIT_OK


def _describe(cfg) -> str:
    def b(flag: bool) -> str:
        return "True" if flag else "False"

    return f"Equiv={b(cfg.equivariant)}, Adj={b(cfg.adjacency)}, SATT={b(cfg.spatial)}, TATT={b(cfg.temporal)}"


def ablation_table(splits: dict, args, rows=TABLE1_ROWS) -> list[list]:
    """Train each row and return CSV rows; the ratio is test MSE over the best row's test MSE."""
    data_cfg = splits["train"].config
    results = []
    for axis, override in rows:
        cfg = _model_config(args, "set", data_cfg, **override)
        model = Model(cfg, seed=args.seed)
        history = train(model, splits, _train_config(args))
        val = min(r["val_mse"] for r in history if "val_mse" in r) if len(splits["val"]) else float("nan")
        test = evaluate(model, splits["test"])["mse"]
        results.append((axis, _describe(cfg), count_params(cfg), val, test))
    best = min(r[4] for r in results)
    return [[a, m, p, _fmt(v), _fmt(t), _fmt(t / best)] for a, m, p, v, t in results]


def cmd_ablate(args) -> int:
    splits = load_splits(args.data)
    _write_csv(ablation_table(splits, args), TABLE1_HEADER, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    report = run_suite(seed=args.seed, trials=args.trials, tolerance=args.tolerance, only=args.only)
    if not report:
        raise UsageError(f"no properties match {args.only}")
    for r in report:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{status} {r['property']}: max deviation {r['max_deviation']:.3e} (tolerance {r['tolerance']:.1e})")
    failed = sum(not r["passed"] for r in report)
    print(f"{len(report) - failed}/{len(report)} properties passed")
    if args.json:
        args.json.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_scale_sweep(args) -> int:
    rows = []
    for N in args.n_list:
        data_cfg = _data_config(args, n_particles=N)
        splits = {s: generate_dataset(data_cfg, s) for s in SPLITS}
        for name in args.models:
            cfg = _model_config(args, name, data_cfg)
            model = Model(cfg, seed=args.seed)
            train(model, splits, _train_config(args))
            rows.append([N, name, count_params(cfg), _fmt(evaluate(model, splits["test"])["mse"])])
            log.info("N=%d %s done", N, name)
    _write_csv(rows, ["N", "model", "params", "test MSE"], args.out)
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "verify": cmd_verify,
    "scale-sweep": cmd_scale_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, DatasetFormatError, checkpoint.FormatError) as exc:
        print(f"spacetime-set: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"spacetime-set: training diverged: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"spacetime-set: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
