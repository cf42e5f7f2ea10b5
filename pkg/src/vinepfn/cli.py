"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error (including malformed
input files), 3 numeric failure during training, 4 model failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

log = logging.getLogger("vinepfn")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_MODEL = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _load_weights(path):
    from .fileio import FormatError, default_weights_path, load_weights

    path = path or default_weights_path()
    try:
        return load_weights(path)
    except FileNotFoundError:
        raise CliError(f"weights file not found: {path}") from None
    except FormatError as exc:
        raise CliError(f"{path}: {exc}") from None


def _read_csv(path, require_labels=True):
    from .fileio import FormatError, read_dataset_csv

    try:
        return read_dataset_csv(path, require_labels)
    except FileNotFoundError:
        raise CliError(f"file not found: {path}") from None
    except (FormatError, ValueError) as exc:
        raise CliError(str(exc)) from None


def _columns_by_name(ds, names, what):
    index = {n: j for j, n in enumerate(ds.names)}
    missing = [n for n in names if n not in index]
    if missing:
        raise CliError(f"{what} lacks feature columns: {', '.join(missing[:5])}")
    return ds.x[:, [index[n] for n in names]]


def _write(path, data):
    from .fileio import atomic_write

    try:
        atomic_write(path, data)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}") from None


def _fmt(v):
    return f"{v:.6g}"


# ------------------------------------------------------------------ commands


def cmd_prior_train(args, cfg):
    from .fileio import weights_to_bytes
    from .pfn import DivergenceError, train_offline

    steps = cfg.train.steps if args.steps is None else args.steps
    seed = cfg.train.seed if args.seed is None else args.seed
    if steps < 1:
        raise CliError(f"--steps must be >= 1, got {steps}")
    out_dir = os.path.dirname(os.path.abspath(args.out))
    if not os.path.isdir(out_dir):
        raise CliError(f"output directory does not exist: {out_dir}")

    def checkpoint(step, w):
        _write(args.out + ".ckpt", weights_to_bytes(w))
        log.info("checkpoint at step %d -> %s.ckpt", step, args.out)

    try:
        weights = train_offline(cfg.prior, cfg.pfn, steps=steps, batch=cfg.train.batch, lr=cfg.train.lr,
                                seed=seed, clip_norm=cfg.train.clip_norm, warmup=cfg.train.warmup or None,
                                log_every=args.log_every, checkpoint_every=args.checkpoint_every,
                                on_checkpoint=checkpoint)
    except DivergenceError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from None
    _write(args.out, weights_to_bytes(weights))
    print(f"wrote {args.out} ({steps} steps, final loss {_fmt(weights.loss_trace[-1])})", file=sys.stderr)


def cmd_synth_data(args, cfg):
    from .eval.synthetic import generate_vineyard_like
    from .fileio import dataset_to_csv

    ds = generate_vineyard_like(args.seed, n=args.rows, f=args.features)
    _write(args.out, dataset_to_csv(ds))
    print(f"wrote {args.out}: {ds.n_rows} rows, {len(ds.names)} features", file=sys.stderr)


def _feature_list(args, cfg):
    if args.features_from:
        try:
            with open(args.features_from, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise CliError(f"cannot read {args.features_from}: {exc}") from None
        try:
            names = json.loads(text).get("features")
        except (ValueError, AttributeError):
            names = [line.strip() for line in text.splitlines() if line.strip()]
        if not names:
            raise CliError(f"{args.features_from} lists no features")
        return list(names)
    if args.data:
        from .eval.protocol import select_features_by_shap

        ds = _read_csv(args.data)
        top, _ = select_features_by_shap(ds.x, ds.binary_labels(), args.top_k or cfg.eval.top_k, 0, cfg.gbdt)
        return [ds.names[j] for j in top]
    raise CliError("synth-grid needs --features-from or --data to choose feature planes")


def cmd_synth_grid(args, cfg):
    from .fileio import grid_to_bytes
    from .geomap import synthesize_grid

    names = _feature_list(args, cfg)
    width = args.width or cfg.map.width
    height = args.height or cfg.map.height
    try:
        grid = synthesize_grid(args.seed, names, width, height, tuple(int(b) for b in cfg.map.blocks),
                               args.total_features)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    _write(args.out, grid_to_bytes(grid))
    print(f"wrote {args.out}: {width}x{height} pixels, {len(names)} features, "
          f"{int((~grid.nodata).sum())} with data", file=sys.stderr)


def cmd_benchmark(args, cfg):
    from .eval.protocol import BenchmarkError, SplitSpec, default_models, run_benchmark, select_features_by_shap
    from .explain import importance_report

    ds = _read_csv(args.data)
    y = ds.binary_labels()
    if len(np.unique(y)) < 2:
        raise CliError("benchmark needs both classes in the binarized target")
    weights = _load_weights(args.weights)
    x, names = ds.x, list(ds.names)
    top_k = cfg.eval.top_k if args.top_k is None else args.top_k
    importance = None
    if top_k and top_k < x.shape[1]:
        top, scores = select_features_by_shap(x, y, top_k, 0, cfg.gbdt, args.shap_mode)
        importance = importance_report(names, scores)
        x, names = x[:, top], [names[j] for j in top]
    seeds = args.seeds or cfg.eval.seeds
    models = default_models(weights, cfg.gbdt, cfg.preprocess.ensembles,
                            {"lr": cfg.logistic.logistic_lr, "epochs": cfg.logistic.logistic_epochs,
                             "l2": cfg.logistic.logistic_l2})
    spec = SplitSpec(cfg.eval.train_fraction, cfg.eval.stratified)
    try:
        report = run_benchmark(models, x, y, seeds, spec=spec, roc_seed=cfg.eval.roc_seed,
                               threads=args.threads, progress=lambda s: log.info("seed %d done", s))
    except BenchmarkError as exc:
        raise CliError(str(exc), EXIT_MODEL) from None
    report.features = names
    _write(args.out, json.dumps(report.to_dict(), indent=2) + "\n")
    roc_dir = args.roc_dir or os.path.splitext(args.out)[0] + "_roc"
    if report.roc:
        from .plotting import write_roc_figures

        write_roc_figures(report, roc_dir)
    if args.importance and importance is not None:
        ranked = {n: {"score": float(_fmt(v["score"])), "rank": v["rank"]} for n, v in importance.items()}
        _write(args.importance, json.dumps(ranked, indent=2) + "\n")
    for r in report.rows:
        print(f"{r['model']:<14} {r['target_mode']:<9} acc {r['accuracy_mean']:.4f}±{r['accuracy_std']:.4f}  "
              f"ba {r['balanced_accuracy_mean']:.4f}±{r['balanced_accuracy_std']:.4f}  "
              f"f1 {r['f1_mean']:.4f}±{r['f1_std']:.4f}", file=sys.stderr)


def _fit_pfn_predictor(weights, train, names, n_members):
    from .geomap import pfn_predictor

    y = train.binary_labels()
    if not np.any(y == 1):
        raise CliError("training data has no positive rows")
    x = _columns_by_name(train, names, "training data")
    return pfn_predictor(weights, x, y, n_members, names)


def cmd_predict(args, cfg):
    train = _read_csv(args.data)
    query = _read_csv(args.query, require_labels=False)
    weights = _load_weights(args.weights)
    names = list(train.names)
    xq = _columns_by_name(query, names, "query data")
    try:
        predictor = _fit_pfn_predictor(weights, train, names, args.ensembles or cfg.map.ensembles)
        p = predictor(xq)
    except CliError:
        raise
    except Exception as exc:  # noqa: BLE001 - any model failure maps to exit 4
        raise CliError(f"model pfn-{args.ensembles or cfg.map.ensembles} failed: {exc}", EXIT_MODEL) from None
    lines = ["row,probability"] + [f"{i},{_fmt(v)}" for i, v in enumerate(p)]
    _write(args.out, "\n".join(lines) + "\n")


def cmd_map(args, cfg):
    from .fileio import FormatError, load_grid
    from .geomap import aggregate_blocks, blocks_csv, predict_grid, render_png

    try:
        grid = load_grid(args.grid)
    except FileNotFoundError:
        raise CliError(f"file not found: {args.grid}") from None
    except FormatError as exc:
        raise CliError(f"{args.grid}: {exc}") from None
    train = _read_csv(args.train)
    weights = _load_weights(args.weights)
    n_members = args.ensembles or cfg.map.ensembles
    try:
        predictor = _fit_pfn_predictor(weights, train, grid.names, n_members)
        raster = predict_grid(predictor, grid)
    except CliError:
        raise
    except Exception as exc:  # noqa: BLE001
        raise CliError(f"model pfn-{n_members} failed: {exc}", EXIT_MODEL) from None
    _write(args.out, render_png(raster))
    if args.aggregate:
        if grid.block_id is None:
            raise CliError(f"{args.grid} carries no block ids to aggregate")
        _write(args.aggregate, blocks_csv(aggregate_blocks(raster, grid.block_id)))
    if args.figure:
        from .plotting import map_figure_svg

        _write(args.figure, map_figure_svg(raster))


# -------------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="vinepfn", description="PFN disease-risk classification toolkit")
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prior-train", help="train PFN weights on the synthetic prior")
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--log-every", type=_positive_int, default=50)
    s.add_argument("--checkpoint-every", type=_nonneg_int, default=0,
                   help="also write <out>.ckpt every N steps (0 disables)")
    s.set_defaults(fn=cmd_prior_train)

    s = sub.add_parser("synth-data", help="write a synthetic vineyard-like dataset CSV")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--rows", type=_positive_int, default=1335)
    s.add_argument("--features", type=_positive_int, default=450)
    s.set_defaults(fn=cmd_synth_data)

    s = sub.add_parser("synth-grid", help="write a demo pixel grid")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--features-from", help="report JSON with a 'features' list, or one name per line")
    s.add_argument("--data", help="dataset CSV; features chosen by SHAP ranking")
    s.add_argument("--top-k", type=_positive_int)
    s.add_argument("--total-features", type=_positive_int, default=450,
                   help="feature count of the dataset the names come from")
    s.add_argument("--width", type=_positive_int)
    s.add_argument("--height", type=_positive_int)
    s.set_defaults(fn=cmd_synth_grid)

    s = sub.add_parser("benchmark", help="repeated-split benchmark of all models")
    s.add_argument("--data", required=True)
    s.add_argument("--weights")
    s.add_argument("--seeds", type=_positive_int)
    s.add_argument("--out", required=True)
    s.add_argument("--roc-dir")
    s.add_argument("--top-k", type=_nonneg_int, help="0 keeps every feature")
    s.add_argument("--importance", help="write the SHAP feature ranking (JSON) here")
    s.add_argument("--shap-mode", choices=("imbalance", "balanced"), default="imbalance",
                   help="target arm whose GBDT ranks features")
    s.add_argument("--threads", type=_positive_int)
    s.set_defaults(fn=cmd_benchmark)

    s = sub.add_parser("predict", help="positive-class probabilities for query rows")
    s.add_argument("--data", required=True)
    s.add_argument("--query", required=True)
    s.add_argument("--weights")
    s.add_argument("--out", required=True)
    s.add_argument("--ensembles", type=_positive_int)
    s.set_defaults(fn=cmd_predict)

    s = sub.add_parser("map", help="render a disease-probability heatmap for a pixel grid")
    s.add_argument("--grid", required=True)
    s.add_argument("--train", required=True)
    s.add_argument("--weights")
    s.add_argument("--out", required=True)
    s.add_argument("--aggregate")
    s.add_argument("--figure", help="also write an annotated SVG map panel")
    s.add_argument("--ensembles", type=_positive_int)
    s.set_defaults(fn=cmd_map)
    return p


class _StderrHandler(logging.StreamHandler):
    """Writes to whatever ``sys.stderr`` is at emit time."""

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, value):
        pass


def _configure_logging(level):
    for h in [h for h in log.handlers if isinstance(h, _StderrHandler)]:
        log.removeHandler(h)
    handler = _StderrHandler()
    handler.setFormatter(logging.Formatter("%(message)s"))
    log.addHandler(handler)
    log.setLevel(level)
    log.propagate = False


def main(argv=None):
    from .config import ConfigError, load_config

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _configure_logging(logging.INFO if args.verbose or args.command == "prior-train" else logging.WARNING)
    try:
        cfg = load_config(args.config)
        args.fn(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
