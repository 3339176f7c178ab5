"""Command-line entry point: ``smartmeter-ad <command> ...``.

Commands mirror the pipeline stages and each one is also available as a
``run_*`` function::

    generate    synthetic raw readings and ground truth (train and eval periods)
    preprocess  raw CSV -> windowed dataset + rejects report
    train       windowed dataset -> model archive(s) + per-epoch loss CSV
    detect      model archive + windowed dataset -> anomaly report CSV
    evaluate    anomaly report(s) + ground truth -> metrics, AUC and ROC CSVs
    plot        loss curves, ROC panels and score scatter as SVG + CSV
    pipeline    all of the above into one output directory

Every command writes ``config.resolved.json`` (all defaults expanded) next to
its outputs. Validation failures exit with status 2 and a message naming the
file, line and field.
"""

import argparse
import contextlib
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import CHANNELS, __version__
from .autoencoder import AutoencoderModel, ModelConfig, Window
from .config import RunConfig, load_config, write_config
from .datagen import export_csv, generate_split
from .detector import fit_threshold, score_series, window_errors
from .errors import ArtifactError
from .evaluate import abnormal_indicator, confusion, metrics, roc_auc
from .formats import (load_model, load_windows, read_raw_rows, read_report_csv, read_roc_csv,
                      read_train_report, read_truth_csv, save_model, save_windows, write_auc_csv,
                      write_metrics_csv, write_rejects_csv, write_report_csv, write_roc_csv,
                      write_train_report)
from .preprocess import apply_normalizer, fit_normalizer, preprocess
from .training import split_dataset, stack_values, train

log = logging.getLogger("smartmeter_ad")

CONFIG_ECHO = "config.resolved.json"
MODEL_SEEDS = {"bilstm": 0, "lstm": 1}


def _echo(cfg, out_dir):
    return write_config(Path(out_dir) / CONFIG_ECHO, cfg)


def _deterministic(cfg):
    """Pin BLAS to one thread so reductions happen in a fixed order."""
    if cfg.pipeline.deterministic:
        return threadpool_limits(limits=1)
    return contextlib.nullcontext()


def _normalized(windows, stats):
    return [Window(apply_normalizer(w.values, stats), w.origin, w.household_id, w.step) for w in windows]


# -- stages ---------------------------------------------------------------------

def run_generate(cfg, out_dir):
    """Write train/eval raw CSVs and their ground truth. Returns the paths."""
    cfg = cfg.resolved()
    out_dir = Path(out_dir)
    train_ds, eval_ds = generate_split(cfg.generate, cfg.pipeline.contaminate_training)
    paths = {}
    paths["train_raw"], paths["train_truth"] = export_csv(
        train_ds, out_dir / "train_raw.csv", out_dir / "train_truth.csv")
    paths["eval_raw"], paths["eval_truth"] = export_csv(
        eval_ds, out_dir / "eval_raw.csv", out_dir / "eval_truth.csv")
    _echo(cfg, out_dir)
    return paths


def run_preprocess(cfg, raw_path, out_path, rejects_path=None):
    """Clean, resample, optionally denoise and window one raw CSV."""
    cfg = cfg.resolved()
    out_path = Path(out_path)
    windows, series, rejects = preprocess(read_raw_rows(raw_path), cfg.preprocess, first_line=2)
    if not windows:
        raise ArtifactError(f"{raw_path}: no gap-free window of {cfg.preprocess.window_length} steps")
    meta = {
        "source": Path(raw_path).name,
        "window_length": cfg.preprocess.window_length,
        "stride": cfg.preprocess.stride,
        "denoise": cfg.preprocess.denoise,
        "n_series": len(series),
        "n_rejects": len(rejects),
    }
    save_windows(out_path, windows, meta)
    if rejects_path is None:
        rejects_path = out_path.with_name(out_path.stem + "_rejects.csv")
    write_rejects_csv(rejects_path, rejects)
    _echo(cfg, out_path.parent)
    log.info("%s: %d windows, %d rejected rows", raw_path, len(windows), len(rejects))
    return out_path, Path(rejects_path)


def fit_models(cfg, windows, baseline=False):
    """Train the BiLSTM (and optionally the LSTM baseline) on raw-scale windows.

    Both models share the split and the normalisation statistics fitted on
    the training part. Returns ``{name: (model, stats, report, val_errors)}``.
    """
    tc = cfg.train
    tr, va = split_dataset(windows, tc.train_fraction, tc.seed)
    stats = fit_normalizer(stack_values(tr).reshape(-1, len(CHANNELS)))
    tr, va = _normalized(tr, stats), _normalized(va, stats)
    out = {}
    names = ["bilstm", "lstm"] if baseline else ["bilstm"]
    for name in names:
        mc = ModelConfig(window_length=windows[0].values.shape[0], channels=len(CHANNELS),
                         encoder_hidden=cfg.model.encoder_hidden, decoder_hidden=cfg.model.decoder_hidden,
                         bidirectional=name == "bilstm")
        rng = np.random.default_rng([tc.seed, MODEL_SEEDS[name]])
        model = AutoencoderModel.init(mc, rng, name=name)
        log.info("training %s on %d windows (%d held out)", name, len(tr), len(va))
        model, report = train(model, tr, tc, validation=va)
        _, E = window_errors(model, va)
        out[name] = (model, stats, report, E.ravel())
    return out


def run_train(cfg, windows_path, out_dir):
    """Train and write ``<name>.model`` and ``<name>_train.csv`` per model."""
    cfg = cfg.resolved()
    out_dir = Path(out_dir)
    windows, _ = load_windows(windows_path)
    if len(windows) < 2:
        raise ArtifactError(f"{windows_path}: need at least 2 windows to split, got {len(windows)}")
    paths = {}
    for name, (model, stats, report, val_err) in fit_models(cfg, windows, cfg.pipeline.baseline).items():
        paths[name] = save_model(out_dir / f"{name}.model", model, stats, cfg.train, val_err,
                                 extra={"source": Path(windows_path).name})
        write_train_report(out_dir / f"{name}_train.csv", report)
    _echo(cfg, out_dir)
    return paths


def run_detect(cfg, model_path, windows_path, out_path):
    """Score every covered timestep and label it against theta."""
    cfg = cfg.resolved()
    model, stats, _, val_err = load_model(model_path)
    windows, _ = load_windows(windows_path)
    if cfg.detect.strategy != "manual" and val_err is None:
        raise ArtifactError(f"{model_path}: archive has no validation errors; use --theta")
    theta = fit_threshold(val_err, cfg.detect)
    report = score_series(model, _normalized(windows, stats), theta, stats)
    write_report_csv(out_path, report)
    _echo(cfg, Path(out_path).parent)
    log.info("%s: theta %.6g, %d of %d steps abnormal", model.name, theta,
             int(np.sum(report.labels == 0)), len(report))
    return Path(out_path)


def truth_indicators(report, truth):
    """Joint and per-channel 0/1 anomaly indicators aligned with report rows."""
    keys = list(zip(report.household_ids, report.timestamps.tolist()))
    joint = {(a.household_id, a.timestamp) for a in truth}
    out = {"joint": np.array([k in joint for k in keys], dtype=np.int64)}
    for c in CHANNELS:
        hit = {(a.household_id, a.timestamp) for a in truth if a.channel == c}
        out[c] = np.array([k in hit for k in keys], dtype=np.int64)
    return out


def evaluate_report(report, truth):
    """``(metric_rows, auc_rows, curves)`` for one anomaly report."""
    y = truth_indicators(report, truth)
    cm = confusion(abnormal_indicator(report.labels), y["joint"])
    mse = report.channel_errors.ravel()
    metric_rows = [(report.model, "abnormal_positive", metrics(cm, mse), cm),
                   (report.model, "normal_positive", metrics(cm.flipped(), mse), cm.flipped())]
    auc_rows, curves = [], []
    scores = [("joint", report.e_t)] + [(c, report.channel_errors[:, k]) for k, c in enumerate(CHANNELS)]
    for scope, s in scores:
        if y[scope].min() == y[scope].max():
            auc_rows.append((report.model, scope, None))
            continue
        roc = roc_auc(s, y[scope])
        auc_rows.append((report.model, scope, roc.auc))
        curves.append((report.model, scope, roc))
    return metric_rows, auc_rows, curves


def run_evaluate(cfg, report_paths, truth_path, out_dir):
    cfg = cfg.resolved()
    out_dir = Path(out_dir)
    truth = read_truth_csv(truth_path)
    metric_rows, auc_rows, curves = [], [], []
    for p in report_paths:
        m, a, c = evaluate_report(read_report_csv(p), truth)
        metric_rows += m
        auc_rows += a
        curves += c
    paths = {
        "metrics": write_metrics_csv(out_dir / "metrics.csv", metric_rows),
        "auc": write_auc_csv(out_dir / "auc.csv", auc_rows),
        "roc": write_roc_csv(out_dir / "roc.csv", curves),
    }
    _echo(cfg, out_dir)
    for model, scope, auc in auc_rows:
        if scope == "joint":
            log.info("%s joint AUC %s", model, "undefined" if auc is None else f"{auc:.5f}")
    return paths


def run_plot(cfg, out_dir, train_reports=(), roc_path=None, report_paths=(), household=None):
    """Render whichever figures the given inputs allow."""
    from . import plotting

    cfg = cfg.resolved()
    out_dir = Path(out_dir)
    written = []
    for p in train_reports:
        written += plotting.plot_loss_curve(read_train_report(p), out_dir, name=f"{Path(p).stem}_loss")
    if roc_path is not None:
        curves = read_roc_csv(roc_path)
        if curves:
            written += plotting.plot_roc(curves, out_dir)
    for p in report_paths:
        rep = read_report_csv(p)
        written += plotting.plot_scores(rep, out_dir, household, name=f"{rep.model or Path(p).stem}_scores")
    _echo(cfg, out_dir)
    return written


def run_pipeline(cfg, out_dir):
    """Generate, preprocess, train, detect, evaluate and plot into ``out_dir``."""
    cfg = cfg.resolved()
    out = Path(out_dir)
    data = run_generate(cfg, out / "data")
    win = {}
    for split in ("train", "eval"):
        win[split], _ = run_preprocess(cfg, data[f"{split}_raw"], out / "windows" / f"{split}_windows.json",
                                       out / "windows" / f"{split}_rejects.csv")
    models = run_train(cfg, win["train"], out / "models")
    reports = [run_detect(cfg, path, win["eval"], out / "reports" / f"{name}_report.csv")
               for name, path in models.items()]
    ev = run_evaluate(cfg, reports, data["eval_truth"], out / "evaluation")
    run_plot(cfg, out / "figures", [out / "models" / f"{n}_train.csv" for n in models], ev["roc"], reports)
    _echo(cfg, out)
    return out


# -- argument parsing -------------------------------------------------------------

def _common(p):
    p.add_argument("--config", type=Path, help="JSON run configuration (unknown keys are rejected)")
    p.add_argument("--seed", type=int, help="overrides the generator and training seeds")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                   help="pin BLAS to one thread (default on)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _train_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--baseline", action="store_true", default=None,
                   help="also train the uni-directional LSTM autoencoder")


def _detect_flags(p):
    p.add_argument("--theta", type=float, help="fixed threshold (implies --strategy manual)")
    p.add_argument("--strategy", choices=["manual", "quantile", "mean_plus_k_std"])
    p.add_argument("--q", type=float, help="validation-error quantile for the quantile strategy")
    p.add_argument("--k", type=float, help="multiplier for the mean_plus_k_std strategy")


def _gen_flags(p):
    p.add_argument("--households", type=int)
    p.add_argument("--days", type=int)
    p.add_argument("--anomaly-rate", type=float)


def _prep_flags(p):
    p.add_argument("--stride", type=int)
    p.add_argument("--denoise", action=argparse.BooleanOptionalAction, default=None,
                   help="apply Haar DWT soft-threshold denoising (default off)")


def build_parser():
    parser = argparse.ArgumentParser(prog="smartmeter-ad", description="BiLSTM autoencoder anomaly detection "
                                     "for 4-channel smart-meter data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic raw readings and ground truth")
    _common(p)
    _gen_flags(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("preprocess", help="raw CSV to windowed dataset")
    _common(p)
    _prep_flags(p)
    p.add_argument("raw", type=Path)
    p.add_argument("--out", type=Path, required=True, help="windowed dataset file")
    p.add_argument("--rejects", type=Path, help="rejects CSV (default: <out>_rejects.csv)")

    p = sub.add_parser("train", help="train model archive(s) on a windowed dataset")
    _common(p)
    _train_flags(p)
    p.add_argument("windows", type=Path)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("detect", help="score a windowed dataset with a model archive")
    _common(p)
    _detect_flags(p)
    p.add_argument("model", type=Path)
    p.add_argument("windows", type=Path)
    p.add_argument("--out", type=Path, required=True, help="anomaly report CSV")

    p = sub.add_parser("evaluate", help="metrics and ROC from anomaly reports and ground truth")
    _common(p)
    p.add_argument("--report", type=Path, action="append", required=True, help="repeat for several models")
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("plot", help="render SVG figures with their CSV points")
    _common(p)
    p.add_argument("--train-report", type=Path, action="append", default=[])
    p.add_argument("--roc", type=Path)
    p.add_argument("--report", type=Path, action="append", default=[])
    p.add_argument("--household", help="household drawn in the score scatter (default: first)")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("pipeline", help="run every stage end to end")
    _common(p)
    _gen_flags(p)
    _prep_flags(p)
    _train_flags(p)
    _detect_flags(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def config_from_args(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    get = lambda name: getattr(args, name, None)  # noqa: E731
    detect = {"strategy": get("strategy"), "q": get("q"), "k": get("k"), "theta": get("theta")}
    if detect["theta"] is not None and detect["strategy"] is None:
        detect["strategy"] = "manual"
    try:
        return cfg.with_overrides(
            generate={"n_households": get("households"), "n_days": get("days"),
                      "anomaly_rate": get("anomaly_rate")},
            preprocess={"stride": get("stride"), "denoise": get("denoise")},
            train={"epochs": get("epochs"), "batch_size": get("batch_size"),
                   "learning_rate": get("learning_rate")},
            detect=detect,
            pipeline={"baseline": get("baseline"), "deterministic": get("deterministic")},
        )
    except ValueError as e:
        raise ArtifactError(f"command line: {e}") from None


def dispatch(args, cfg):
    c = args.command
    if c == "generate":
        return run_generate(cfg, args.out)
    if c == "preprocess":
        return run_preprocess(cfg, args.raw, args.out, args.rejects)
    if c == "train":
        return run_train(cfg, args.windows, args.out)
    if c == "detect":
        return run_detect(cfg, args.model, args.windows, args.out)
    if c == "evaluate":
        return run_evaluate(cfg, args.report, args.truth, args.out)
    if c == "plot":
        return run_plot(cfg, args.out, args.train_report, args.roc, args.report, args.household)
    return run_pipeline(cfg, args.out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = config_from_args(args)
        with _deterministic(cfg):
            dispatch(args, cfg)
    except (ArtifactError, FileNotFoundError) as e:
        print(f"smartmeter-ad {args.command}: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
