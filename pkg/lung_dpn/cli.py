# -*- coding: utf-8 -*-
"""Command-line interface for the nodule detection and diagnosis pipeline."""

import functools
import logging
import os
from typing import Dict, List, Optional

import coloredlogs
import numpy as np
import pandas as pd
import typer

from .classification.features import (
    PIXEL_DIM,
    FeatureTable,
    consensus_lookup,
    extract_features,
    read_feature_table,
    training_crops,
    write_feature_table,
)
from .classification.gbm import ablation_study, gbm_fit, gbm_predict_batch, load_gbm, save_gbm
from .classification.trainer import train_classifier
from .config.settings import PipelineConfig
from .core.checkpoint import load_module
from .data.annotations import Consensus, read_manifest, records_by_series, voxel_boxes_for_series
from .data.synth import synth_generate, write_synth_dataset
from .data.volume import Volume, preprocess as preprocess_volume, read_mhd, resample_isotropic, write_mhd
from .detection.postprocess import detect_volume, detector_predict_fn, read_detections, write_detections
from .detection.trainer import TrainingSample, recall_report, train_detector
from .errors import LungDpnError, NumericError
from .evaluation.froc import froc, write_froc_curve
from .evaluation.matching import match_detections
from .evaluation.metrics import (
    CANCER,
    accuracy,
    borderline_stats,
    cohen_kappa,
    mean_log_likelihood,
    patient_diagnosis,
    rater_agreement,
)
from .network.classifier import build_classifier, classify_batch
from .network.detector import build_detector, compare_parameter_counts
from .utils.file_utils import find_mhd_files, get_file_hash, read_csv, series_id_of, write_csv

logger = logging.getLogger(__name__)

PREDICTION_COLUMNS = ["series_id", "nodule_id", "probability", "label"]
DIAGNOSIS_COLUMNS = ["series_id", "verdict", "max_prob"]
METRIC_COLUMNS = ["metric", "value"]
EXIT_INPUT_ERROR = 2
EXIT_NUMERIC_ERROR = 3

app = typer.Typer(
    help="3D dual path networks for lung nodule detection and diagnosis.",
    add_completion=False,
    no_args_is_help=True,
)

ConfigOption = typer.Option(None, "--config", help="YAML config overlaid on the preset")
PresetOption = typer.Option("default", "--preset", help="Base configuration: default or desk")
SeedOption = typer.Option(None, "--seed", help="Seed for every random component")
VerboseOption = typer.Option(False, "--verbose", "-v", help="Debug logging")


def setup_logging(verbose: bool = False):
    coloredlogs.install(
        level=logging.DEBUG if verbose else logging.INFO,
        fmt="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def load_config(
    config_path: Optional[str], preset: str = "default", seed: Optional[int] = None
) -> PipelineConfig:
    """Preset, then YAML overlay, then the seed override."""
    if preset not in ("default", "desk"):
        raise typer.BadParameter(f"unknown preset {preset!r}", param_hint="--preset")
    config = PipelineConfig.desk() if preset == "desk" else PipelineConfig.default()
    if config_path:
        config = PipelineConfig.from_yaml(config_path, base=config)
    if seed is not None:
        config.update_seed(seed)
    return config


def handle_errors(func):
    """Map pipeline errors onto exit codes (2 input, 3 numeric)."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except NumericError as e:
            logger.error(f"✗ Numeric failure: {e}")
            raise typer.Exit(EXIT_NUMERIC_ERROR)
        except LungDpnError as e:
            logger.error(f"✗ {e}")
            raise typer.Exit(EXIT_INPUT_ERROR)
        except OSError as e:
            logger.error(f"✗ Cannot access {e.filename or 'input'}: {e.strerror or e}")
            raise typer.Exit(EXIT_INPUT_ERROR)

    return wrapper


def load_volumes(data_dir: str) -> Dict[str, Volume]:
    """Every volume under ``data_dir`` keyed by series id."""
    paths = find_mhd_files(data_dir)
    if not paths:
        raise typer.BadParameter(f"no .mhd volumes found in {data_dir}", param_hint="--data")
    return {series_id_of(p): read_mhd(p) for p in paths}


def default_manifest(data_dir: str, manifest: Optional[str]) -> str:
    return manifest or os.path.join(data_dir, "manifest.csv")


def log_artifact(path: str):
    """Log a written file with a short content hash for comparing runs."""
    digest = get_file_hash(path)
    logger.info(f"✓ Wrote {path} (sha256 {digest[:12] if digest else 'unreadable'})")


@app.command()
@handle_errors
def synth(
    n: int = typer.Option(8, "--n", help="Number of volumes"),
    extent: int = typer.Option(48, "--extent", help="Cubic volume extent"),
    out: str = typer.Option("synth_data", "--out", help="Output directory"),
    n_jobs: int = typer.Option(1, "--n-jobs"),
    config: Optional[str] = ConfigOption,
    preset: str = PresetOption,
    seed: Optional[int] = SeedOption,
    verbose: bool = VerboseOption,
):
    """Generate planted-nodule volumes and their manifest."""
    setup_logging(verbose)
    cfg = load_config(config, preset, seed)
    volumes = synth_generate(n, extent, cfg.data, cfg.volcore.seed, n_jobs)
    manifest = write_synth_dataset(out, volumes)
    logger.info(f"✓ Wrote {len(volumes)} volumes and {manifest}")


@app.command()
@handle_errors
def preprocess(
    data: str = typer.Option(..., "--data", help="Directory of HU volumes"),
    out: str = typer.Option(..., "--out", help="Output directory"),
    masks: Optional[str] = typer.Option(None, "--masks", help="Directory of lung masks (same names)"),
    config: Optional[str] = ConfigOption,
    preset: str = PresetOption,
    seed: Optional[int] = SeedOption,
    verbose: bool = VerboseOption,
):
    """Clip, rescale, mask and optionally resample raw CT volumes."""
    setup_logging(verbose)
    cfg = load_config(config, preset, seed)
    paths = find_mhd_files(data)
    if not paths:
        raise typer.BadParameter(f"no .mhd volumes found in {data}", param_hint="--data")
    os.makedirs(out, exist_ok=True)
    for path in paths:
        series_id = series_id_of(path)
        mask_path = os.path.join(masks, f"{series_id}.mhd") if masks else None
        if mask_path and not os.path.exists(mask_path):
            logger.warning(f"⚠ No mask for {series_id}")
            mask_path = None
        volume = read_mhd(path, mask_path)
        if cfg.data.resample:
            volume = resample_isotropic(volume, cfg.data.resample_spacing)
        write_mhd(
            os.path.join(out, f"{series_id}.mhd"),
            preprocess_volume(volume, cfg.data.hu_min, cfg.data.hu_max),
        )
    logger.info(f"✓ Preprocessed {len(paths)} volumes into {out}")


def _training_samples(data: str, manifest: Optional[str]) -> List[TrainingSample]:
    volumes = load_volumes(data)
    records = read_manifest(default_manifest(data, manifest))
    return [
        TrainingSample(v.voxels, voxel_boxes_for_series(records, sid, v), sid)
        for sid, v in volumes.items()
    ]


@app.command("train-detect")
@handle_errors
def train_detect(
    data: str = typer.Option(..., "--data", help="Directory of preprocessed volumes"),
    out: str = typer.Option("runs/detector", "--out", help="Checkpoint directory"),
    manifest: Optional[str] = typer.Option(None, "--manifest", help="Defaults to DATA/manifest.csv"),
    arch: Optional[str] = typer.Option(None, "--arch", help="dpn26 or res18"),
    epochs: Optional[int] = typer.Option(None, "--epochs"),
    compare_params: bool = typer.Option(False, "--compare-params", help="Log DPN26 vs Res18 sizes"),
    config: Optional[str] = ConfigOption,
    preset: str = PresetOption,
    seed: Optional[int] = SeedOption,
    verbose: bool = VerboseOption,
):
    """Train the anchor detector and report training recall."""
    setup_logging(verbose)
    cfg = load_config(config, preset, seed).update_detector_settings(arch=arch, epochs=epochs)
    if compare_params:
        counts = compare_parameter_counts(cfg)
        logger.info(
            f"Parameters: dpn26 {counts['dpn26']:,} vs res18 {counts['res18']:,} "
            f"(ratio {counts['dpn26'] / counts['res18']:.3f})"
        )
    samples = _training_samples(data, manifest)
    result = train_detector(samples, cfg, out)
    log_artifact(result.checkpoints[-1])
    recall_report(result.net, samples, cfg)


@app.command()
@handle_errors
def detect(
    data: str = typer.Option(..., "--data", help="Directory of preprocessed volumes"),
    checkpoint: str = typer.Option(..., "--checkpoint", help="Detector checkpoint (.dlt)"),
    out: str = typer.Option("detections.csv", "--out", help="Detection CSV"),
    arch: Optional[str] = typer.Option(None, "--arch"),
    config: Optional[str] = ConfigOption,
    preset: str = PresetOption,
    seed: Optional[int] = SeedOption,
    verbose: bool = VerboseOption,
):
    """Run whole-volume detection and write the detection CSV."""
    setup_logging(verbose)
    cfg = load_config(config, preset, seed).update_detector_settings(arch=arch)
    net = build_detector(cfg.detector.arch, config=cfg)
    load_module(checkpoint, net)
    predict = detector_predict_fn(net)
    detections = {sid: detect_volume(v, predict, cfg) for sid, v in load_volumes(data).items()}
    write_detections(out, detections)
    logger.info(f"✓ {sum(len(d) for d in detections.values())} detections written to {out}")


@app.command("train-classify")
@handle_errors
def train_classify(
    data: str = typer.Option(..., "--data", help="Directory of preprocessed volumes"),
    out: str = typer.Option("runs/classifier", "--out", help="Checkpoint directory"),
    manifest: Optional[str] = typer.Option(None, "--manifest"),
    epochs: Optional[int] = typer.Option(None, "--epochs"),
    config: Optional[str] = ConfigOption,
    preset: str = PresetOption,
    seed: Optional[int] = SeedOption,
    verbose: bool = VerboseOption,
):
    """Train the nodule classifier on consensus-labelled crops."""
    setup_logging(verbose)
    cfg = load_config(config, preset, seed).update_classifier_settings(epochs=epochs)
    volumes = load_volumes(data)
    crops, labels, _ = training_crops(
        volumes, read_manifest(default_manifest(data, manifest)), cfg.classifier.crop_extent
    )
    result = train_classifier(crops, labels, cfg, out)
    log_artifact(result.checkpoint)
    probs, _ = classify_batch(crops, result.net)
    logger.info(f"Training accuracy {accuracy(probs, labels):.3f}")


@app.command()
@handle_errors
def features(
    data: str = typer.Option(..., "--data", help="Directory of preprocessed volumes"),
    classifier: str = typer.Option(..., "--classifier", help="Classifier checkpoint (.dlt)"),
    out: str = typer.Option("features.csv", "--out", help="Feature CSV"),
    dets: Optional[str] = typer.Option(None, "--dets", help="Detections to describe (default: annotations)"),
    manifest: Optional[str] = typer.Option(None, "--manifest"),
    config: Optional[str] = ConfigOption,
    preset: str = PresetOption,
    seed: Optional[int] = SeedOption,
    verbose: bool = VerboseOption,
):
    """Dump fused features for annotated nodules or for detections.

    Labels come from the consensus of the matched annotation; unmatched or
    excluded nodules get an empty label.
    """
    setup_logging(verbose)
    cfg = load_config(config, preset, seed)
    net = build_classifier(cfg)
    load_module(classifier, net)
    volumes = load_volumes(data)
    manifest_path = default_manifest(data, manifest)
    truth = consensus_lookup(read_manifest(manifest_path), volumes) if os.path.exists(manifest_path) else {}
    detected = read_detections(dets) if dets else None

    series_ids, nodule_ids, rows, labels = [], [], [], []
    for sid, volume in volumes.items():
        gt_boxes, gt_labels = truth.get(sid, ([], []))
        if detected is None:
            boxes, box_labels = gt_boxes, gt_labels
        else:
            found = detected.get(sid, [])
            boxes = [d.box for d in found]
            match = match_detections(found, gt_boxes)
            box_labels = [gt_labels[j] if j >= 0 else None for j in match.gt_index]
        _, fused = extract_features(volume, boxes, net, cfg.classifier.crop_extent)
        for i, (vector, label) in enumerate(zip(fused, box_labels)):
            series_ids.append(sid)
            nodule_ids.append(i)
            rows.append(vector)
            labels.append(np.nan if label is None else float(label))

    width = net.feature_dim + 1 + PIXEL_DIM
    table = FeatureTable(
        series_ids,
        nodule_ids,
        np.stack(rows) if rows else np.zeros((0, width)),
        np.asarray(labels, dtype=np.float64),
        net.feature_dim,
    )
    write_feature_table(out, table)
    logger.info(f"✓ {len(table)} feature rows written to {out}")


@app.command("gbm-fit")
@handle_errors
def gbm_fit_command(
    features_csv: str = typer.Option(..., "--features", help="Feature CSV from `features`"),
    out: str = typer.Option("gbm.model", "--out", help="GBM1 model file"),
    test: Optional[str] = typer.Option(None, "--test", help="Held-out feature CSV for the ablation"),
    config: Optional[str] = ConfigOption,
    preset: str = PresetOption,
    seed: Optional[int] = SeedOption,
    verbose: bool = VerboseOption,
):
    """Fit the boosted trees on labelled feature rows."""
    setup_logging(verbose)
    cfg = load_config(config, preset, seed)
    table = read_feature_table(features_csv).labelled()
    model = gbm_fit(table.features, table.labels, cfg.gbm)
    save_gbm(out, model)
    log_artifact(out)
    train_acc = accuracy(gbm_predict_batch(model, table.features), table.labels)
    logger.info(
        f"✓ GBM with {len(model.trees)} trees saved to {out}: training loss "
        f"{model.loss_curve[0]:.4f} → {model.loss_curve[-1]:.4f}, accuracy {train_acc:.3f}"
    )
    if test:
        held_out = read_feature_table(test).labelled()
        ablation_study(
            table.features, table.labels, held_out.features, held_out.labels, table.deep_dim, cfg.gbm
        )


@app.command()
@handle_errors
def diagnose(
    features_csv: str = typer.Option(..., "--features", help="Feature CSV of detected nodules"),
    model: str = typer.Option(..., "--gbm", help="GBM1 model file"),
    out: str = typer.Option("diagnosis.csv", "--out", help="Diagnosis CSV"),
    nodules_out: Optional[str] = typer.Option(None, "--nodules-out", help="Per-nodule prediction CSV"),
    data: Optional[str] = typer.Option(None, "--data", help="Volumes, so scans without nodules are listed"),
    cutoff: Optional[float] = typer.Option(None, "--cutoff", help="Malignancy cutoff (default: evaluation.cutoff)"),
    config: Optional[str] = ConfigOption,
    preset: str = PresetOption,
    seed: Optional[int] = SeedOption,
    verbose: bool = VerboseOption,
):
    """Per-patient verdict: cancer when any nodule is predicted malignant."""
    setup_logging(verbose)
    cfg = load_config(config, preset, seed)
    if cutoff is None:
        cutoff = cfg.evaluation.cutoff
    booster = load_gbm(model)
    table = read_feature_table(features_csv)
    probs = gbm_predict_batch(booster, table.features) if len(table) else np.zeros(0)
    if nodules_out:
        write_csv(
            nodules_out,
            pd.DataFrame(
                {
                    "series_id": table.series_ids,
                    "nodule_id": table.nodule_ids,
                    "probability": probs,
                    "label": table.labels,
                },
                columns=PREDICTION_COLUMNS,
            ),
        )

    per_series: Dict[str, List[float]] = {}
    if data:
        for path in find_mhd_files(data):
            per_series[series_id_of(path)] = []
    for sid, p in zip(table.series_ids, probs):
        per_series.setdefault(sid, []).append(float(p))
    rows = [
        (sid, patient_diagnosis(ps, cutoff), max(ps, default=0.0))
        for sid, ps in sorted(per_series.items())
    ]
    write_csv(out, pd.DataFrame(rows, columns=DIAGNOSIS_COLUMNS))
    n_cancer = sum(1 for r in rows if r[1] == CANCER)
    logger.info(f"✓ Diagnosed {len(rows)} patients ({n_cancer} cancer) → {out}")


@app.command("eval-froc")
@handle_errors
def eval_froc(
    dets: str = typer.Option(..., "--dets", help="Detection CSV"),
    gt: str = typer.Option(..., "--gt", help="Annotation manifest"),
    data: Optional[str] = typer.Option(None, "--data", help="Volumes for world→voxel mapping and scan count"),
    out: str = typer.Option("froc.csv", "--out", help="FROC curve CSV"),
    config: Optional[str] = ConfigOption,
    preset: str = PresetOption,
    seed: Optional[int] = SeedOption,
    verbose: bool = VerboseOption,
):
    """FROC score at the standard false-positive rates."""
    setup_logging(verbose)
    cfg = load_config(config, preset, seed)
    records = read_manifest(gt)
    detections = read_detections(dets)
    if data:
        volumes = load_volumes(data)
    else:
        # world coordinates are taken as voxel indices
        volumes = {sid: None for sid in sorted(set(records_by_series(records)) | set(detections))}
    results = []
    for sid, volume in volumes.items():
        frame = volume if volume is not None else Volume(np.zeros((1, 1, 1)))
        results.append(
            match_detections(detections.get(sid, []), voxel_boxes_for_series(records, sid, frame))
        )
    curve = froc(results, cfg.evaluation.froc_rates)
    write_froc_curve(out, curve)
    pairs = ", ".join(f"{r:g}:{s:.3f}" for r, s in zip(curve.rates, curve.sensitivities))
    logger.info(f"Sensitivity at FP/scan {pairs}")
    typer.echo(f"FROC score: {curve.score:.6f}")


def report_metrics(metrics: List[tuple], out: Optional[str]):
    """Echo ``name: value`` lines and optionally write them as a metric CSV."""
    for name, value in metrics:
        typer.echo(f"{name}: {value}")
    if out:
        write_csv(out, pd.DataFrame(metrics, columns=METRIC_COLUMNS))
        logger.info(f"✓ Metrics written to {out}")


@app.command("eval-cls")
@handle_errors
def eval_cls(
    preds: str = typer.Option(..., "--preds", help="Per-nodule prediction CSV"),
    manifest: Optional[str] = typer.Option(None, "--manifest", help="Report per-rater agreement"),
    out: Optional[str] = typer.Option(None, "--out", help="Metric CSV"),
    config: Optional[str] = ConfigOption,
    preset: str = PresetOption,
    seed: Optional[int] = SeedOption,
    verbose: bool = VerboseOption,
):
    """Accuracy, kappa, mean log-likelihood and borderline statistics."""
    setup_logging(verbose)
    cfg = load_config(config, preset, seed)
    evaluation = cfg.evaluation
    frame = read_csv(preds, PREDICTION_COLUMNS).dropna(subset=["label"])
    p, y = frame["probability"].to_numpy(), frame["label"].to_numpy()
    metrics = [
        ("accuracy", f"{accuracy(p, y, evaluation.cutoff):.6f}"),
        ("kappa", f"{cohen_kappa(p, y, evaluation.cutoff):.6f}"),
        ("mean_log_likelihood", f"{mean_log_likelihood(p, y, evaluation.probability_clamp):.6f}"),
    ]
    for t, pct in borderline_stats(p, evaluation.borderline_thresholds).items():
        metrics.append((f"borderline@{t:g}", f"{pct:.2f}%"))
    if manifest:
        records = read_manifest(manifest)
        for rater in range(4):
            agreement = rater_agreement(records, rater)
            if agreement.n:
                metrics.append(
                    (
                        f"rater{rater + 1}",
                        f"n={agreement.n} accuracy={agreement.accuracy:.4f} kappa={agreement.kappa:.4f}",
                    )
                )
    report_metrics(metrics, out)


@app.command("eval-patient")
@handle_errors
def eval_patient(
    diagnosis: str = typer.Option(..., "--diagnosis", help="Diagnosis CSV"),
    gt: str = typer.Option(..., "--gt", help="Annotation manifest"),
    out: Optional[str] = typer.Option(None, "--out", help="Metric CSV"),
    config: Optional[str] = ConfigOption,
    preset: str = PresetOption,
    seed: Optional[int] = SeedOption,
    verbose: bool = VerboseOption,
):
    """Patient-level accuracy and kappa; truth is cancer when any nodule's consensus is positive."""
    setup_logging(verbose)
    load_config(config, preset, seed)
    frame = read_csv(diagnosis, DIAGNOSIS_COLUMNS)
    grouped = records_by_series(read_manifest(gt))
    predicted = (frame["verdict"] == CANCER).to_numpy(dtype=np.float64)
    truth = np.asarray(
        [
            float(any(r.consensus.label == Consensus.POSITIVE for r in grouped.get(str(sid), [])))
            for sid in frame["series_id"]
        ]
    )
    report_metrics(
        [
            ("patient_accuracy", f"{accuracy(predicted, truth):.6f}"),
            ("patient_kappa", f"{cohen_kappa(predicted, truth):.6f}"),
        ],
        out,
    )


@app.command("compare-params")
@handle_errors
def compare_params(
    config: Optional[str] = ConfigOption,
    preset: str = PresetOption,
    verbose: bool = VerboseOption,
):
    """Print trainable parameter counts of the DPN26 and Res18 detectors."""
    setup_logging(verbose)
    counts = compare_parameter_counts(load_config(config, preset))
    for arch, n in counts.items():
        typer.echo(f"{arch}: {n}")
    typer.echo(f"ratio: {counts['dpn26'] / counts['res18']:.4f}")


@app.command("dump-config")
@handle_errors
def dump_config(
    out: str = typer.Option("config.yaml", "--out"),
    preset: str = PresetOption,
):
    """Write the full configuration schema as YAML."""
    load_config(None, preset).to_yaml(out)
    typer.echo(f"✓ Configuration written to {out}")


def main():
    app()
