# experiments/services/pipeline.py
#
# The five pipeline steps behind the management commands. Every step reads and
# writes under one output directory:
#
#   run_config.json
#   manifest.csv, dumps/*.csid, scenarios/*.json          gen
#   features.crds, features_manifest.json                 featurize
#   checkpoints/stage{1,2,3}.crnm, losses.csv             train
#   metrics.json, predictions*.csv, embeddings.csv        eval
#   renders/record_<id>/*.pgm|ppm                         render
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from django.conf import settings

from cronos_lab.storage import atomic_write_text
from csi.services.dump import read_dump, write_dump
from csi.services.scenarios import preset_scenario, write_scenario_json
from csi.services.simulator import simulate_series
from evaluation.exceptions import MetricsError
from evaluation.services.embeddings import export_embeddings
from evaluation.services.metrics import davies_bouldin
from evaluation.services.report import aggregate_trials, build_report, predictions_frame, write_predictions, write_report
from experiments.services.config import RunConfig, write_config
from feig.exceptions import CalibrationError
from feig.services.colorization import couple_layers
from feig.services.featurize import calibrate_features, featurize_all
from feig.services.recurrence import df_window, recurrence_plot
from feig.services.render import binary_pixels, rp_pixels, write_pgm, write_ppm, write_rgb
from feig.types import SPLIT_TEST, SPLIT_TRAIN, FeatureCalibration, FeatureDataset
from learning.services.dataset import read_dataset, write_dataset
from learning.services.inference import (
    CronosModel,
    build_model,
    encode,
    load_model,
    load_stage,
    predict_batch,
    project,
    save_stage,
)
from learning.services.training import train_all, train_stages

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["case", "variant", "name", "frames", "train_windows", "test_windows", "dump", "scenario"]
FEATURES_FILE = "features.crds"
FEATURES_MANIFEST = "features_manifest.json"
CHECKPOINT_DIR = "checkpoints"


@dataclass
class StepResult:
    outputs: List[Path] = field(default_factory=list)
    metrics: Dict = field(default_factory=dict)
    summary: List[str] = field(default_factory=list)

    def add(self, path) -> Path:
        path = Path(path)
        self.outputs.append(path)
        return path


def configure_torch() -> None:
    threads = settings.CRONOS_TORCH_THREADS
    if threads > 0:
        torch.set_num_threads(threads)


def _prepare(cfg: RunConfig, result: StepResult) -> Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    result.add(write_config(cfg, out))
    return out


def _write_csv(frame: pd.DataFrame, path) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False))


# ── gen ──────────────────────────────────────────────────────────────────────

def generate(cfg: RunConfig) -> StepResult:
    """One labelled dump and scenario JSON per (case, variant), plus manifest.csv."""
    result = StepResult()
    out = _prepare(cfg, result)
    frames = cfg.csi.frame_count(cfg.feig.tau)

    rows = []
    for case, variant in cfg.csi.variants():
        scenario = preset_scenario(case, cfg.seed, variant, **cfg.csi.scenario_options())
        stem = f"case{case}_v{variant}"
        dump = Path("dumps") / f"{stem}.csid"
        scenario_file = Path("scenarios") / f"{stem}.json"
        (out / dump).parent.mkdir(parents=True, exist_ok=True)
        (out / scenario_file).parent.mkdir(parents=True, exist_ok=True)

        write_dump(simulate_series(scenario, frames), out / dump)
        write_scenario_json(scenario, out / scenario_file)
        result.add(out / dump)
        result.add(out / scenario_file)
        rows.append({
            "case": case, "variant": variant, "name": scenario.name, "frames": frames,
            "train_windows": cfg.csi.train_windows, "test_windows": cfg.csi.test_windows,
            "dump": dump.as_posix(), "scenario": scenario_file.as_posix(),
        })
        logger.info("generated %s (%d frames)", scenario.name, frames)

    manifest = result.add(_write_csv(pd.DataFrame(rows, columns=MANIFEST_COLUMNS), out / "manifest.csv"))
    result.summary.append(f"{len(rows)} dumps of {frames} frames, manifest {manifest}")
    return result


def read_manifest(path) -> pd.DataFrame:
    path = Path(path)
    frame = pd.read_csv(path)
    missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path} lacks manifest column(s) {missing}")
    return frame


# ── featurize ────────────────────────────────────────────────────────────────

def featurize(cfg: RunConfig, manifest_path=None) -> StepResult:
    """Calibrate on the case-1 train frames, then emit paired (RP, ratio) records for every dump."""
    result = StepResult()
    out = _prepare(cfg, result)
    manifest_path = Path(manifest_path) if manifest_path else out / "manifest.csv"
    manifest = read_manifest(manifest_path)
    root = manifest_path.parent

    series_list = [read_dump(root / dump) for dump in manifest["dump"]]
    empty = [s for s, case in zip(series_list, manifest["case"]) if int(case) == 1]
    if not empty:
        raise CalibrationError(f"{manifest_path} has no case-1 dump to calibrate from")
    train_windows = int(manifest["train_windows"].iloc[0])

    calibration = calibrate_features(empty[0], cfg.feig, train_windows)
    dataset = featurize_all(series_list, calibration, cfg.feig, train_windows,
                            workers=settings.CRONOS_FEATURIZE_WORKERS)

    features = out / FEATURES_FILE
    write_dataset(dataset, features)
    result.add(features)
    meta = {
        "dumps": [(root / dump).resolve().as_posix() for dump in manifest["dump"]],
        "cases": [int(c) for c in manifest["case"]],
        "calibration": calibration.to_dict(),
        "train_windows": train_windows,
        "records": len(dataset),
        "splits": {name: int(np.count_nonzero(dataset.splits == code))
                   for name, code in (("train", SPLIT_TRAIN), ("test", SPLIT_TEST))},
    }
    result.add(atomic_write_text(out / FEATURES_MANIFEST, json.dumps(meta, indent=2, sort_keys=True) + "\n"))
    result.metrics["records"] = len(dataset)
    result.summary.append(f"{len(dataset)} records ({meta['splits']['train']} train, "
                          f"{meta['splits']['test']} test) in {features}")
    return result


def _dataset_path(cfg: RunConfig, dataset_path) -> Path:
    return Path(dataset_path) if dataset_path else cfg.output_dir / FEATURES_FILE


def _checkpoint_dir(cfg: RunConfig, checkpoint_dir) -> Path:
    return Path(checkpoint_dir) if checkpoint_dir else cfg.output_dir / CHECKPOINT_DIR


# ── train ────────────────────────────────────────────────────────────────────

def parse_stages(value: str) -> List[int]:
    if value == "all":
        return [1, 2, 3]
    if value in ("1", "2", "3"):
        return [int(value)]
    raise ValueError(f"stage must be 1, 2, 3 or all, got {value!r}")


def _history_frame(history) -> pd.DataFrame:
    rows = [record.as_row() for record in history]
    frame = pd.DataFrame(rows)
    leading = ["epoch", "stage", "loss"]
    return frame[leading + sorted(c for c in frame.columns if c not in leading)] if rows else pd.DataFrame(columns=leading)


def train(cfg: RunConfig, stages: Sequence[int], dataset_path=None, checkpoint_dir=None,
          progress: bool = False) -> StepResult:
    """Train the requested stages on the train split; earlier stages come from checkpoints."""
    result = StepResult()
    out = _prepare(cfg, result)
    checkpoints = _checkpoint_dir(cfg, checkpoint_dir)
    dataset = read_dataset(_dataset_path(cfg, dataset_path)).split(SPLIT_TRAIN)

    model = build_model(cfg.train, dataset.ratio_channels, cfg.seed)
    loaded = set()
    for stage in range(1, min(stages)):
        load_stage(model, stage, checkpoints)
        loaded.add(stage)

    trained = train_stages(model, dataset, cfg.train, cfg.augment, stages, cfg.seed,
                           trained=loaded, progress=progress)
    checkpoints.mkdir(parents=True, exist_ok=True)
    for stage in sorted({state.stage for state in trained.stages} | set(trained.updated_stages())):
        result.add(save_stage(model, stage, checkpoints))
    for state in trained.stages:
        if not state.trainable:
            result.summary.append(f"stage {state.stage}: skipped")
            continue
        result.summary.append(f"stage {state.stage}: {state.epochs} epochs, "
                              f"{len(state.trainable)} trainable / {len(state.frozen)} frozen tensors")

    losses = result.add(_write_csv(_history_frame(trained.history), out / "losses.csv"))
    if trained.history:
        result.metrics["final_loss"] = {str(r.stage): r.loss for r in trained.history}
    result.summary.append(f"{len(trained.history)} loss rows in {losses}")
    return result


# ── eval ─────────────────────────────────────────────────────────────────────

def _db_index(model: CronosModel, test: FeatureDataset, space: str) -> Optional[float]:
    """Davies-Bouldin of the stage-2 ratio embeddings of the test split."""
    if space == "projection":
        points = project(model.stage2, test.ratio).numpy()
    else:
        points = encode(model.stage2.encoder, test.ratio).numpy()
    try:
        return davies_bouldin(points.astype(np.float64), test.labels)
    except MetricsError as exc:
        logger.warning("Davies-Bouldin index skipped: %s", exc)
        return None


def evaluate_model(model: CronosModel, test: FeatureDataset, db_space: str = "projection"):
    """(report, predictions frame) for the test records."""
    preds, probs = predict_batch(model, test.rp, test.ratio)
    omega = probs.omega.numpy()
    report = build_report(preds, test.labels, omega, _db_index(model, test, db_space))
    frame = predictions_frame(test.labels, preds, omega, probs.y_final.numpy())
    return report, frame


def evaluate(cfg: RunConfig, dataset_path=None, checkpoint_dir=None, progress: bool = False) -> StepResult:
    """
    One trial scores the checkpoints on the test split. More trials retrain all
    stages with seeds seed, seed + 1, ... and report each trial plus the mean
    and standard deviation.
    """
    result = StepResult()
    out = _prepare(cfg, result)
    full = read_dataset(_dataset_path(cfg, dataset_path))
    test = full.split(SPLIT_TEST)
    if len(test) == 0:
        raise MetricsError("dataset has no test records")

    if cfg.eval.trials == 1:
        model = load_model(cfg.train, full.ratio_channels, _checkpoint_dir(cfg, checkpoint_dir))
        report, frame = evaluate_model(model, test, cfg.eval.db_space)
        result.add(write_predictions(frame, out / "predictions.csv"))
        summary = report
    else:
        train_split = full.split(SPLIT_TRAIN)
        reports = []
        for k in range(cfg.eval.trials):
            seed = cfg.seed + k
            logger.info("trial %d/%d (seed %d)", k + 1, cfg.eval.trials, seed)
            model = train_all(train_split, cfg.train, cfg.augment, seed, progress).model
            trial_report, frame = evaluate_model(model, test, cfg.eval.db_space)
            reports.append({"seed": seed, **trial_report})
            result.add(write_predictions(frame, out / f"predictions_trial{k}.csv"))
        summary = {"trials": reports, "aggregate": aggregate_trials(reports)}
        report = reports[0]

    result.add(write_report(summary, out / "metrics.json"))
    if cfg.eval.export_embeddings:
        path = out / "embeddings.csv"
        export_embeddings(model, test, path, cfg.eval.embedding_branch, cfg.eval.include_projections)
        result.add(path)

    if cfg.eval.trials == 1:
        result.metrics = {"average_f1": report["average_f1"], "db_index": report["db_index"]}
        result.summary.append(f"average F1 {report['average_f1']:.4f} on {len(test)} test records")
    else:
        aggregate = summary["aggregate"]
        result.metrics = {"average_f1": aggregate["average_f1"], "db_index": aggregate["db_index"]}
        result.summary.append(f"average F1 {aggregate['average_f1']['mean']:.4f} "
                              f"± {aggregate['average_f1']['std']:.4f} over {cfg.eval.trials} trials")
    return result


# ── render ───────────────────────────────────────────────────────────────────

def select_records(dataset: FeatureDataset, per_case: int) -> List[int]:
    """The first `per_case` test records of each case, train records when a case has no test records."""
    chosen: List[int] = []
    for case in np.unique(dataset.labels):
        for split in (SPLIT_TEST, SPLIT_TRAIN):
            index = np.flatnonzero((dataset.labels == case) & (dataset.splits == split))
            if index.size:
                chosen.extend(int(i) for i in index[:per_case])
                break
    return chosen


def read_features_manifest(path) -> Dict:
    return json.loads(Path(path).read_text())


def render(cfg: RunConfig, dataset_path=None, records: Optional[Iterable[int]] = None) -> StepResult:
    """
    Per record: the τ x τ recurrence plot (PGM), the binary and colourised
    ratio images of the first couple (PGM, PPM) and the Q merged grayscale
    channels (PGM), or the Q unmerged colour images (PPM) when merging is off.
    """
    result = StepResult()
    out = _prepare(cfg, result)
    dataset_path = _dataset_path(cfg, dataset_path)
    dataset = read_dataset(dataset_path)
    meta = read_features_manifest(dataset_path.parent / FEATURES_MANIFEST)
    calibration = FeatureCalibration.from_dict(meta["calibration"])

    chosen = list(records) if records is not None else select_records(dataset, cfg.eval.render_per_case)
    bad = [r for r in chosen if not 0 <= r < len(dataset)]
    if bad:
        raise ValueError(f"record ids {bad} outside 0..{len(dataset) - 1}")

    height, width = dataset.image_size
    series_cache: Dict[int, object] = {}
    for record in chosen:
        folder = out / "renders" / f"record_{record:06d}"
        source = int(dataset.sources[record])
        if source not in series_cache:
            series_cache[source] = read_dump(meta["dumps"][source])
        series = series_cache[source]
        t = int(dataset.timestamps[record]) - series.start
        frame = series.frame(t)

        window = df_window(series, cfg.feig.tx_antenna, cfg.feig.rx_pair, t, cfg.feig.tau)
        plot = recurrence_plot(window, calibration.threshold.gamma)
        result.add(write_pgm(rp_pixels(plot), folder / "rp.pgm"))
        binary, rgb, _ = couple_layers(frame, calibration.couples[0], calibration.colors[0], width, height, cfg.feig.s)
        result.add(write_pgm(binary_pixels(binary), folder / "ratio_binary.pgm"))
        result.add(write_rgb(rgb, folder / "ratio_color.ppm"))
        levels = np.floor(dataset.ratio[record].astype(np.float64) * 255 + 0.5)
        if cfg.feig.merge_channels:
            for q, channel in enumerate(levels):
                result.add(write_pgm(channel, folder / f"ratio_gray_q{q + 1}.pgm"))
        else:
            for q, colors in enumerate(levels.reshape(-1, 3, height, width)):
                result.add(write_ppm(colors, folder / f"ratio_color_q{q + 1}.ppm"))

    result.metrics["records"] = len(chosen)
    result.summary.append(f"rendered {len(chosen)} records into {out / 'renders'}")
    return result
