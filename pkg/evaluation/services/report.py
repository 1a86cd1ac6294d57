# evaluation/services/report.py
#
# Metrics report JSON and the prediction CSV it can be recomputed from.
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from cronos_lab.storage import atomic_write_text
from evaluation.services.metrics import confusion, f1_scores, switch_stats
from evaluation.types import CASES

logger = logging.getLogger(__name__)

PROBABILITY_COLUMNS = [f"p{case}" for case in CASES]


def build_report(preds: Sequence[int], labels: Sequence[int], omega: Sequence[float],
                 db_index: Optional[float] = None) -> Dict:
    cm = confusion(preds, labels)
    scores = f1_scores(cm)
    return {
        "confusion": cm.to_list(),
        "per_class": scores.per_class(),
        "average_f1": scores.average_f1,
        "db_index": db_index,
        "switch_stats": switch_stats(omega, labels),
    }


def predictions_frame(labels: Sequence[int], preds: Sequence[int], omega: Sequence[float],
                      probabilities: np.ndarray) -> pd.DataFrame:
    frame = pd.DataFrame({
        "id": np.arange(len(labels)),
        "label": np.asarray(labels, dtype=int),
        "predicted": np.asarray(preds, dtype=int),
        "omega": np.asarray(omega, dtype=int),
    })
    for column, values in zip(PROBABILITY_COLUMNS, np.asarray(probabilities, dtype=np.float64).T):
        frame[column] = values
    return frame


def write_predictions(frame: pd.DataFrame, path) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False, float_format="%.9g"))


def report_from_predictions(path, db_index: Optional[float] = None) -> Dict:
    frame = pd.read_csv(path)
    return build_report(frame["predicted"].to_numpy(), frame["label"].to_numpy(), frame["omega"].to_numpy(), db_index)


def _spread(values: List[float]) -> Dict[str, float]:
    array = np.asarray(values, dtype=np.float64)
    std = float(array.std(ddof=1)) if array.size > 1 else 0.0
    return {"mean": float(array.mean()), "std": std}


def aggregate_trials(reports: List[Dict]) -> Dict:
    """Mean and sample standard deviation of average F1, per-class F1 and DB index over trials."""
    per_class = {
        case: _spread([r["per_class"][case]["f1"] for r in reports])
        for case in reports[0]["per_class"]
    }
    db_values = [r["db_index"] for r in reports if r.get("db_index") is not None]
    return {
        "trials": len(reports),
        "average_f1": _spread([r["average_f1"] for r in reports]),
        "per_class_f1": per_class,
        "db_index": _spread(db_values) if db_values else None,
    }


def write_report(report: Dict, path) -> Path:
    path = atomic_write_text(path, json.dumps(report, indent=2, sort_keys=True) + "\n")
    logger.info("wrote metrics report %s", path)
    return path


def read_report(path) -> Dict:
    return json.loads(Path(path).read_text())
