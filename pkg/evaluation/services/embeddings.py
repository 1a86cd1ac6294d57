# evaluation/services/embeddings.py
#
# CSV export of representations (and optionally projections) for external
# dimensionality reduction.
import logging

import numpy as np
import pandas as pd

from cronos_lab.storage import atomic_write_text
from feig.types import FeatureDataset
from learning.services.inference import CronosModel, encode, project

logger = logging.getLogger(__name__)

BRANCHES = ("ratio", "rp")


def embedding_frame(model: CronosModel, dataset: FeatureDataset, branch: str = "ratio",
                    include_projections: bool = False) -> pd.DataFrame:
    if branch not in BRANCHES:
        raise ValueError(f"branch must be one of {BRANCHES}, got {branch!r}")
    network = model.stage2 if branch == "ratio" else model.stage1
    images = dataset.ratio if branch == "ratio" else dataset.rp

    v = encode(network.encoder, images).numpy()
    frame = pd.DataFrame({"id": np.arange(len(dataset)), "label": dataset.labels.astype(int)})
    columns = [frame, pd.DataFrame(v, columns=[f"v{i}" for i in range(v.shape[1])])]
    if include_projections:
        z = project(network, images).numpy()
        columns.append(pd.DataFrame(z, columns=[f"z{i}" for i in range(z.shape[1])]))
    return pd.concat(columns, axis=1)


def export_embeddings(model: CronosModel, dataset: FeatureDataset, path, branch: str = "ratio",
                      include_projections: bool = False) -> pd.DataFrame:
    frame = embedding_frame(model, dataset, branch, include_projections)
    atomic_write_text(path, frame.to_csv(index=False))
    logger.info("exported %d %s embeddings (%d columns) to %s", len(frame), branch, frame.shape[1], path)
    return frame
