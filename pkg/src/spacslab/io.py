"""Artifact files: JSON documents, CSV tables with provenance headers, binary records."""
from __future__ import annotations

import json
import logging
import os
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd
import scipy

from spacslab import __version__
from spacslab.errors import MissingInput

logger = logging.getLogger(__name__)

HERALDS_JSON = "heralds.json"
STATE_JSON = "state.json"
TRIGGERS_BIN = "triggers.bin"
SAMPLES_CSV = "samples.csv"
SAMPLES_BIN = "samples.bin"
CALIBRATION_JSON = "calibration.json"
RECONSTRUCTION_JSON = "reconstruction.json"
PHOTON_NUMBERS_CSV = "photon_numbers.csv"
MARGINALS_CSV = "marginals.csv"
WIGNER_RECONSTRUCTED = "wigner_reconstructed"
WIGNER_THEORY = "wigner_theory"
METRICS_JSON = "metrics.json"
SUMMARY_TXT = "summary.txt"
PURITY_TABLE_CSV = "purity_table.csv"
SQUEEZE_SCAN_CSV = "squeeze_scan.csv"

# which subcommand writes each input a later stage needs
PRODUCED_BY = {
    HERALDS_JSON: "prepare",
    SAMPLES_CSV: "sample",
    SAMPLES_BIN: "sample",
    RECONSTRUCTION_JSON: "reconstruct",
    CALIBRATION_JSON: "reconstruct",
}


def provenance(config_sha256: str, seed: int, stage: str) -> Dict[str, Any]:
    return {
        "stage": stage,
        "config_sha256": config_sha256,
        "seed": int(seed),
        "spacslab": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


def to_json(data: Dict[str, Any]) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False)


def _require(path: str) -> None:
    if not os.path.exists(path):
        raise MissingInput(path, PRODUCED_BY.get(os.path.basename(path)))


def write_json(path: str, data: Dict[str, Any], meta: Optional[Dict[str, Any]] = None) -> str:
    doc = dict(data)
    if meta is not None:
        doc["provenance"] = meta
    with open(path, "w") as f:
        f.write(to_json(doc) + "\n")
    logger.debug("wrote %s", path)
    return path


def read_json(path: str) -> Dict[str, Any]:
    _require(path)
    with open(path, "r") as f:
        return json.load(f)


def write_csv(path: str, frame: pd.DataFrame, meta: Optional[Dict[str, Any]] = None) -> str:
    """CSV preceded by '# key: value' provenance lines."""
    with open(path, "w", newline="") as f:
        for key, value in (meta or {}).items():
            f.write(f"# {key}: {value}\n")
        frame.to_csv(f, index=False)
    logger.debug("wrote %s (%d rows)", path, len(frame))
    return path


def read_csv(path: str) -> pd.DataFrame:
    _require(path)
    return pd.read_csv(path, comment="#")


def read_csv_provenance(path: str) -> Dict[str, str]:
    _require(path)
    meta: Dict[str, str] = {}
    with open(path, "r") as f:
        for line in f:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition(":")
            meta[key.strip()] = value.strip()
    return meta


def write_bytes(path: str, payload: bytes) -> str:
    with open(path, "wb") as f:
        f.write(payload)
    return path


def read_records(path: str, dtype: np.dtype) -> np.ndarray:
    _require(path)
    return np.fromfile(path, dtype=dtype)
