"""Experiment configuration: one flat KEY=VALUE document, validated on load."""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, Mapping, Optional

from dotenv import dotenv_values

from spacslab.errors import ConfigError, MissingInput

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "SPACSLAB_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "spacslab_out"
MAX_SEED = 2 ** 64


@dataclass(frozen=True)
class ExperimentConfig:
    alpha: complex = 0.955
    eta: float = 0.6
    gain: float = 0.03
    n_phases: int = 12
    samples_per_phase: int = 5000
    dim: int = 8
    mean_scale: float = 1.0
    seed: int = 20060101
    output_dir: Optional[str] = None
    rep_rate: float = 8.2e7
    dark_rate: float = 0.0
    herald_frames: int = 1_000_000
    x_max: float = 8.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def check(ok: bool, name: str, message: str):
            if not ok:
                raise ConfigError(name, f"{message} (got {getattr(self, name)!r})")

        check(abs(self.alpha) < 10, "alpha", "|alpha| must be below 10")
        check(0.0 < self.eta <= 1.0, "eta", "must lie in (0, 1]")
        check(0.0 <= self.gain <= 1.0, "gain", "must lie in [0, 1]; keep it below 0.1 for the low-gain model")
        check(self.n_phases >= 3, "n_phases", "at least 3 phases are needed")
        check(self.samples_per_phase >= 1, "samples_per_phase", "must be positive")
        check(self.dim >= 1, "dim", "must be at least 1")
        check(0.0 < self.mean_scale <= 1.0, "mean_scale", "must lie in (0, 1]")
        check(0 <= self.seed < MAX_SEED, "seed", "must be an unsigned 64-bit integer")
        check(self.rep_rate > 0, "rep_rate", "must be positive")
        check(self.dark_rate >= 0, "dark_rate", "must be non-negative")
        check(self.herald_frames >= 1, "herald_frames", "must be positive")
        check(0.0 < self.x_max <= 20.0, "x_max", "must lie in (0, 20]")

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        given = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **{k: _coerce(k, v) for k, v in given.items()}) if given else self

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["alpha"] = _format_alpha(self.alpha)
        return out

    def sha256(self) -> str:
        """Hash of everything that affects results; the output location is excluded."""
        data = self.to_dict()
        data.pop("output_dir")
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode("utf-8")).hexdigest()


_KEYS = {f.name for f in fields(ExperimentConfig)}
_INTS = {"n_phases", "samples_per_phase", "dim", "seed", "herald_frames"}
_FLOATS = {"eta", "gain", "mean_scale", "rep_rate", "dark_rate", "x_max"}


def _format_alpha(alpha: complex) -> Any:
    alpha = complex(alpha)
    return alpha.real if alpha.imag == 0 else str(alpha).strip("()")


def _coerce(key: str, value: Any) -> Any:
    if key not in _KEYS:
        raise ConfigError(key, "unknown configuration key")
    try:
        if key == "alpha":
            alpha = complex(str(value).replace(" ", "")) if isinstance(value, str) else complex(value)
            return alpha
        if key in _INTS:
            if isinstance(value, str):
                return int(value.strip().replace("_", ""))
            if float(value) != int(value):
                raise ValueError("not an integer")
            return int(value)
        if key in _FLOATS:
            return float(value)
        return None if value in (None, "") else str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"cannot parse {value!r}: {exc}") from exc


def load_config(path: Optional[str] = None, **overrides: Any) -> ExperimentConfig:
    """Defaults, then the file at ``path``, then non-None ``overrides``."""
    values: Dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            raise MissingInput(path)
        raw: Mapping[str, Optional[str]] = dotenv_values(path)
        for key, value in raw.items():
            values[key.strip().lower()] = _coerce(key.strip().lower(), value)
        logger.debug("loaded %d keys from %s", len(values), path)
    for key, value in overrides.items():
        if value is not None:
            values[key] = _coerce(key, value)
    return ExperimentConfig(**values)


def write_config(config: ExperimentConfig, path: str) -> None:
    lines = [f"{k.upper()}={'' if v is None else v}" for k, v in config.to_dict().items()]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def resolve_output_dir(config: ExperimentConfig, cli_out: Optional[str] = None) -> str:
    """Output directory: --out, then $SPACSLAB_OUTPUT_DIR, then the config, then ./spacslab_out."""
    base = cli_out or os.environ.get(OUTPUT_DIR_ENV) or config.output_dir or os.path.join(os.getcwd(), DEFAULT_OUTPUT_DIR)
    base = os.path.abspath(os.path.expanduser(base))
    os.makedirs(base, exist_ok=True)
    return base
