"""Run configuration: defaults, flat key=value config files, and manifests.

Precedence is CLI flag > config file > built-in default. Unknown keys are
rejected so a typo never silently falls back to a default.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .adaptation import TrainConfig
from .analogy import CalibrationParams
from .protocol import PRESETS, ProtocolConfig


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    """Flat view of every knob a protocol run exposes."""

    data: str = ""
    plan: str = ""
    out: str = "run"
    checkpoint: str = ""

    mop_training: bool = True
    calibrated_mop: bool = True
    soft_voting: bool = True

    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.01
    sgd_momentum: float = 0.9
    alpha: float | None = None
    lam: float | None = None
    k: int = 4
    tau: float = 0.1
    tau_a: float = 0.1
    ema_momentum: float = 0.99
    bottleneck: int | None = None
    proto_init_noise: float = 0.05
    prune_threshold: float = 0.0

    tau_cal: float = 16.0
    beta: float = 0.9
    eta: float = 1.0
    gamma: float = 500.0

    proj_dim: int = 2048
    ridge: float = 1.0
    vote_weight: float = 1.0

    seed: int = 0

    def validate(self) -> "RunConfig":
        # Nested configs own the numeric range checks.
        self.train_config()
        self.calibration_params()
        if self.proj_dim < 1:
            raise ConfigError(f"proj_dim must be >= 1, got {self.proj_dim}")
        if self.ridge < 0:
            raise ConfigError(f"ridge must be >= 0, got {self.ridge}")
        if self.vote_weight < 0:
            raise ConfigError(f"vote_weight must be >= 0, got {self.vote_weight}")
        return self

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(
                epochs=self.epochs,
                batch_size=self.batch_size,
                lr=self.lr,
                sgd_momentum=self.sgd_momentum,
                alpha=self.alpha,
                lam=self.lam,
                tau=self.tau,
                tau_a=self.tau_a,
                prototypes_per_class=self.k,
                ema_momentum=self.ema_momentum,
                bottleneck=self.bottleneck,
                proto_init_noise=self.proto_init_noise,
                prune_threshold=self.prune_threshold,
                seed=self.seed,
            )
        except Exception as exc:
            raise ConfigError(str(exc)) from exc

    def calibration_params(self) -> CalibrationParams:
        try:
            return CalibrationParams(
                beta=self.beta, eta=self.eta, gamma=self.gamma, tau_cal=self.tau_cal
            )
        except Exception as exc:
            raise ConfigError(str(exc)) from exc

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig(
            train=self.train_config(),
            calibration=self.calibration_params(),
            mop_training=self.mop_training,
            calibrated_mop=self.calibrated_mop,
            soft_voting=self.soft_voting,
            vote_weight=self.vote_weight,
            projection_dim=self.proj_dim,
            ridge=self.ridge,
            seed=self.seed,
        )

    def to_flat_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        payload = {k: v for k, v in self.to_flat_dict().items() if k != "out"}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_BOOL_KEYS = {"mop_training", "calibrated_mop", "soft_voting"}
_OPTIONAL_INT_KEYS = {"bottleneck"}
_OPTIONAL_FLOAT_KEYS = {"alpha", "lam"}
_INT_KEYS = {"epochs", "batch_size", "k", "proj_dim", "seed"}
_STR_KEYS = {"data", "plan", "out", "checkpoint"}


def parse_value(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key: {key!r}")
    raw = raw.strip()
    if key in _STR_KEYS:
        return raw
    if key in _BOOL_KEYS:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key} expects a boolean, got {raw!r}")
    if key in _OPTIONAL_INT_KEYS or key in _OPTIONAL_FLOAT_KEYS:
        if raw.lower() in ("none", ""):
            return None
        return int(raw) if key in _OPTIONAL_INT_KEYS else float(raw)
    try:
        if key in _INT_KEYS:
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` file ('#' comments, blank lines allowed)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such config file: {path}")
    values: dict = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        values[key] = parse_value(key, raw)
    return values


def build_run_config(
    file_path=None, preset: str | None = None, overrides: dict | None = None
) -> RunConfig:
    """Merge defaults, config file, preset toggles, and explicit overrides."""
    merged = RunConfig().to_flat_dict()
    if file_path is not None:
        merged.update(read_config_file(file_path))
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}, expected one of {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key: {key!r}")
        merged[key] = value
    return RunConfig(**merged).validate()
