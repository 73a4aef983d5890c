"""
TVNet - Configuration Settings
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from tvnet.core.errors import ConfigError
from tvnet.core.optim import StepSchedule

logger = logging.getLogger(__name__)

TVNET_VERSION = "0.3.0"

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Dataset presets (implementation details of the two public benchmarks)
DATASET_PRESETS = {
    "activitynet": {
        "T": 100,
        "window_lengths": [15, 5],
        "xi": 0.3,
        "tau": 100,
        "top_k": 200,
        "top_c": 1,
        "vem_rates": [1e-4, 1e-5],
        "vem_batch_size": 512,
        "thresholds": "activitynet",
    },
    "thumos": {
        "T": 750,
        "window_lengths": [10, 5],
        "xi": 0.3,
        "tau": 70,
        "top_k": 400,
        "top_c": 2,
        "vem_rates": [1e-3, 1e-4],
        "vem_batch_size": 256,
        "thresholds": "thumos",
    },
    "synthetic": {
        "T": 100,
        "window_lengths": [15, 5],
        "xi": 0.3,
        "tau": 100,
        "top_k": 200,
        "top_c": 1,
        "vem_rates": [1e-3, 1e-4],
        "vem_batch_size": 256,
        "thresholds": "activitynet",
    },
}

# Average mAP is always taken over these
AVERAGE_MAP_THRESHOLDS = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95]

IOU_THRESHOLD_PRESETS = {
    "activitynet": [0.5, 0.75, 0.95],
    "thumos": [0.3, 0.4, 0.5, 0.6, 0.7],
    "average": AVERAGE_MAP_THRESHOLDS,
}

ENCODER_KINDS = {
    "lstm": "Two same-length convolutions, an LSTM and a per-frame linear head",
    "srf": "Receptive field of one frame: per-frame MLP, no convolution or recurrence",
    "sll": "Single linear layer over the flattened window",
}

# Proposal confidence sources: B = naive boundary scores, G = candidate generation
# from voting scores, V = voting scores in the confidence
FUSION_MODES = {
    "B": {"candidates": "boundary", "use_voting": False, "use_boundary": True},
    "B+G": {"candidates": "voting", "use_voting": False, "use_boundary": True},
    "G+V": {"candidates": "voting", "use_voting": True, "use_boundary": False},
    "B+G+V": {"candidates": "voting", "use_voting": True, "use_boundary": True},
}

# Ablation sweeps: which config field each row changes and which stages must be retrained
ABLATION_SWEEPS = {
    "tem-parts": {
        "field": "tem_parts",
        "values": ["none", "actionness", "boundary", "both"],
        "retrain": ["vem"],
    },
    "alpha": {
        "field": "proposals.alpha",
        "values": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
        "retrain": [],
    },
    "J": {
        "field": "vem.window_lengths",
        "values": [[5], [10], [15], [20], [10, 5], [15, 5]],
        "retrain": ["vem"],
    },
    "tau": {
        "field": "proposals.tau",
        "values": [10, 20, 30, 40, 50, 60, 70, 80, 90, 100],
        "retrain": [],
    },
    "xi": {
        "field": "proposals.xi",
        "values": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
        "retrain": [],
    },
    "encoder": {
        "field": "vem.encoder",
        "values": ["lstm", "srf", "sll"],
        "retrain": ["vem"],
    },
    "fusion": {
        "field": "proposals.fusion",
        "values": ["B", "B+G", "G+V", "B+G+V"],
        "retrain": [],
    },
}

TRAINING_STAGES = ["tem", "pem", "vem"]

DATA_SPLITS = {
    "train": "training",
    "test": "testing",
    "training": "training",
    "testing": "testing",
    "validation": "validation",
}


class StageSchedule(BaseModel):
    """Epochs, batch size and piecewise-constant learning rate of one training stage"""

    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(10, ge=0)
    batch_size: int = Field(256, ge=1)
    boundaries: List[int] = Field(default_factory=lambda: [10])
    rates: List[float] = Field(default_factory=lambda: [1e-3, 1e-4])

    @model_validator(mode="after")
    def check_rates(self) -> "StageSchedule":
        if len(self.rates) != len(self.boundaries) + 1:
            raise ValueError(f"{len(self.boundaries)} boundaries need {len(self.boundaries) + 1} rates")
        if any(rate <= 0 for rate in self.rates):
            raise ValueError("Learning rates must be positive")
        return self

    def learning_rate(self, epoch: int) -> float:
        """Rate of a 0-based epoch"""
        return StepSchedule(self.boundaries, self.rates)(epoch)


class SynthConfig(BaseModel):
    """Synthetic untrimmed-sequence generator settings"""

    model_config = ConfigDict(extra="forbid")

    num_train: int = Field(200, ge=0)
    num_test: int = Field(50, ge=0)
    T: int = Field(100, ge=2)
    C: int = Field(8, ge=2)
    num_classes: int = Field(4, ge=1)
    actions_per_video: Tuple[int, int] = (1, 2)
    duration_range: Tuple[int, int] = (8, 40)
    amplitude: float = Field(1.0, gt=0)
    snr: float = Field(4.0, gt=0)
    transient: float = Field(1.0, ge=0)
    edge_margin: int = Field(16, ge=0)
    min_gap: int = Field(26, ge=0)
    seed: int = 42

    @model_validator(mode="after")
    def check_layout(self) -> "SynthConfig":
        if self.C < 2 * self.num_classes:
            raise ValueError(f"C={self.C} is too small for {self.num_classes} classes (two channels each)")
        low, high = self.actions_per_video
        if low < 0 or high < low:
            raise ValueError(f"Invalid actions_per_video range {self.actions_per_video}")
        shortest, longest = self.duration_range
        if shortest < 2 or longest < shortest:
            raise ValueError(f"Invalid duration_range {self.duration_range}")
        if longest + 2 * self.edge_margin > self.T - 1:
            raise ValueError(f"Longest action ({longest}) does not fit in T={self.T} with margin {self.edge_margin}")
        return self

    def separates_boundaries(self, window_length: int) -> bool:
        """
        Whether exact window targets give every boundary its own vote peak

        Boundaries must sit window_length + 1 frames inside the sequence and
        boundaries of the same kind 2 * window_length + 3 frames apart.
        """
        same_kind_gap = self.duration_range[0] + self.min_gap
        return self.edge_margin >= window_length + 1 and same_kind_gap >= 2 * window_length + 3


class TemConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    hidden_channels: int = Field(128, ge=1)
    kernel_size: int = Field(3, ge=1)
    boundary_dilation: float = Field(0.05, ge=0)
    pos_weight_cap: float = Field(100.0, gt=0)
    use_actionness: bool = True
    use_boundary: bool = True
    schedule: StageSchedule = Field(
        default_factory=lambda: StageSchedule(epochs=20, batch_size=16, boundaries=[15], rates=[1e-3, 1e-4])
    )

    @field_validator("kernel_size")
    @classmethod
    def odd_kernel(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("TEM kernel_size must be odd for same-length output")
        return value


class VemConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    encoder: Literal["lstm", "srf", "sll"] = "lstm"
    window_lengths: List[int] = Field(default_factory=lambda: [15, 5])
    stride: int = Field(1, ge=1)
    conv_channels: int = Field(64, ge=1)
    kernel_size: int = Field(3, ge=1)
    hidden_size: int = Field(128, ge=1)
    scale_fusion: Literal["minmax", "sum"] = "minmax"
    self_vote: bool = False
    empty_video_weight: float = Field(0.1, gt=0, le=1)
    inference_batch: int = Field(1024, ge=1)
    schedule: StageSchedule = Field(
        default_factory=lambda: StageSchedule(epochs=15, batch_size=256, boundaries=[10], rates=[1e-3, 1e-4])
    )

    @field_validator("window_lengths")
    @classmethod
    def check_windows(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("At least one window length is required")
        if any(length < 2 for length in value):
            raise ValueError(f"Window lengths must be >= 2, got {value}")
        return value


class PemConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    hidden_size: int = Field(64, ge=1)
    num_interior: int = Field(16, ge=2)
    num_flank: int = Field(8, ge=2)
    input_source: Literal["actionness", "features"] = "actionness"
    jitter: float = Field(0.1, ge=0, le=0.5)
    jitter_copies: int = Field(10, ge=0)
    max_proposals_per_video: int = Field(500, ge=1)
    min_training_proposals: int = Field(10, ge=1)
    schedule: StageSchedule = Field(
        default_factory=lambda: StageSchedule(epochs=20, batch_size=128, boundaries=[15], rates=[1e-3, 1e-4])
    )


class ProposalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    xi: float = Field(0.3, ge=0, lt=1)
    tau: int = Field(100, ge=1)
    alpha: float = Field(0.6, ge=0)
    sigma: float = Field(0.5, gt=0)
    top_k: int = Field(200, ge=1)
    top_c: int = Field(1, ge=1)
    fusion: Literal["B", "B+G", "G+V", "B+G+V"] = "B+G+V"


class PipelineConfig(BaseModel):
    """
    Full pipeline configuration

    Every field has a default; a JSON file only needs the fields it changes.
    """

    model_config = ConfigDict(extra="forbid")

    name: str = "synthetic"
    data_dir: str = "data"
    T: int = Field(100, ge=2)
    C: int = Field(8, ge=1)
    rescale: bool = True
    dtype: Literal["float64", "float32"] = "float64"
    seed: int = 42
    thresholds: List[float] = Field(default_factory=lambda: list(IOU_THRESHOLD_PRESETS["activitynet"]))
    synth: SynthConfig = Field(default_factory=SynthConfig)
    tem: TemConfig = Field(default_factory=TemConfig)
    vem: VemConfig = Field(default_factory=VemConfig)
    pem: PemConfig = Field(default_factory=PemConfig)
    proposals: ProposalConfig = Field(default_factory=ProposalConfig)

    @field_validator("thresholds")
    @classmethod
    def check_thresholds(cls, value: List[float]) -> List[float]:
        if not value or any(not 0 < threshold <= 1 for threshold in value):
            raise ValueError(f"IoU thresholds must lie in (0, 1], got {value}")
        return value

    @model_validator(mode="after")
    def check_consistency(self) -> "PipelineConfig":
        too_long = [length for length in self.vem.window_lengths if length > self.T]
        if too_long:
            raise ValueError(f"Window lengths {too_long} exceed T={self.T}")
        return self

    def check_synthetic_durations(self) -> None:
        """
        Synthetic actions must be proposable under the maximum duration tau

        A layout too tight for the longest window to separate boundaries is
        only logged.

        Raises:
            ConfigError: If the longest synthetic action exceeds tau
        """
        if self.synth.duration_range[1] > self.proposals.tau:
            raise ConfigError(
                f"Synthetic actions up to {self.synth.duration_range[1]} frames exceed tau={self.proposals.tau}"
            )
        longest_window = max(self.vem.window_lengths)
        if not self.synth.separates_boundaries(longest_window):
            logger.warning(
                f"Synthetic margin {self.synth.edge_margin} and gap {self.synth.min_gap} are too tight for "
                f"J={longest_window}; some boundaries will not get their own vote peak"
            )

    @property
    def tem_parts(self) -> str:
        if self.tem.use_actionness and self.tem.use_boundary:
            return "both"
        if self.tem.use_actionness:
            return "actionness"
        if self.tem.use_boundary:
            return "boundary"
        return "none"

    @classmethod
    def from_preset(cls, name: str, **overrides: Any) -> "PipelineConfig":
        """
        Build a configuration from a dataset preset

        Args:
            name: One of DATASET_PRESETS
            overrides: Top-level fields to replace

        Returns:
            PipelineConfig: The validated configuration
        """
        if name not in DATASET_PRESETS:
            raise ConfigError(f"Unknown preset '{name}'. Options: {', '.join(DATASET_PRESETS)}")
        preset = DATASET_PRESETS[name]
        vem_schedule = StageSchedule(
            epochs=15, batch_size=preset["vem_batch_size"], boundaries=[10], rates=list(preset["vem_rates"])
        )
        data = {
            "name": name,
            "T": preset["T"],
            "thresholds": list(IOU_THRESHOLD_PRESETS[preset["thresholds"]]),
            "vem": {"window_lengths": list(preset["window_lengths"]), "schedule": vem_schedule.model_dump()},
            "proposals": {
                "xi": preset["xi"],
                "tau": preset["tau"],
                "top_k": preset["top_k"],
                "top_c": preset["top_c"],
            },
        }
        if name != "synthetic":
            # Two-stream features
            data["C"] = 400
            data["synth"] = {"T": preset["T"], "C": 400}
        data.update(overrides)
        return cls.model_validate(data)

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None, preset: str = "synthetic") -> "PipelineConfig":
        """
        Load a JSON config file on top of a preset

        Raises:
            ConfigError: If the file is unreadable or fails validation
        """
        if path is None:
            return cls.from_preset(preset)
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
        base = cls.from_preset(raw.pop("preset", preset)).model_dump()
        try:
            return cls.model_validate(_deep_merge(base, raw))
        except ValidationError as e:
            raise ConfigError(f"{path}: {e}") from e

    def with_value(self, dotted_field: str, value: Any) -> "PipelineConfig":
        """Copy of this config with one (possibly nested) field replaced, re-validated"""
        data = self.model_dump()
        if dotted_field == "tem_parts":
            data["tem"]["use_actionness"] = value in ("actionness", "both")
            data["tem"]["use_boundary"] = value in ("boundary", "both")
        else:
            target = data
            parts = dotted_field.split(".")
            for part in parts[:-1]:
                if not isinstance(target.get(part), dict):
                    raise ConfigError(f"Unknown config field '{dotted_field}'")
                target = target[part]
            if parts[-1] not in target:
                raise ConfigError(f"Unknown config field '{dotted_field}'")
            target[parts[-1]] = value
        try:
            return PipelineConfig.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"{dotted_field}={value!r}: {e}") from e

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.model_dump(mode="json"), indent=2))
        return path


def _deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def resolve_thresholds(thresholds: Union[str, List[float], None], default: List[float]) -> List[float]:
    """Threshold list from a preset name, a comma-separated string or a list"""
    if thresholds is None or thresholds == "":
        return list(default)
    if isinstance(thresholds, list):
        return [float(value) for value in thresholds]
    if thresholds in IOU_THRESHOLD_PRESETS:
        return list(IOU_THRESHOLD_PRESETS[thresholds])
    try:
        return [float(part) for part in thresholds.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(
            f"Invalid thresholds '{thresholds}'. Use a comma list or one of: {', '.join(IOU_THRESHOLD_PRESETS)}"
        )


class TvnetEnvSettings(BaseSettings):
    """Environment overrides (TVNET_LOG, TVNET_JOBS), optionally read from .env"""

    model_config = SettingsConfigDict(env_prefix="TVNET_", env_file=".env", extra="ignore")

    log: str = "INFO"
    jobs: int = Field(1, ge=1)


_logging_configured = False


def configure_logging(level: str = "INFO") -> None:
    """Apply the package log format once; later calls only change the level"""
    global _logging_configured
    numeric = logging.getLevelName(level.upper())
    if not isinstance(numeric, int):
        raise ConfigError(f"Unknown log level '{level}'")
    if not _logging_configured:
        logging.basicConfig(level=numeric, format=LOG_FORMAT)
        _logging_configured = True
    logging.getLogger().setLevel(numeric)
