import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from errors import ValidationError
from focalsets import SCHEMES
from losses import LossConfig
from training import BATCH_MAX_OBJECTS, OptimizerConfig

log = logging.getLogger(__name__)

DATA_MODES = ("attribute", "relational")
PAIR_MODE_CHOICES = ("auto", "dense", "sampled", "minibatch")
OBJECTS_PER_BLOCK = 100


def load_config(config_path: str = 'config.json') -> Dict[str, Any]:
    """
    Loads the configuration from a JSON file.

    Args:
        config_path: Path to the config.json file.

    Returns:
        A dictionary containing the loaded configuration.
    """
    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            config = json.load(f)
            log.info(f"Loaded configuration from {config_path}")
            return config
    except FileNotFoundError:
        log.error(f"Configuration file not found at {config_path}.")
        raise
    except json.JSONDecodeError as e:
        log.error(f"Could not parse {config_path}: {e}")
        raise ValidationError(f"Invalid JSON in {config_path}: {e}") from e


def get_config_value(
    config: Dict[str, Any],
    key_path: str,
    default: Optional[Any] = None
) -> Any:
    """
    Safely retrieves a nested value from the config dictionary.

    Example:
        get_config_value(config, "training.restarts", 5)

    Args:
        config: The configuration dictionary.
        key_path: A dot-separated path to the key.
        default: The default value to return if the key is not found.

    Returns:
        The configuration value or the default.
    """
    value = config
    try:
        for key in key_path.split('.'):
            value = value[key]
        return value
    except (KeyError, TypeError):
        log.warning(f"Config key '{key_path}' not found. Using default: {default}")
        return default


# Config section of every RunConfig field
SECTIONS = {
    "data": ("attributes", "dissimilarities", "constraints", "labels", "truth", "mode"),
    "model": ("clusters", "scheme", "hidden_units"),
    "dissimilarity": ("d0quantile", "pair_mode", "p", "s", "pca_p", "batch_threshold"),
    "svm": ("svm_enabled", "svm_nu", "svm_sigma"),
    "training": ("lam", "xi", "nu", "restarts", "max_epochs", "seed", "threads",
                 "learning_rate", "early_stopping", "patience"),
    "output": ("out",),
}
# JSON key when it differs from the field name
JSON_KEYS = {"svm_enabled": "enabled", "svm_nu": "nu", "svm_sigma": "sigma", "out": "directory"}


@dataclass
class RunConfig:
    # data
    attributes: Optional[str] = None
    dissimilarities: Optional[str] = None
    constraints: Optional[str] = None
    labels: Optional[str] = None
    truth: Optional[str] = None
    mode: str = "attribute"
    # model
    clusters: int = 3
    scheme: str = "auto"
    hidden_units: Optional[List[int]] = None
    # dissimilarity
    d0quantile: float = 0.9
    pair_mode: str = "auto"
    p: Optional[int] = None
    s: Optional[int] = None
    pca_p: Optional[int] = None
    batch_threshold: int = BATCH_MAX_OBJECTS
    # svm
    svm_enabled: bool = False
    svm_nu: float = 0.2
    svm_sigma: Optional[float] = None
    # training
    lam: float = 0.0
    xi: float = 0.0
    nu: float = 0.0
    restarts: int = 5
    max_epochs: int = 500
    seed: int = 0
    threads: Optional[int] = None
    learning_rate: float = 1e-3
    early_stopping: bool = False
    patience: int = 10
    # output
    out: str = "./evclus_output"

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "RunConfig":
        defaults = cls()
        values = {}
        for section, names in SECTIONS.items():
            block = get_config_value(config, section, {}) or {}
            for name in names:
                values[name] = block.get(JSON_KEYS.get(name, name), getattr(defaults, name))
        if values["hidden_units"] is not None:
            units = values["hidden_units"]
            values["hidden_units"] = [int(u) for u in (units if isinstance(units, list) else [units])]
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        flat = asdict(self)
        return {
            section: {JSON_KEYS.get(name, name): flat[name] for name in names}
            for section, names in SECTIONS.items()
        }

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)

    def override(self, **flags) -> "RunConfig":
        """Copy with every non-None flag applied."""
        known = {f.name for f in fields(self)}
        unknown = set(flags) - known
        if unknown:
            raise ValidationError(f"Unknown config fields: {sorted(unknown)}")
        values = asdict(self)
        values.update({k: v for k, v in flags.items() if v is not None})
        return RunConfig(**values)

    def validate(self) -> None:
        if self.mode not in DATA_MODES:
            raise ValidationError(f"data.mode must be one of {DATA_MODES}, got {self.mode!r}")
        if self.mode == "attribute" and not self.attributes:
            raise ValidationError("Attribute mode requires data.attributes")
        if self.mode == "relational":
            if not self.dissimilarities:
                raise ValidationError("Relational mode requires data.dissimilarities")
            if not self.pca_p or self.pca_p < 1:
                raise ValidationError("Relational mode requires dissimilarity.pca_p >= 1")
        if self.clusters < 1:
            raise ValidationError(f"model.clusters must be >= 1, got {self.clusters}")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"model.scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.hidden_units is not None and (not self.hidden_units or min(self.hidden_units) < 1):
            raise ValidationError("model.hidden_units must list positive layer widths")
        if not 0.0 < self.d0quantile <= 1.0:
            raise ValidationError(f"dissimilarity.d0quantile must lie in (0, 1], got {self.d0quantile}")
        if self.pair_mode not in PAIR_MODE_CHOICES:
            raise ValidationError(f"dissimilarity.pair_mode must be one of {PAIR_MODE_CHOICES}")
        if self.pair_mode == "sampled" and not self.p:
            raise ValidationError("Sampled pair mode requires dissimilarity.p")
        if self.pair_mode == "minibatch" and not self.s:
            raise ValidationError("Minibatch pair mode requires dissimilarity.s")
        if self.lam < 0 or self.xi < 0 or not 0.0 <= self.nu <= 1.0:
            raise ValidationError("Penalty weights need lam >= 0, xi >= 0 and 0 <= nu <= 1")
        if not 0.0 < self.svm_nu < 1.0:
            raise ValidationError(f"svm.nu must lie in (0, 1), got {self.svm_nu}")
        if self.svm_sigma is not None and self.svm_sigma <= 0:
            raise ValidationError(f"svm.sigma must be positive, got {self.svm_sigma}")
        if self.restarts < 1 or self.max_epochs < 0 or (self.threads is not None and self.threads < 1):
            raise ValidationError("training needs restarts >= 1, max_epochs >= 0 and threads >= 1")

    def resolve_pair_mode(self, n: int) -> Tuple[str, Optional[int], Optional[int]]:
        """(mode, p, s) with 'auto' resolved for n objects."""
        if self.pair_mode == "auto":
            if n <= self.batch_threshold:
                return "dense", None, None
            return "minibatch", None, max(2, int(round(n / OBJECTS_PER_BLOCK)))
        if self.pair_mode == "sampled":
            return "sampled", self.p, None
        if self.pair_mode == "minibatch":
            return "minibatch", None, self.s
        return "dense", None, None

    def loss_config(self, n: int) -> LossConfig:
        mode, p, s = self.resolve_pair_mode(n)
        return LossConfig(lam=self.lam, xi=self.xi, nu=self.nu, mode=mode, p=p, s=s)

    def worker_count(self) -> int:
        """Configured restart threads; unset means one per available core."""
        if self.threads is not None:
            return self.threads
        return os.cpu_count() or 1

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            max_epochs=self.max_epochs, restarts=self.restarts, seed=self.seed,
            threads=self.worker_count(), learning_rate=self.learning_rate,
            early_stopping=self.early_stopping, patience=self.patience,
        )
