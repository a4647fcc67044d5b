"""
Configuration Management
Handles run settings from defaults, environment, config files and CLI flags.
"""

import logging
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from dotenv import load_dotenv

from .model import ChainConfig, PriorSpec, Variant

logger = logging.getLogger(__name__)

# Load environment variables from .env file
load_dotenv()

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass
class RunSettings:
    """Resolved settings of one run."""
    seed: Optional[int] = None
    chains: int = 1
    iterations: int = 302_000
    burn_in: int = 2_000
    thin: int = 15
    variant: str = "dp"
    partition_file: Optional[str] = None
    a: float = -0.5
    b: float = 0.0
    tau2: Union[str, float] = "n"
    bb_c: float = 1.0
    bb_d: float = 1.0
    standardize: bool = False
    out_dir: str = "out"
    threads: int = 1
    alpha_proposal_sd: float = 0.05 ** 0.5
    neal_aux_d: int = 20
    model_moves_per_iter: int = 1
    enforce_size_cap: bool = True
    write_draws: bool = False
    log_level: str = "INFO"


def _coerce(name: str, raw: Any) -> Any:
    """Convert a string value to the type of the RunSettings field."""
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    default = getattr(RunSettings, name)
    if name == "tau2":
        return "n" if text.lower() == "n" else float(text)
    if name in ("seed", "partition_file"):
        if text.lower() in ("", "none"):
            return None
        return int(text) if name == "seed" else text
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name} must be a boolean, got '{raw}'")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


class ConfigManager:
    """Manages run configuration."""

    FIELD_NAMES = tuple(f.name for f in fields(RunSettings))

    def __init__(self, config_file: Optional[str] = None):
        """
        Initialize config manager.

        Args:
            config_file: Optional key=value settings file
        """
        self.config_file = Path(config_file) if config_file else None
        self.settings = RunSettings()

        self._load_from_env()
        if self.config_file is not None:
            self._load_settings()

    def _load_from_env(self):
        """Load BLOCKG_* environment variables."""
        threads = os.getenv("BLOCKG_THREADS")
        if threads:
            try:
                self.settings.threads = int(threads)
            except ValueError:
                logger.warning("Ignoring BLOCKG_THREADS=%r: not an integer", threads)

        level = os.getenv("BLOCKG_LOG_LEVEL")
        if level:
            self.settings.log_level = level.strip().upper()

        seed = os.getenv("BLOCKG_SEED")
        if seed:
            try:
                self.settings.seed = int(seed)
            except ValueError:
                logger.warning("Ignoring BLOCKG_SEED=%r: not an integer", seed)

    def _load_settings(self):
        """Load settings from the key=value config file."""
        if not self.config_file.exists():
            raise FileNotFoundError(f"Config file not found: {self.config_file}")

        with open(self.config_file, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    logger.warning("%s:%d: skipping line without '='", self.config_file, line_no)
                    continue
                key, value = (part.strip() for part in line.split("=", 1))
                key = key.replace("-", "_")
                if key not in self.FIELD_NAMES:
                    logger.warning("%s:%d: unknown setting '%s'", self.config_file, line_no, key)
                    continue
                setattr(self.settings, key, _coerce(key, value))

    def update_settings(self, **kwargs):
        """
        Update settings; None values are ignored.

        Args:
            **kwargs: Settings to update
        """
        for key, value in kwargs.items():
            if value is None:
                continue
            if key not in self.FIELD_NAMES:
                raise KeyError(f"Unknown setting: {key}")
            setattr(self.settings, key, _coerce(key, value))

    def validate_config(self) -> List[str]:
        """
        Validate configuration.

        Returns:
            List of error messages (empty if valid)
        """
        s = self.settings
        errors = []

        if s.chains < 1:
            errors.append("chains must be >= 1")
        if s.iterations <= s.burn_in:
            errors.append("iterations must exceed burn_in")
        if s.burn_in < 0:
            errors.append("burn_in must be >= 0")
        if s.thin < 1:
            errors.append("thin must be >= 1")
        if s.threads < 1:
            errors.append("threads must be >= 1")
        if s.a <= -1:
            errors.append("a must be > -1")
        if s.b <= -1:
            errors.append("b must be > -1")
        if s.tau2 != "n" and not (isinstance(s.tau2, (int, float)) and s.tau2 > 0):
            errors.append("tau2 must be 'n' or a positive number")
        if s.bb_c <= 0 or s.bb_d <= 0:
            errors.append("bb_c and bb_d must be > 0")
        if s.alpha_proposal_sd <= 0:
            errors.append("alpha_proposal_sd must be > 0")
        if s.neal_aux_d < 1:
            errors.append("neal_aux_d must be >= 1")
        if s.model_moves_per_iter < 1:
            errors.append("model_moves_per_iter must be >= 1")
        if s.log_level.upper() not in LOG_LEVELS:
            errors.append(f"Invalid log level: {s.log_level}")

        try:
            variant = Variant.parse(s.variant)
        except ValueError:
            errors.append(f"Invalid variant: {s.variant}")
        else:
            if variant == Variant.FIXED_PARTITION and not s.partition_file:
                errors.append("fixed_partition needs partition_file")

        return errors

    def prior_spec(self, fixed_labels: Optional[Tuple[int, ...]] = None, **overrides) -> PriorSpec:
        """Build the PriorSpec of the resolved settings."""
        s = self.settings
        values = dict(
            a=s.a,
            b=s.b,
            tau2=None if s.tau2 == "n" else float(s.tau2),
            bb_c=s.bb_c,
            bb_d=s.bb_d,
            variant=Variant.parse(s.variant),
            fixed_labels=fixed_labels,
            enforce_size_cap=s.enforce_size_cap,
        )
        values.update(overrides)
        return PriorSpec(**values)

    def chain_config(self, **overrides) -> ChainConfig:
        """Build the ChainConfig of the resolved settings."""
        s = self.settings
        values = dict(
            iterations=s.iterations,
            burn_in=s.burn_in,
            thin=s.thin,
            n_chains=s.chains,
            seed=s.seed,
            alpha_proposal_sd=s.alpha_proposal_sd,
            neal_aux_d=s.neal_aux_d,
            model_moves_per_iter=s.model_moves_per_iter,
        )
        values.update(overrides)
        return ChainConfig(**values)

    def as_dict(self) -> Dict[str, Any]:
        """Resolved settings as a JSON-ready dict."""
        return asdict(self.settings)

    def get_summary(self) -> str:
        """
        Get configuration summary.

        Returns:
            Summary string
        """
        s = self.settings
        summary = f"""Configuration Summary:
- Variant: {s.variant}
- Seed: {s.seed}
- Chains: {s.chains}
- Iterations: {s.iterations} (burn-in {s.burn_in}, thin {s.thin})
- Beta-prime: a={s.a}, b={s.b}, tau2={s.tau2}
- Model prior: Beta-Binomial({s.bb_c}, {s.bb_d})
- Threads: {s.threads}
- Output: {s.out_dir}
"""
        return summary
