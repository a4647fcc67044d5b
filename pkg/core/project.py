"""
Fit Artifacts
Saves and loads fitted chains so predictions can be made without refitting.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .errors import SchemaError
from .inference import ChainOutput

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"

# ChainOutput arrays stored in the artifact, with their dtypes.
DRAW_FIELDS = {
    "gamma": bool,
    "beta": float,
    "beta0": float,
    "sigma2": float,
    "alpha": float,
    "p_gamma": int,
    "K": int,
    "labels": int,
    "g_effective": float,
    "log_marginal": float,
}


@dataclass
class FitArtifact:
    """Everything cmd_predict needs from a fit."""
    schema_version: str = SCHEMA_VERSION

    # Training design
    response: str = ""
    column_names: List[str] = field(default_factory=list)
    column_means: List[float] = field(default_factory=list)
    column_scales: List[float] = field(default_factory=list)
    standardize: bool = False
    expand_interactions: bool = False
    base_columns: List[str] = field(default_factory=list)

    # Settings used
    settings: Dict[str, Any] = field(default_factory=dict)

    # Kept draws as nested lists, one row per draw
    draws: Dict[str, list] = field(default_factory=dict)

    @classmethod
    def from_chain(cls, chain: ChainOutput, ds, response: str, settings: Dict[str, Any],
                   **design) -> "FitArtifact":
        """
        Pack a chain and the design it was fitted on.

        Args:
            chain: Merged kept draws
            ds: Training Dataset (column names, means and scales)
            response: Response column name
            settings: Resolved run settings
            **design: standardize, expand_interactions, base_columns
        """
        return cls(
            response=response,
            column_names=list(ds.column_names),
            column_means=[float(v) for v in ds.column_means],
            column_scales=[float(v) for v in ds.column_scales],
            settings=dict(settings),
            draws={name: np.asarray(getattr(chain, name)).tolist() for name in DRAW_FIELDS},
            **design,
        )

    @property
    def n_draws(self) -> int:
        return len(self.draws.get("sigma2", []))

    def to_chain(self) -> ChainOutput:
        """Rebuild the ChainOutput of the stored draws."""
        missing = [name for name in DRAW_FIELDS if name not in self.draws]
        if missing:
            raise SchemaError(f"artifact is missing draws: {', '.join(missing)}")
        p = len(self.column_names)
        arrays = {}
        for name, dtype in DRAW_FIELDS.items():
            values = np.asarray(self.draws[name], dtype=dtype)
            if name in ("gamma", "beta", "labels", "g_effective"):
                values = values.reshape(-1, p)
            arrays[name] = values
        return ChainOutput(column_names=list(self.column_names), config=dict(self.settings), **arrays)


class FitProjectManager:
    """Manages fit artifacts on disk."""

    def __init__(self):
        """Initialize project manager."""
        self.current_artifact: Optional[FitArtifact] = None
        self.artifact_file: Optional[Path] = None

    def save_artifact(self, artifact: FitArtifact, file_path: str):
        """
        Save artifact to JSON file.

        Args:
            artifact: Artifact to save
            file_path: Path to save to
        """
        self.artifact_file = Path(file_path)
        self.artifact_file.parent.mkdir(parents=True, exist_ok=True)
        self.current_artifact = artifact

        with open(self.artifact_file, "w", encoding="utf-8") as f:
            json.dump(asdict(artifact), f, indent=2, ensure_ascii=False)
        logger.info("Saved fit artifact with %d draws to %s", artifact.n_draws, self.artifact_file)

    def load_artifact(self, file_path: str) -> FitArtifact:
        """
        Load artifact from JSON file.

        Args:
            file_path: Path to load from

        Returns:
            Loaded FitArtifact

        Raises:
            SchemaError: If the file is not a fit artifact of a known version
        """
        self.artifact_file = Path(file_path)

        try:
            with open(self.artifact_file, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise SchemaError(f"artifact not found: {file_path}") from e
        except json.JSONDecodeError as e:
            raise SchemaError(f"{file_path} is not valid JSON: {e}") from e

        if data.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(
                f"{file_path}: unsupported schema_version {data.get('schema_version')!r}"
            )
        try:
            artifact = FitArtifact(**data)
        except TypeError as e:
            raise SchemaError(f"{file_path}: {e}") from e

        self.current_artifact = artifact
        return artifact

    def get_summary(self) -> str:
        """
        Get artifact summary.

        Returns:
            Summary string
        """
        if not self.current_artifact:
            return "No artifact loaded"

        artifact = self.current_artifact
        summary = f"""Fit Summary:
- Response: {artifact.response}
- Columns: {len(artifact.column_names)}
- Draws: {artifact.n_draws}
- Variant: {artifact.settings.get('variant', '?')}
- Standardized: {artifact.standardize}
- Seed: {artifact.settings.get('seed')}
"""
        return summary
