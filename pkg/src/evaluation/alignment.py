"""Alignment of learned features with annotated attributes.

C_aj = (mean of feature j over attribute-positive examples
        - mean over attribute-negative examples) / (max_j - min_j),
with the range taken over the whole column.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from src.core.containers import FeatureMatrix
from src.exceptions import ArtifactError, CodecError, ConfigurationError, ShapeMismatchError

# Certainty codes of the annotation CSV
ABSENT: int = 0
GUESSING: int = 1
PROBABLY: int = 2
DEFINITELY: int = 3

LONG_COLUMNS: list[str] = ["example_id", "attribute_id", "certainty"]
REPORT_COLUMNS: list[str] = ["attribute", "feature", "score"]

# Columns whose range falls below this score 0 and are flagged
_CONSTANT_RANGE_TOL: float = 1e-12


@dataclass(frozen=True)
class AttributeTable:
    """Certainty code per (example, attribute); one row per example."""

    codes: pd.DataFrame

    def __post_init__(self) -> None:
        if self.codes.isna().to_numpy().any():
            raise ConfigurationError("every example must cover the same attribute set")
        values = self.codes.to_numpy()
        if values.size and not np.isin(values, [ABSENT, GUESSING, PROBABLY, DEFINITELY]).all():
            raise ConfigurationError("certainty codes must lie in {0, 1, 2, 3}")
        object.__setattr__(self, "codes", self.codes.astype(np.int64))

    @property
    def names(self) -> list[str]:
        return [str(c) for c in self.codes.columns]

    @property
    def n_examples(self) -> int:
        return self.codes.shape[0]

    def positives(self) -> np.ndarray:
        """N x A mask of examples labelled probably or definitely."""
        return self.codes.isin([PROBABLY, DEFINITELY]).to_numpy()

    def negatives(self) -> np.ndarray:
        return (self.codes == ABSENT).to_numpy()

    @classmethod
    def from_long(cls, frame: pd.DataFrame) -> "AttributeTable":
        """Pivots (example_id, attribute_id, certainty) rows into the table."""
        missing = [c for c in LONG_COLUMNS if c not in frame.columns]
        if missing:
            raise CodecError(f"attribute CSV lacks columns {missing}")
        if frame.duplicated(subset=["example_id", "attribute_id"]).any():
            raise CodecError("attribute CSV holds duplicate (example, attribute) rows")
        wide = frame.pivot(index="example_id", columns="attribute_id", values="certainty").sort_index()
        wide.columns = [str(c) for c in wide.columns]
        return cls(wide.reset_index(drop=True))

    def to_long(self) -> pd.DataFrame:
        long = self.codes.rename_axis("example_id").reset_index().melt(
            id_vars="example_id", var_name="attribute_id", value_name="certainty"
        )
        return long.sort_values(["example_id", "attribute_id"], kind="stable").reset_index(drop=True)

    @classmethod
    def read_csv(cls, path: Path) -> "AttributeTable":
        path = Path(path)
        if not path.exists():
            raise ArtifactError(f"attribute table not found: {path}")
        return cls.from_long(pd.read_csv(path))

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_long().to_csv(path, index=False)
        return path


@dataclass(frozen=True)
class AlignmentScores:
    """A x F alignment matrix with its flags.

    Attributes:
        values (np.ndarray): C_aj; NaN on flagged attribute rows.
        attributes (list[str]): Attribute names (row labels).
        flagged_attributes (np.ndarray): Rows without a positive or a negative example.
        constant_features (np.ndarray): Columns with zero range (scored 0).
    """

    values: np.ndarray
    attributes: list[str]
    flagged_attributes: np.ndarray
    constant_features: np.ndarray


def alignment_scores(feats: FeatureMatrix | np.ndarray, table: AttributeTable) -> AlignmentScores:
    """Computes C_aj for every (attribute, feature) pair.

    Guessing labels count toward neither group but do enter the column range.

    Raises:
        ShapeMismatchError: If the table and the matrix disagree on N.
    """
    values = feats.values if isinstance(feats, FeatureMatrix) else np.asarray(feats, dtype=np.float64)
    if values.shape[0] != table.n_examples:
        raise ShapeMismatchError(f"{values.shape[0]} feature rows but {table.n_examples} annotated examples")

    positives = table.positives().astype(np.float64)
    negatives = table.negatives().astype(np.float64)
    n_pos = positives.sum(axis=0)
    n_neg = negatives.sum(axis=0)
    flagged = (n_pos == 0) | (n_neg == 0)

    with np.errstate(invalid="ignore", divide="ignore"):
        mean_pos = (positives.T @ values) / n_pos[:, None]
        mean_neg = (negatives.T @ values) / n_neg[:, None]
    delta = mean_pos - mean_neg

    spread = values.max(axis=0) - values.min(axis=0)
    constant = spread < _CONSTANT_RANGE_TOL
    scores = np.zeros_like(delta)
    scores[:, ~constant] = delta[:, ~constant] / spread[~constant]
    scores[flagged] = np.nan

    return AlignmentScores(scores, table.names, flagged, constant)


def alignment_report(scores: AlignmentScores, threshold: float = 0.2) -> pd.DataFrame:
    """Lists (attribute, feature, score) with score > threshold, highest first.

    A threshold <= 0 disables the filter and lists every finite entry.
    """
    rows, cols = np.nonzero(np.isfinite(scores.values))
    frame = pd.DataFrame(
        {
            "attribute": [scores.attributes[r] for r in rows],
            "feature": cols.astype(np.int64),
            "score": scores.values[rows, cols],
        },
        columns=REPORT_COLUMNS,
    )
    if threshold > 0:
        frame = frame[frame["score"] > threshold]
    return frame.sort_values("score", ascending=False, kind="stable").reset_index(drop=True)


def write_alignment_report(report: pd.DataFrame, path: Path) -> tuple[Path, Path]:
    """Writes the report as CSV and as a JSON list of records next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(path, index=False)
    json_path = path.with_suffix(".json")
    report.to_json(json_path, orient="records", indent=2)
    return path, json_path
