"""Masking-based localization maps.

For each patch size p the input is tiled at stride p; every patch is replaced
by a blurred copy and the drop of one pooled feature is recorded through a
ReLU. Per-size maps are max-normalized, replicated onto the finest grid and
summed.
"""
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.ndimage import gaussian_filter

from src.exceptions import ArtifactError, ConfigurationError, NonFiniteError, ShapeMismatchError
from src.preprocessing.codecs import decode_fmx, encode_fmp
from src.schemas import PatchSchedule


class ExtractorInterface(Protocol):
    """Maps one channels x H x W input grid to its pooled feature vector (length F)."""

    def __call__(self, grid: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class LocalizationMap:
    """Summed localization map on the finest patch grid.

    Attributes:
        values (np.ndarray): Nonnegative H' x W' map.
        per_size (dict[int, np.ndarray]): Max-normalized map per patch size on its own grid.
        sizes (list[int]): Patch sizes actually used (clipped to the input).
    """

    values: np.ndarray
    per_size: dict[int, np.ndarray] = field(default_factory=dict)
    sizes: list[int] = field(default_factory=list)


def patch_origins(edge: int, size: int) -> np.ndarray:
    """Start offsets at stride `size`; a last patch clamped to the border covers any remainder."""
    starts = list(range(0, edge - size + 1, size))
    if starts[-1] + size < edge:
        starts.append(edge - size)
    return np.array(starts, dtype=np.int64)


def _blurred(grid: np.ndarray, size: int, schedule: PatchSchedule) -> np.ndarray:
    sigma = schedule.sigma_ratio * size
    return gaussian_filter(grid, sigma=(0.0, sigma, sigma), mode="reflect", truncate=schedule.truncate)


def _feature(extractor: ExtractorInterface, grid: np.ndarray, feature_index: int, where: tuple) -> float:
    pooled = np.asarray(extractor(grid), dtype=np.float64).reshape(-1)
    if feature_index >= pooled.shape[0]:
        raise ConfigurationError(f"feature_index {feature_index} exceeds the {pooled.shape[0]} extracted features")
    value = pooled[feature_index]
    if not np.isfinite(value):
        raise NonFiniteError("extractor returned a non-finite feature", where)
    return float(value)


def _size_map(
    extractor: ExtractorInterface,
    grid: np.ndarray,
    feature_index: int,
    size: int,
    reference: float,
    schedule: PatchSchedule,
    n_jobs: int,
) -> np.ndarray:
    blurred = _blurred(grid, size, schedule)
    rows = patch_origins(grid.shape[1], size)
    cols = patch_origins(grid.shape[2], size)

    def drop(r: int, c: int) -> float:
        masked = grid.copy()
        masked[:, rows[r]:rows[r] + size, cols[c]:cols[c] + size] = blurred[:, rows[r]:rows[r] + size, cols[c]:cols[c] + size]
        return max(0.0, reference - _feature(extractor, masked, feature_index, (size, r, c)))

    cells = [(r, c) for r in range(rows.shape[0]) for c in range(cols.shape[0])]
    if n_jobs == 1:
        drops = [drop(r, c) for r, c in cells]
    else:
        drops = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(drop)(r, c) for r, c in cells)
    return np.array(drops, dtype=np.float64).reshape(rows.shape[0], cols.shape[0])


def _to_finest(values: np.ndarray, size: int, finest: int, shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour replication of a per-size map onto the finest grid."""
    if size == finest:
        return values
    index = []
    for axis, edge in enumerate(shape):
        centres = patch_origins(edge, finest) + finest // 2
        coarse = patch_origins(edge, size)
        index.append(np.clip(np.searchsorted(coarse, centres, side="right") - 1, 0, values.shape[axis] - 1))
    return values[np.ix_(index[0], index[1])]


def localize_feature(
    extractor: ExtractorInterface,
    grid: np.ndarray,
    feature_index: int,
    schedule: PatchSchedule | None = None,
    n_jobs: int = 1,
) -> LocalizationMap:
    """Builds the localization map of one feature for one input grid.

    Args:
        extractor (ExtractorInterface): Deterministic pooled-feature function.
        grid (np.ndarray): Channels x H x W input.
        feature_index (int): Feature whose drop is measured.
        schedule (PatchSchedule | None): Patch sizes and blur; sizes larger
            than the shorter input edge are clipped to it.
        n_jobs (int): joblib threads evaluating cells; the extractor must be
            safe for concurrent calls when above 1.

    Returns:
        LocalizationMap: Summed map plus the per-size maps.

    Raises:
        ConfigurationError: On a negative or out-of-range feature index.
        NonFiniteError: If the extractor returns NaN/inf (with size and cell).
    """
    schedule = schedule or PatchSchedule()
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 3:
        raise ShapeMismatchError(f"expected a channels x H x W grid, got shape {grid.shape}")
    if feature_index < 0:
        raise ConfigurationError(f"feature_index must be nonnegative, got {feature_index}")

    shape = (grid.shape[1], grid.shape[2])
    sizes = schedule.clipped(min(shape))
    finest = sizes[0]
    reference = _feature(extractor, grid, feature_index, ("reference",))

    total = None
    per_size: dict[int, np.ndarray] = {}
    for size in sizes:
        raw = _size_map(extractor, grid, feature_index, size, reference, schedule, n_jobs)
        peak = raw.max()
        normalized = raw / peak if peak > 0 else raw
        per_size[size] = normalized
        upsampled = _to_finest(normalized, size, finest, shape)
        total = upsampled.copy() if total is None else total + upsampled

    return LocalizationMap(values=total, per_size=per_size, sizes=sizes)


class SubprocessExtractor:
    """External extractor speaking FMP1 on stdin and FMX1 on stdout.

    The command receives a 1 x channels x H x W tensor and must answer with a
    1 x F matrix of pooled features.
    """

    def __init__(self, command: Sequence[str], timeout: float | None = 60.0) -> None:
        if not command:
            raise ConfigurationError("extractor command must not be empty")
        self.command: list[str] = list(command)
        self.timeout: float | None = timeout

    def __call__(self, grid: np.ndarray) -> np.ndarray:
        payload = encode_fmp(np.asarray(grid, dtype=np.float64)[None])
        try:
            done = subprocess.run(self.command, input=payload, capture_output=True, timeout=self.timeout, check=False)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ArtifactError(f"extractor command failed to run: {exc}") from exc
        if done.returncode != 0:
            message = done.stderr.decode("utf-8", errors="replace").strip()
            raise ArtifactError(f"extractor exited with code {done.returncode}: {message[:200]}")
        return decode_fmx(done.stdout)[0]


def write_pgm(path: Path, values: np.ndarray) -> Path:
    """Writes a binary grayscale PGM (P5) scaled so the map maximum is white."""
    values = np.asarray(values, dtype=np.float64)
    peak = values.max() if values.size else 0.0
    pixels = np.zeros(values.shape, dtype=np.uint8) if peak <= 0 else np.round(values / peak * 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"P5\n{values.shape[1]} {values.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + pixels.tobytes())
    return path
