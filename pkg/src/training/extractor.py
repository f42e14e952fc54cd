from dataclasses import dataclass
from pathlib import Path

import joblib
import numpy as np

from src.exceptions import ArtifactError, NonFiniteError, ShapeMismatchError


@dataclass(frozen=True)
class ToyExtractor:
    """Per-location linear channel mixing (a 1x1 convolution).

    Maps an input grid of D channels to F feature maps of the same spatial
    size: M[n, f] = sum_d A[f, d] * X[n, d] + c[f].

    Attributes:
        weights (np.ndarray): F x D mixing matrix A.
        offsets (np.ndarray): Per-map offset c, shape (F,).
        trainable (bool): Whether the trainer updates the parameters.
    """

    weights: np.ndarray
    offsets: np.ndarray
    trainable: bool = True

    def __post_init__(self) -> None:
        weights = np.array(self.weights, dtype=np.float64)
        offsets = np.array(self.offsets, dtype=np.float64).reshape(-1)
        if weights.ndim != 2 or offsets.shape[0] != weights.shape[0]:
            raise ShapeMismatchError(f"extractor weights {weights.shape} and offsets {offsets.shape} disagree")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(offsets))):
            raise NonFiniteError("extractor parameters contain non-finite values")
        weights.setflags(write=False)
        offsets.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "offsets", offsets)

    # --- Construction --------------------------------------------------------

    @classmethod
    def identity(cls, n_channels: int, trainable: bool = True) -> "ToyExtractor":
        return cls(np.eye(n_channels), np.zeros(n_channels), trainable)

    @classmethod
    def random(cls, n_in: int, n_out: int, seed: int, scale: float = 0.1) -> "ToyExtractor":
        """Identity-like start: near-diagonal mixing when n_in == n_out."""
        rng = np.random.default_rng(seed)
        weights = rng.normal(0.0, scale, size=(n_out, n_in))
        weights[np.arange(min(n_in, n_out)), np.arange(min(n_in, n_out))] += 1.0
        return cls(weights, np.zeros(n_out))

    def with_params(self, weights: np.ndarray, offsets: np.ndarray) -> "ToyExtractor":
        return ToyExtractor(weights, offsets, self.trainable)

    # --- Evaluation ----------------------------------------------------------

    @property
    def n_inputs(self) -> int:
        return self.weights.shape[1]

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def forward(self, inputs: np.ndarray) -> np.ndarray:
        """N x D x H x W inputs -> N x F x H x W feature maps."""
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 4 or inputs.shape[1] != self.n_inputs:
            raise ShapeMismatchError(f"extractor expects N x {self.n_inputs} x H x W inputs, got {inputs.shape}")
        maps = np.einsum("fd,ndhw->nfhw", self.weights, inputs, optimize=True)
        return maps + self.offsets[None, :, None, None]

    def backward(self, inputs: np.ndarray, d_maps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gradients of a scalar loss w.r.t. (weights, offsets) given d loss / d maps."""
        d_weights = np.einsum("nfhw,ndhw->fd", d_maps, inputs, optimize=True)
        d_offsets = d_maps.sum(axis=(0, 2, 3))
        return d_weights, d_offsets

    def __call__(self, grid: np.ndarray) -> np.ndarray:
        """Pooled feature vector of one D x H x W input grid."""
        return self.forward(np.asarray(grid, dtype=np.float64)[None])[0].mean(axis=(1, 2))

    # --- Persistence ---------------------------------------------------------

    def save(self, path: Path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            joblib.dump(
                {"weights": np.array(self.weights), "offsets": np.array(self.offsets), "trainable": self.trainable},
                path,
            )
        except OSError as exc:
            raise ArtifactError(f"cannot write extractor to {path}: {exc}") from exc
        return path

    @classmethod
    def load(cls, path: Path) -> "ToyExtractor":
        path = Path(path)
        if not path.exists():
            raise ArtifactError(f"extractor artifact not found: {path}")
        payload = joblib.load(path)
        return cls(payload["weights"], payload["offsets"], bool(payload.get("trainable", True)))
