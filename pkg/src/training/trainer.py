from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import log_softmax, softmax

from src.core.containers import FeatureMapBatch, FeatureMatrix, LabelVector, NormStats, SparseLinearModel
from src.diversity.loss import diversity_loss_grad
from src.exceptions import ConfigurationError, NonFiniteError, ShapeMismatchError
from src.schemas import FinetuneConfig
from src.training.extractor import ToyExtractor

CURVE_COLUMNS: list[str] = ["epoch", "ce", "l_div", "objective", "accuracy"]


def cross_entropy_grad(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of a batch and its gradient w.r.t. the logits.

    Args:
        logits (np.ndarray): N x C logits.
        labels (np.ndarray): Class index per row.

    Returns:
        tuple[float, np.ndarray]: Mean loss and (softmax - onehot) / N.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    rows = np.arange(logits.shape[0])
    loss = float(-np.mean(log_softmax(logits, axis=1)[rows, labels]))
    grad = softmax(logits, axis=1)
    grad[rows, labels] -= 1.0
    return loss, grad / logits.shape[0]


@dataclass(frozen=True)
class LossTerms:
    """One evaluation of L_final = L_CE + beta * L_div on a batch."""

    loss: float
    ce: float
    l_div: float
    logits: np.ndarray
    grad_weights: np.ndarray
    grad_bias: np.ndarray
    grad_extractor: tuple[np.ndarray, np.ndarray] | None = None


class FinalLoss:
    """Cross-entropy plus weighted diversity loss with analytic gradients.

    The head sees pooled features standardized with fixed statistics. Feature
    dropout (a keep mask already scaled by 1 / (1 - p)) applies to the pooled
    features of the cross-entropy path only; the predicted class and L_div
    use the undropped features.
    """

    def __init__(self, beta: float = 0.0, norm_stats: NormStats | None = None) -> None:
        if beta < 0:
            raise ConfigurationError(f"beta must be nonnegative, got {beta}")
        self.beta: float = beta
        self.norm_stats: NormStats | None = norm_stats

    def normalize(self, pooled: np.ndarray) -> np.ndarray:
        return pooled if self.norm_stats is None else self.norm_stats.apply(pooled)

    def _pooled_backward(self, d_z: np.ndarray) -> np.ndarray:
        if self.norm_stats is None:
            return d_z
        d_pooled = d_z / self.norm_stats.scale
        d_pooled[:, self.norm_stats.constant] = 0.0
        return d_pooled

    def evaluate(
        self,
        weights: np.ndarray,
        bias: np.ndarray,
        labels: np.ndarray,
        *,
        feats: np.ndarray | None = None,
        maps: np.ndarray | None = None,
        inputs: np.ndarray | None = None,
        extractor: ToyExtractor | None = None,
        keep: np.ndarray | None = None,
    ) -> LossTerms:
        """Loss and gradients for one batch.

        Exactly one source of features is used: `inputs` through `extractor`,
        else `maps`, else pooled `feats`.

        Raises:
            ConfigurationError: If beta > 0 and no spatial maps are available.
        """
        if extractor is not None:
            if inputs is None:
                raise ConfigurationError("an extractor needs input grids")
            maps = extractor.forward(inputs)
        if maps is not None:
            pooled = maps.mean(axis=(2, 3))
        elif feats is not None:
            pooled = np.asarray(feats, dtype=np.float64)
        else:
            raise ConfigurationError("no features given to the loss")
        if self.beta > 0 and maps is None:
            raise ConfigurationError("the diversity term needs spatial feature maps")

        z = self.normalize(pooled)
        z_train = z if keep is None else z * keep
        logits = z_train @ weights.T + bias
        ce, d_logits = cross_entropy_grad(logits, labels)

        grad_weights = d_logits.T @ z_train
        grad_bias = d_logits.sum(axis=0)
        d_z = d_logits @ weights
        if keep is not None:
            d_z = d_z * keep

        l_div = 0.0
        d_maps = None
        if maps is not None:
            d_maps = np.broadcast_to(
                (self._pooled_backward(d_z) / (maps.shape[2] * maps.shape[3]))[:, :, None, None], maps.shape
            ).copy()
        if self.beta > 0:
            head = SparseLinearModel(weights, bias)
            clean_logits = z @ weights.T + bias
            div = diversity_loss_grad(maps, head, logits=clean_logits)
            l_div = div.loss
            grad_weights = grad_weights + self.beta * div.d_weights
            d_maps += self.beta * div.d_maps

        grad_extractor = None
        if extractor is not None:
            grad_extractor = extractor.backward(inputs, d_maps)

        return LossTerms(
            loss=ce + self.beta * l_div,
            ce=ce,
            l_div=l_div,
            logits=logits,
            grad_weights=grad_weights,
            grad_bias=grad_bias,
            grad_extractor=grad_extractor,
        )


@dataclass(frozen=True)
class FinetuneResult:
    model: SparseLinearModel
    extractor: ToyExtractor | None
    curves: pd.DataFrame


class FeatureTrainer:
    """Masked mini-batch SGD with momentum on L_CE + beta * L_div.

    Serves both the dense stage (dense model, free support) and the sparse
    finetuning stage (frozen support). The bias is always trainable.
    """

    def __init__(self, config: FinetuneConfig, verbose: bool = False) -> None:
        self.config: FinetuneConfig = config
        self.verbose: bool = verbose

    def fit(
        self,
        data: FeatureMapBatch | FeatureMatrix,
        labels: LabelVector,
        model: SparseLinearModel,
        extractor: ToyExtractor | None = None,
        norm_stats: NormStats | None = None,
        stage: str = "finetuned",
    ) -> FinetuneResult:
        """Trains the head (and extractor, when given) and returns the updated copies.

        Args:
            data (FeatureMapBatch | FeatureMatrix): Feature maps, extractor input
                grids when `extractor` is given, or pooled features.
            labels (LabelVector): Training labels.
            model (SparseLinearModel): Starting decision layer.
            extractor (ToyExtractor | None): Optional trainable map producer.
            norm_stats (NormStats | None): Fixed standardization of pooled features.
            stage (str): Stage tag written into the returned model's metadata.

        Returns:
            FinetuneResult: Model with the same support when `freeze_support`,
                the extractor and per-epoch curves (epoch 0 = before training).

        Raises:
            ConfigurationError: On missing maps for beta > 0, an empty frozen
                support or shape disagreements.
            NonFiniteError: If the loss stops being finite (with epoch and step).
        """
        cfg = self.config
        spatial = isinstance(data, FeatureMapBatch)
        if cfg.beta > 0 and not spatial:
            raise ConfigurationError("beta > 0 requires feature maps, got pooled features")
        if extractor is not None and not spatial:
            raise ConfigurationError("an extractor requires input grids")
        if cfg.freeze_support and not model.support:
            raise ConfigurationError("freeze_support requires a nonempty model support")
        if data.n_samples != len(labels):
            raise ShapeMismatchError(f"{data.n_samples} examples but {len(labels)} labels")
        n_features = extractor.n_features if extractor is not None else data.n_features
        if n_features != model.n_features or model.n_classes != labels.num_classes:
            raise ShapeMismatchError(
                f"model {model.weights.shape} does not match {labels.num_classes} classes x {n_features} features"
            )

        loss_fn = FinalLoss(cfg.beta, norm_stats)
        values = data.values
        y = labels.labels
        rng = np.random.default_rng(cfg.seed)

        weights = np.array(model.weights)
        bias = np.array(model.bias)
        mask = model.support_mask.astype(np.float64) if cfg.freeze_support else np.ones_like(weights)
        v_weights = np.zeros_like(weights)
        v_bias = np.zeros_like(bias)

        train_extractor = extractor is not None and extractor.trainable
        if extractor is not None:
            ext_weights = np.array(extractor.weights)
            ext_offsets = np.array(extractor.offsets)
            v_ext_weights = np.zeros_like(ext_weights)
            v_ext_offsets = np.zeros_like(ext_offsets)

        def current_extractor() -> ToyExtractor | None:
            return None if extractor is None else extractor.with_params(ext_weights, ext_offsets)

        def batch_args(index: np.ndarray | slice) -> dict:
            if extractor is not None:
                return {"inputs": values[index], "extractor": current_extractor()}
            return {"maps": values[index]} if spatial else {"feats": values[index]}

        def curve_row(epoch: int) -> dict:
            terms = self._evaluate_full(loss_fn, weights, bias, y, batch_args(slice(None)))
            accuracy = float(np.mean(np.argmax(terms.logits, axis=1) == y))
            return {"epoch": epoch, "ce": terms.ce, "l_div": terms.l_div, "objective": terms.loss, "accuracy": accuracy}

        rows = [curve_row(0)]
        n = values.shape[0]
        for epoch in range(cfg.epochs):
            lr = cfg.lr * cfg.lr_decay.factor ** (epoch // cfg.lr_decay.every)
            ext_lr = cfg.effective_extractor_lr * cfg.lr_decay.factor ** (epoch // cfg.lr_decay.every)
            order = rng.permutation(n)

            for step, start in enumerate(range(0, n, cfg.batch_size)):
                batch = order[start:start + cfg.batch_size]
                keep = None
                if cfg.feature_dropout > 0:
                    keep = (rng.random((batch.shape[0], n_features)) >= cfg.feature_dropout) / (1.0 - cfg.feature_dropout)

                terms = loss_fn.evaluate(weights, bias, y[batch], keep=keep, **batch_args(batch))
                if not np.isfinite(terms.loss):
                    raise NonFiniteError(f"non-finite training loss at epoch {epoch + 1}, step {step}", (epoch + 1, step))

                g_weights = (terms.grad_weights + cfg.weight_decay * weights) * mask
                v_weights = cfg.momentum * v_weights + g_weights
                v_bias = cfg.momentum * v_bias + terms.grad_bias
                weights = weights - lr * v_weights
                bias = bias - lr * v_bias

                if train_extractor:
                    g_ext_weights, g_ext_offsets = terms.grad_extractor
                    v_ext_weights = cfg.momentum * v_ext_weights + g_ext_weights + cfg.weight_decay * ext_weights
                    v_ext_offsets = cfg.momentum * v_ext_offsets + g_ext_offsets
                    ext_weights = ext_weights - ext_lr * v_ext_weights
                    ext_offsets = ext_offsets - ext_lr * v_ext_offsets

            rows.append(curve_row(epoch + 1))
            if self.verbose and ((epoch + 1) % cfg.lr_decay.every == 0 or epoch + 1 == cfg.epochs):
                last = rows[-1]
                print(
                    f"   📈 epoch {epoch + 1:3d} | ce {last['ce']:.4f} | l_div {last['l_div']:+.4f} "
                    f"| acc {last['accuracy']:.2%} | lr {lr:.2e}"
                )

        trained = model.with_values(weights=weights, bias=bias, stage=stage)
        return FinetuneResult(trained, current_extractor(), pd.DataFrame(rows, columns=CURVE_COLUMNS))

    @staticmethod
    def _evaluate_full(loss_fn: FinalLoss, weights: np.ndarray, bias: np.ndarray, y: np.ndarray, args: dict) -> LossTerms:
        terms = loss_fn.evaluate(weights, bias, y, **args)
        if not np.isfinite(terms.loss):
            raise NonFiniteError("non-finite training loss on the full training set")
        return terms


def finetune(
    data: FeatureMapBatch | FeatureMatrix,
    labels: LabelVector,
    model: SparseLinearModel,
    config: FinetuneConfig,
    extractor: ToyExtractor | None = None,
    norm_stats: NormStats | None = None,
) -> FinetuneResult:
    """Functional entry point for `FeatureTrainer.fit`."""
    return FeatureTrainer(config).fit(data, labels, model, extractor=extractor, norm_stats=norm_stats)
