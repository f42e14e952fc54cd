from src.diversity.loss import (
    DiversityGradient,
    ScaledMapStack,
    diversity_loss,
    diversity_loss_grad,
    scaled_maps,
    spatial_softmax,
)
from src.diversity.metrics import DiversityReport, loc_k

__all__ = [
    "DiversityGradient",
    "DiversityReport",
    "ScaledMapStack",
    "diversity_loss",
    "diversity_loss_grad",
    "loc_k",
    "scaled_maps",
    "spatial_softmax",
]
