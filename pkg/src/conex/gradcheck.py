"""Central finite-difference check of the analytic training gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelKind, ModelParams, init_params
from .training import TrainConfig, backward_batch, forward_batch, label_smooth

ERROR_FLOOR = 1e-7


@dataclass
class GradcheckResult:
    errors: dict[str, float]  # max relative error per parameter array

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    def report(self) -> str:
        lines = [f"{name}\t{err:.3e}" for name, err in self.errors.items()]
        lines.append(f"max_relative_error\t{self.max_error:.3e}")
        return "\n".join(lines) + "\n"


def random_instance(
    seed: int = 0,
    num_entities: int = 7,
    num_relations: int = 4,
    d: int = 6,
    c: int = 2,
    kind="conex",
    batch: int = 5,
):
    """Random parameters, queries and smoothed labels for a gradient check.

    Batch-norm scales and shifts are perturbed away from their identity
    initialisation so that those gradients are exercised in general position.
    """
    rng = np.random.default_rng(seed)
    params = init_params(seed, num_entities, num_relations, d, c, kind)
    if params.conv is not None:
        params.conv.b[:] = rng.normal(0, 0.1, params.conv.b.shape)
        for bn in (params.conv.bn0, params.conv.bn1, params.conv.bn2):
            bn.weight[:] = rng.uniform(0.5, 1.5, bn.size)
            bn.bias[:] = rng.normal(0, 0.3, bn.size)
    keys = np.stack([rng.integers(0, num_entities, batch), rng.integers(0, num_relations, batch)], axis=1)
    y = label_smooth((rng.random((batch, num_entities)) < 0.3).astype(float), 0.1)
    return params, keys, y


def check_gradients(
    params: ModelParams,
    keys: np.ndarray,
    targets: np.ndarray,
    config: TrainConfig | None = None,
    eps: float = 1e-5,
    dropout_seed: int = 123,
) -> GradcheckResult:
    """Compare analytic gradients of the batch loss against central differences.

    Dropout masks are redrawn from the same seed on every evaluation so that the
    loss is a fixed function of the parameters; running statistics are frozen.
    """
    if config is None:
        config = TrainConfig(kind=params.kind, d=params.dim, c=max(params.channels, 1),
                             input_dropout=0.2, feature_dropout=0.3)

    def loss_and_result():
        return forward_batch(params, keys, targets, config,
                             np.random.default_rng(dropout_seed), update_running=False)

    analytic = backward_batch(params, loss_and_result(), targets)
    errors = {}
    for name, array in params.trainable().items():
        flat = array.reshape(-1)
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_and_result().loss
            flat[i] = orig - eps
            down = loss_and_result().loss
            flat[i] = orig
            numeric[i] = (up - down) / (2 * eps)
        a = analytic[name].reshape(-1)
        scale = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), ERROR_FLOOR)
        errors[name] = float(np.max(np.abs(a - numeric) / scale))
    return GradcheckResult(errors)


def run_default(seed: int = 0) -> GradcheckResult:
    """ConEx with d=6, c=2, |E|=7, |R'|=4."""
    params, keys, y = random_instance(seed, kind=ModelKind.CONEX)
    return check_gradients(params, keys, y)
