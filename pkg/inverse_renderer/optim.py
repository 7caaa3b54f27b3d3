"""Adam optimizer over a ParameterStore."""

import logging
from typing import Iterable, Optional

import numpy as np

from .autodiff import ParameterStore

logger = logging.getLogger(__name__)


def adam_step(
    store: ParameterStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    names: Optional[Iterable[str]] = None,
) -> int:
    """Apply one bias-corrected Adam update and zero the gradients.

    Frozen groups are left untouched. A group whose gradient holds a
    non-finite entry is skipped and counted in ``store.warning_count``.

    Args:
        store: Parameters with populated gradients.
        lr: Learning rate.
        beta1: First-moment decay.
        beta2: Second-moment decay.
        eps: Denominator floor.
        names: Restrict the update to these groups (all by default).

    Returns:
        Number of groups updated.
    """
    store.step_count += 1
    t = store.step_count
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t

    selected = list(names) if names is not None else store.names()
    updated = 0
    for name in selected:
        group = store.groups[name]
        if group.frozen:
            continue
        g = group.grad
        if not np.all(np.isfinite(g)):
            store.warning_count += 1
            logger.warning("Skipping Adam update for '%s': non-finite gradient", name)
            continue
        group.m *= beta1
        group.m += (1.0 - beta1) * g
        group.v *= beta2
        group.v += (1.0 - beta2) * g * g
        m_hat = group.m / correction1
        v_hat = group.v / correction2
        group.values -= lr * m_hat / (np.sqrt(v_hat) + eps)
        updated += 1

    store.zero_grad()
    return updated
