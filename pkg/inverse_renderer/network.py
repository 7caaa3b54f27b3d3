"""Small dense MLPs with weights held in a ParameterStore."""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tape

logger = logging.getLogger(__name__)


class Mlp:
    """Fully connected network with softplus hidden layers and a linear head.

    Weights are stored as ``{prefix}.w{l}`` with shape (fan_in, fan_out) and
    biases as ``{prefix}.b{l}``.
    """

    def __init__(
        self,
        store: ParameterStore,
        prefix: str,
        sizes: Sequence[int],
        beta: float = 1.0,
        seed: int = 0,
        init: str = "default",
        radius: float = 1.0,
        plain_inputs: int = 3,
        zero_last: bool = False,
    ) -> None:
        """Create and register the layers.

        Args:
            store: Store receiving the parameter groups.
            prefix: Group name prefix.
            sizes: Layer widths including input and output.
            beta: Softplus sharpness of hidden activations.
            seed: Initialization seed.
            init: "default" (Xavier) or "geometric" (sphere-like SDF).
            radius: Sphere radius for geometric initialization.
            plain_inputs: Leading input features that are raw coordinates;
                the encoded ones start at zero weight under geometric init.
            zero_last: Zero the output layer (uniform softmax at start).
        """
        if len(sizes) < 2:
            raise ValueError(f"An MLP needs at least input and output sizes, got {list(sizes)}")
        if init not in ("default", "geometric"):
            raise ValueError(f"Unknown initialization '{init}'")

        self.store = store
        self.prefix = prefix
        self.sizes = tuple(int(s) for s in sizes)
        self.beta = beta
        self.layers: List[Tuple[str, str]] = []

        rng = np.random.default_rng(seed)
        count = len(self.sizes) - 1
        for l, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            last = l == count - 1
            if init == "geometric":
                if last:
                    w = rng.normal(math.sqrt(math.pi) / math.sqrt(fan_in), 1e-4, (fan_in, fan_out))
                    b = np.full(fan_out, -radius)
                else:
                    w = rng.normal(0.0, math.sqrt(2.0) / math.sqrt(fan_out), (fan_in, fan_out))
                    b = np.zeros(fan_out)
                    if l == 0 and fan_in > plain_inputs:
                        w[plain_inputs:, :] = 0.0
            else:
                w = rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)), (fan_in, fan_out))
                b = np.zeros(fan_out)
                if last and zero_last:
                    w[:] = 0.0

            w_name, b_name = f"{prefix}.w{l}", f"{prefix}.b{l}"
            store.add(w_name, w)
            store.add(b_name, b)
            self.layers.append((w_name, b_name))

        logger.debug("MLP '%s' %s registered (%d layers)", prefix, self.sizes, count)

    @property
    def group_names(self) -> List[str]:
        return [name for pair in self.layers for name in pair]

    def _forward(self, x, tape: Optional[Tape]):
        h = x
        pre_activations = []
        for l, (w_name, b_name) in enumerate(self.layers):
            w = self.store.param(w_name, tape)
            b = self.store.param(b_name, tape)
            z = ad.add(ad.matmul(h, w), b)
            if l == len(self.layers) - 1:
                return z, pre_activations
            pre_activations.append(z)
            h = ad.softplus(z, self.beta)
        raise AssertionError("unreachable")

    def forward(self, x, tape: Optional[Tape] = None):
        """Evaluate on a batch of shape (N, fan_in); returns (N, fan_out)."""
        out, _ = self._forward(x, tape)
        return out

    def input_gradient(self, x, tape: Optional[Tape] = None):
        """Output and its gradient w.r.t. the input features.

        Only defined for a single output unit. The gradient is assembled
        from taped first-order operations, so its dependence on the weights
        (and on x) is itself differentiable.

        Returns:
            Tuple (value (N,), gradient (N, fan_in)).
        """
        if self.sizes[-1] != 1:
            raise ValueError(f"input_gradient needs a scalar output, network '{self.prefix}' has {self.sizes[-1]}")
        out, pre = self._forward(x, tape)

        w_last = self.store.param(self.layers[-1][0], tape)
        g = ad.transpose(w_last)  # (1, width)
        for l in range(len(pre) - 1, -1, -1):
            g = ad.mul(g, ad.sigmoid(ad.mul(self.beta, pre[l])))
            g = ad.matmul(g, ad.transpose(self.store.param(self.layers[l][0], tape)))
        return out[:, 0], g
