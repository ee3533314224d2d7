"""Neural building blocks on the autodiff engine.

Layer normalization carries no affine weights here, so every learnable
parameter lives inside a Linear layer and parameter accounting reduces
to summing Linear shapes.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import DiffTensor

Params = list[tuple[str, DiffTensor]]


class Linear:
    """Affine map (n, d_in) -> (n, d_out) with learnable weight and bias."""

    def __init__(
        self,
        rng: np.random.Generator,
        d_in: int,
        d_out: int,
        prefix: str,
        zero_init: bool = False,
    ) -> None:
        if d_in < 1 or d_out < 1:
            raise ValueError(f"layer '{prefix}': dims must be >= 1, got {d_in}x{d_out}")
        if zero_init:
            w = np.zeros((d_in, d_out))
        else:
            w = rng.normal(scale=1.0 / math.sqrt(d_in), size=(d_in, d_out))
        self.weight = T.tensor(w, requires_grad=True, name=prefix + ".weight")
        self.bias = T.tensor(np.zeros(d_out), requires_grad=True, name=prefix + ".bias")

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return T.add_rowvec(T.matmul(x, self.weight), self.bias)

    def params(self) -> Params:
        return [(self.weight.name, self.weight), (self.bias.name, self.bias)]


class Mlp:
    """Two linear layers with a relu between them."""

    def __init__(
        self,
        rng: np.random.Generator,
        d_in: int,
        d_hidden: int,
        d_out: int,
        prefix: str,
        zero_init_output: bool = False,
    ) -> None:
        self.fc1 = Linear(rng, d_in, d_hidden, prefix + ".fc1")
        self.fc2 = Linear(rng, d_hidden, d_out, prefix + ".fc2", zero_init=zero_init_output)

    def __call__(self, x: DiffTensor) -> DiffTensor:
        return self.fc2(T.relu(self.fc1(x)))

    def params(self) -> Params:
        return self.fc1.params() + self.fc2.params()


class Attention:
    """Single-head scaled dot-product attention.

    `q_in` rows attend over `kv_in` rows; output has `q_in`'s row count.
    Four d-by-d projections, so the block holds exactly
    attention_param_count(d) learnable scalars.
    """

    def __init__(self, rng: np.random.Generator, d: int, prefix: str) -> None:
        self.wq = Linear(rng, d, d, prefix + ".wq")
        self.wk = Linear(rng, d, d, prefix + ".wk")
        self.wv = Linear(rng, d, d, prefix + ".wv")
        self.wo = Linear(rng, d, d, prefix + ".wo")
        self._scale = 1.0 / math.sqrt(d)

    def __call__(self, q_in: DiffTensor, kv_in: DiffTensor) -> DiffTensor:
        q = self.wq(q_in)
        k = self.wk(kv_in)
        v = self.wv(kv_in)
        logits = T.scale(T.matmul(q, T.transpose(k)), self._scale)
        return self.wo(T.matmul(T.softmax(logits, axis=1), v))

    def params(self) -> Params:
        return self.wq.params() + self.wk.params() + self.wv.params() + self.wo.params()


def attention_param_count(d: int) -> int:
    return 4 * (d * d + d)


class Block:
    """Post-norm residual block: attention, then a 2d-hidden feedforward.

    With `kv` omitted the attention is self-attention; passing `kv` turns
    the same structure into cross-attention without changing its
    parameter count. `q_extra` is added to the attention query input only
    (position information that should not enter the residual stream).
    """

    def __init__(self, rng: np.random.Generator, d: int, prefix: str) -> None:
        self.attn = Attention(rng, d, prefix + ".attn")
        self.ffn = Mlp(rng, d, 2 * d, d, prefix + ".ffn")

    def __call__(
        self,
        x: DiffTensor,
        kv: DiffTensor | None = None,
        q_extra: DiffTensor | None = None,
    ) -> DiffTensor:
        src = x if kv is None else kv
        attn_in = x if q_extra is None else T.add(x, q_extra)
        x = T.layer_norm(T.add(x, self.attn(attn_in, src)))
        return T.layer_norm(T.add(x, self.ffn(x)))

    def params(self) -> Params:
        return self.attn.params() + self.ffn.params()


def count_params(named: Sequence[tuple[str, DiffTensor]]) -> int:
    return sum(t.size for _, t in named)
