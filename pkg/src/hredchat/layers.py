"""Neural building blocks: factored embeddings, GRU cells, output
projection with optional maxout, and L2 pooling for bidirectional chains.

Initialization convention: recurrent (square, state-to-state) matrices are
orthogonal; everything else, biases included, is Gaussian with std 0.01.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    Rng,
    Tensor,
    apply,
    gaussian_init,
    matmul,
    maximum,
    mul,
    orthogonal_init,
    sqrt,
    square,
)

GAUSSIAN_STD = 0.01


@dataclass
class EmbeddingLayer:
    """Low-rank factored input embedding: token j maps to X @ E[:, j].

    E is the shared d_e x |V| token table (the part that can be loaded from
    external word vectors); X projects the d_e code into the d_h recurrent
    space, so the effective input embedding matrix is the product X E.
    """

    X: Tensor  # d_h x d_e
    E: Tensor  # d_e x |V|

    @classmethod
    def create(cls, d_h: int, d_e: int, vocab_size: int, rng: Rng) -> "EmbeddingLayer":
        return cls(
            X=gaussian_init((d_h, d_e), GAUSSIAN_STD, rng),
            E=gaussian_init((d_e, vocab_size), GAUSSIAN_STD, rng),
        )

    @property
    def d_h(self) -> int:
        return self.X.shape[0]

    @property
    def d_e(self) -> int:
        return self.E.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.E.shape[1]

    def named(self, prefix: str = "embedding") -> dict[str, Tensor]:
        return {f"{prefix}.X": self.X, f"{prefix}.E": self.E}


def embed(layer: EmbeddingLayer, token_id: int) -> Tensor:
    """d_h-dim input vector for one token; gradient only touches E[:, id]."""
    if not 0 <= token_id < layer.vocab_size:
        raise IndexError(f"token id {token_id} out of range for |V|={layer.vocab_size}")
    return apply("embed", (layer.X, layer.E), index=token_id)


@dataclass
class GruCell:
    """Gated recurrent unit with reset/update/candidate gates.

    r = sigmoid(w_r x + u_r h + b_r)
    z = sigmoid(w_z x + u_z h + b_z)
    c = tanh(w_c x + u_c (r*h) + b_c)
    h' = (1-z)*h + z*c
    """

    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_c: Tensor
    u_c: Tensor
    b_c: Tensor

    @classmethod
    def create(cls, input_size: int, hidden_size: int, rng: Rng) -> "GruCell":
        def w():
            return gaussian_init((hidden_size, input_size), GAUSSIAN_STD, rng)

        def u():
            return orthogonal_init(hidden_size, hidden_size, rng)

        def b():
            return gaussian_init((hidden_size,), GAUSSIAN_STD, rng)

        return cls(w_r=w(), u_r=u(), b_r=b(), w_z=w(), u_z=u(), b_z=b(),
                   w_c=w(), u_c=u(), b_c=b())

    @property
    def input_size(self) -> int:
        return self.w_r.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.w_r.shape[0]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w_r": self.w_r, f"{prefix}.u_r": self.u_r, f"{prefix}.b_r": self.b_r,
            f"{prefix}.w_z": self.w_z, f"{prefix}.u_z": self.u_z, f"{prefix}.b_z": self.b_z,
            f"{prefix}.w_c": self.w_c, f"{prefix}.u_c": self.u_c, f"{prefix}.b_c": self.b_c,
        }


def gru_step(cell: GruCell, h_prev: Tensor, x: Tensor) -> Tensor:
    """One GRU transition.  The output is a convex combination of h_prev and
    a tanh candidate, so every entry stays within max(|h_prev_i|, 1)."""
    return apply(
        "gru",
        (h_prev, x,
         cell.w_r, cell.u_r, cell.b_r,
         cell.w_z, cell.u_z, cell.b_z,
         cell.w_c, cell.u_c, cell.b_c),
    )


@dataclass
class OutputLayer:
    """Projection from decoder state to vocabulary logits.

    Without maxout the logits are O^T h + b.  With maxout, k linear pieces
    (A_i h + c_i) are reduced elementwise by max before the projection; at
    ties the earliest piece takes the subgradient.
    """

    O: Tensor  # d_h x |V| output embeddings
    b: Tensor  # |V|
    maxout: list[tuple[Tensor, Tensor]] = field(default_factory=list)

    @classmethod
    def create(cls, d_h: int, vocab_size: int, rng: Rng, maxout_k: int = 0) -> "OutputLayer":
        pieces = [
            (gaussian_init((d_h, d_h), GAUSSIAN_STD, rng),
             gaussian_init((d_h,), GAUSSIAN_STD, rng))
            for _ in range(maxout_k)
        ]
        return cls(
            O=gaussian_init((d_h, vocab_size), GAUSSIAN_STD, rng),
            b=gaussian_init((vocab_size,), GAUSSIAN_STD, rng),
            maxout=pieces,
        )

    @property
    def vocab_size(self) -> int:
        return self.O.shape[1]

    def named(self, prefix: str = "output") -> dict[str, Tensor]:
        out = {f"{prefix}.O": self.O, f"{prefix}.b": self.b}
        for i, (a, c) in enumerate(self.maxout):
            out[f"{prefix}.maxout{i}.a"] = a
            out[f"{prefix}.maxout{i}.c"] = c
        return out


def logits(layer: OutputLayer, h: Tensor) -> Tensor:
    if layer.maxout:
        pieces = [matmul(a, h) + c for a, c in layer.maxout]
        m = pieces[0]
        for p in pieces[1:]:
            m = maximum(m, p)
        h = m
    return matmul(h, layer.O) + layer.b


def l2_pool(states: list[Tensor]) -> Tensor:
    """Elementwise root-mean-square over a chain of hidden states."""
    if not states:
        raise ValueError("l2_pool: empty state list")
    acc = square(states[0])
    for s in states[1:]:
        acc = acc + square(s)
    return sqrt(mul(acc, Tensor(1.0 / len(states))))


def load_word_vectors(path) -> dict[str, np.ndarray]:
    """Read a text embedding file: one `token v1 v2 ... v_d` line per token.

    All rows must share one dimensionality.  Later duplicates of a token
    overwrite earlier ones.
    """
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise ValueError(f"{path}:{ln}: no vector components")
            elif len(values) != dim:
                raise ValueError(f"{path}:{ln}: expected {dim} components, got {len(values)}")
            vectors[token] = np.array([float(v) for v in values])
    return vectors
