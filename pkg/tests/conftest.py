"""Shared test helpers: finite-difference oracles and tiny model factories."""

from __future__ import annotations

import numpy as np
import pytest

from hredchat.models import DialogueModel, ModelDims, build_model, forward
from hredchat.tensor import Graph, Rng, Tensor

# Central finite differences with this step bottom out around 1e-10 absolute
# noise (float64 roundoff on function values of order 10), so components
# smaller than the floor are compared absolutely rather than relatively.
FD_STEP = 1e-5
FD_FLOOR = 1e-5
FD_RTOL = 1e-4


def fd_gradient(loss_fn, param: Tensor, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. one tensor."""
    flat = param.data.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return out.reshape(param.data.shape)


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FD_FLOOR)
    return float((np.abs(analytic - numeric) / denom).max())


def check_grads(loss_fn, params: dict[str, Tensor], build_loss) -> dict[str, float]:
    """Analytic-vs-numeric gradient comparison for a dict of parameters.

    ``build_loss()`` runs one recorded forward pass and returns the scalar
    loss tensor; ``loss_fn()`` evaluates the same loss without recording.
    Returns the worst relative error per parameter name.
    """
    with Graph() as g:
        loss = build_loss()
    g.backward(loss)
    errors = {}
    for name, p in params.items():
        analytic = g.grad(p)
        numeric = fd_gradient(loss_fn, p)
        errors[name] = max_rel_error(analytic, numeric)
    return errors


def randomize_params(model: DialogueModel, seed: int, scale: float = 0.5) -> None:
    """Well-conditioned random parameters for gradient checks; the tiny
    default initialization puts many gradients below finite-difference
    noise."""
    rng = Rng(seed)
    for p in model.parameters().values():
        p.data = rng.standard_normal(p.data.shape) * scale


TINY_DIMS = ModelDims(d_h=4, d_ctx=4, d_e=3)
TINY_VOCAB = 7
TINY_EOU = 3
TINY_TRIPLE = [[1, 2, TINY_EOU], [4, 5, TINY_EOU], [6, 1, TINY_EOU]]


def tiny_model(variant: str, seed: int = 0, maxout_k: int = 0,
               bi_mode: str = "l2pool") -> DialogueModel:
    return build_model(
        variant,
        vocab_size=TINY_VOCAB,
        eou_id=TINY_EOU,
        dims=TINY_DIMS,
        rng=Rng(seed),
        maxout_k=maxout_k,
        bi_mode=bi_mode,
    )


@pytest.fixture
def rng():
    return Rng(1234)
