"""Layer contracts: embedding lookups, GRU steps, output logits with and
without maxout, L2 pooling, and the word-vector file loader."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FD_RTOL, fd_gradient, max_rel_error

from hredchat import tensor as T
from hredchat.layers import (
    EmbeddingLayer,
    GruCell,
    OutputLayer,
    embed,
    gru_step,
    l2_pool,
    load_word_vectors,
    logits,
)
from hredchat.tensor import Graph, Rng, ShapeMismatch, Tensor


class TestEmbed:
    def test_identity_projection_returns_table_column(self):
        layer = EmbeddingLayer(X=Tensor(np.eye(3)), E=Tensor(np.eye(3)))
        np.testing.assert_array_equal(embed(layer, 1).data, [0, 1, 0])

    def test_hand_multiplied_product(self):
        # X (2x2) @ E[:, 1]: [[1,2],[3,4]] @ [5,6] = [17, 39]
        layer = EmbeddingLayer(
            X=Tensor([[1.0, 2.0], [3.0, 4.0]]),
            E=Tensor([[0.0, 5.0, 1.0], [0.0, 6.0, 1.0]]),
        )
        np.testing.assert_array_equal(embed(layer, 1).data, [17.0, 39.0])

    def test_gradient_touches_only_looked_up_columns(self):
        rng = Rng(0)
        layer = EmbeddingLayer.create(d_h=4, d_e=3, vocab_size=6, rng=rng)
        with Graph() as g:
            loss = T.sum_(T.add(embed(layer, 2), embed(layer, 5)))
        g.backward(loss)
        ge = g.grad(layer.E)
        touched = sorted(set(np.nonzero(ge)[1]))
        assert touched == [2, 5]

    def test_out_of_range_token(self):
        layer = EmbeddingLayer.create(4, 3, 6, Rng(0))
        with pytest.raises(IndexError):
            embed(layer, 6)


def _hand_gru(cell, h, x):
    """Scalar-arithmetic reference for one GRU step."""
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    r = sig(cell.w_r.data @ x + cell.u_r.data @ h + cell.b_r.data)
    z = sig(cell.w_z.data @ x + cell.u_z.data @ h + cell.b_z.data)
    c = np.tanh(cell.w_c.data @ x + cell.u_c.data @ (r * h) + cell.b_c.data)
    return (1 - z) * h + z * c


class TestGruStep:
    def test_zero_everything_stays_zero(self):
        cell = GruCell.create(2, 2, Rng(0))
        for p in cell.named("c").values():
            p.data = np.zeros_like(p.data)
        out = gru_step(cell, Tensor([0.0, 0.0]), Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0])

    def test_matches_hand_computation(self):
        cell = GruCell.create(2, 2, Rng(3))
        rng = Rng(8)
        for p in cell.named("c").values():
            p.data = rng.standard_normal(p.data.shape)
        h = np.array([0.3, -0.7])
        x = np.array([1.1, 0.2])
        out = gru_step(cell, Tensor(h), Tensor(x))
        np.testing.assert_allclose(out.data, _hand_gru(cell, h, x), atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(st.floats(min_value=-3, max_value=3), min_size=3, max_size=3),
        st.lists(st.floats(min_value=-3, max_value=3), min_size=3, max_size=3),
        st.integers(min_value=0, max_value=2 ** 31),
    )
    def test_output_bounded_by_convex_combination(self, h, x, seed):
        cell = GruCell.create(3, 3, Rng(seed))
        out = gru_step(cell, Tensor(h), Tensor(x)).data
        bound = np.maximum(np.abs(np.array(h)), 1.0) + 1e-12
        assert (np.abs(out) <= bound).all()

    def test_gradients_vs_finite_differences(self):
        cell = GruCell.create(3, 2, Rng(5))
        rng = Rng(21)
        params = cell.named("cell")
        for p in params.values():
            p.data = rng.standard_normal(p.data.shape) * 0.7
        h0 = Tensor(rng.standard_normal(2))
        x0 = Tensor(rng.standard_normal(3))

        def loss_value():
            return float(T.sum_(T.square(gru_step(cell, h0, x0))).data)

        with Graph() as g:
            loss = T.sum_(T.square(gru_step(cell, h0, x0)))
        g.backward(loss)
        for name, p in {**params, "h": h0, "x": x0}.items():
            numeric = fd_gradient(loss_value, p)
            assert max_rel_error(g.grad(p), numeric) < FD_RTOL, name

    def test_shape_mismatch(self):
        cell = GruCell.create(3, 2, Rng(0))
        with pytest.raises(ShapeMismatch):
            gru_step(cell, Tensor([0.0, 0.0, 0.0]), Tensor([0.0, 0.0, 0.0]))


class TestLogits:
    def test_zero_output_layer_gives_uniform_softmax(self):
        layer = OutputLayer(O=Tensor(np.zeros((3, 5))), b=Tensor(np.zeros(5)))
        out = logits(layer, Tensor([1.0, -2.0, 0.5]))
        np.testing.assert_array_equal(out.data, np.zeros(5))
        np.testing.assert_allclose(T.softmax(out).data, np.full(5, 0.2))

    def test_hand_computed_logits(self):
        # O^T h + b with O = [[1,0,2,1],[0,3,1,0]], h = [2,-1], b = 0
        layer = OutputLayer(
            O=Tensor([[1.0, 0.0, 2.0, 1.0], [0.0, 3.0, 1.0, 0.0]]),
            b=Tensor(np.zeros(4)),
        )
        out = logits(layer, Tensor([2.0, -1.0]))
        np.testing.assert_array_equal(out.data, [2.0, -3.0, 3.0, 2.0])

    def test_maxout_opposite_pieces_give_abs(self):
        rng = Rng(4)
        a = rng.standard_normal((3, 3))
        c = np.zeros(3)
        layer = OutputLayer(
            O=Tensor(np.eye(3)),
            b=Tensor(np.zeros(3)),
            maxout=[(Tensor(a), Tensor(c)), (Tensor(-a), Tensor(c))],
        )
        h = rng.standard_normal(3)
        np.testing.assert_allclose(logits(layer, Tensor(h)).data, np.abs(a @ h), atol=1e-12)

    def test_maxout_gradients_vs_finite_differences(self):
        layer = OutputLayer.create(3, 4, Rng(9), maxout_k=2)
        params = layer.named()
        draw = Rng(33)  # one stream: distinct pieces, so no maxout ties
        for p in params.values():
            p.data = draw.standard_normal(p.data.shape) * 0.8
        h = Tensor(Rng(44).standard_normal(3))

        def loss_value():
            return float(T.sum_(T.square(logits(layer, h))).data)

        with Graph() as g:
            loss = T.sum_(T.square(logits(layer, h)))
        g.backward(loss)
        for name, p in {**params, "h": h}.items():
            numeric = fd_gradient(loss_value, p)
            assert max_rel_error(g.grad(p), numeric) < FD_RTOL, name


class TestL2Pool:
    def test_single_state_collapses_to_abs(self):
        out = l2_pool([Tensor([3.0, -4.0])])
        np.testing.assert_allclose(out.data, [3.0, 4.0])

    def test_two_state_formula(self):
        # states (3,0) and (0,4): sqrt(mean of squares) = (3/sqrt2, 4/sqrt2)
        out = l2_pool([Tensor([3.0, 0.0]), Tensor([0.0, 4.0])])
        np.testing.assert_allclose(out.data, [3 / math.sqrt(2), 4 / math.sqrt(2)])
        np.testing.assert_allclose(out.data, [2.1213, 2.8284], atol=1e-4)

    def test_all_zero_states(self):
        out = l2_pool([Tensor([0.0, 0.0]), Tensor([0.0, 0.0])])
        np.testing.assert_array_equal(out.data, [0.0, 0.0])

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            l2_pool([])

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(
            st.lists(st.floats(min_value=-5, max_value=5), min_size=2, max_size=2),
            min_size=1,
            max_size=6,
        ),
        st.randoms(use_true_random=False),
    )
    def test_permutation_invariant(self, states, shuffler):
        tensors = [Tensor(s) for s in states]
        ref = l2_pool(tensors).data
        perm = list(tensors)
        shuffler.shuffle(perm)
        np.testing.assert_allclose(l2_pool(perm).data, ref, atol=1e-12)


class TestWordVectorLoader:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "vecs.txt"
        path.write_text("hello 0.25 -1.5 3.0\nworld 1.0 2.0 -0.125\n")
        vecs = load_word_vectors(path)
        np.testing.assert_array_equal(vecs["hello"], [0.25, -1.5, 3.0])
        np.testing.assert_array_equal(vecs["world"], [1.0, 2.0, -0.125])

    def test_inconsistent_dims_rejected(self, tmp_path):
        path = tmp_path / "vecs.txt"
        path.write_text("a 1.0 2.0\nb 1.0\n")
        with pytest.raises(ValueError, match="expected 2"):
            load_word_vectors(path)

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "vecs.txt"
        path.write_text("\na 1.0 2.0\n\n")
        assert list(load_word_vectors(path)) == ["a"]
