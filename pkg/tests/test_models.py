"""Model contracts: the autoregressive factorization, causality, parameter
sharing, encoder/context/bridge behavior, and full-model gradients."""

import math

import numpy as np
import pytest

from conftest import (
    FD_RTOL,
    TINY_EOU,
    TINY_TRIPLE,
    TINY_VOCAB,
    fd_gradient,
    max_rel_error,
    randomize_params,
    tiny_model,
)

from hredchat import tensor as T
from hredchat.layers import gru_step
from hredchat.models import (
    ModelDims,
    advance_context,
    build_model,
    encode_utterance,
    forward,
    init_decoder,
)
from hredchat.tensor import Graph, Rng, Tensor


class TestForward:
    @pytest.mark.parametrize("variant", ["rnn-lm", "hred", "hred-bi"])
    def test_zero_output_weights_give_uniform(self, variant):
        model = tiny_model(variant)
        model.output.O.data = np.zeros_like(model.output.O.data)
        model.output.b.data = np.zeros_like(model.output.b.data)
        res = forward(model, TINY_TRIPLE)
        n_w = sum(len(u) for u in TINY_TRIPLE)
        assert len(res.targets) == n_w
        for lp in res.log_probs:
            np.testing.assert_allclose(lp.data, math.log(1 / TINY_VOCAB), atol=1e-12)
        assert abs(float(res.log_likelihood.data) + n_w * math.log(TINY_VOCAB)) < 1e-9

    @pytest.mark.parametrize("variant", ["rnn-lm", "hred", "hred-bi"])
    def test_factorization_exact(self, variant):
        """Total log-likelihood is exactly the sum of realized-token terms."""
        model = tiny_model(variant, seed=2)
        randomize_params(model, 5)
        res = forward(model, TINY_TRIPLE)
        total = sum(float(lp.data) for lp in res.token_log_probs)
        assert abs(total - float(res.log_likelihood.data)) < 1e-12
        picked = [float(v.data[t]) for v, t in zip(res.log_probs, res.targets)]
        assert abs(sum(picked) - float(res.log_likelihood.data)) < 1e-12

    @pytest.mark.parametrize("variant", ["rnn-lm", "hred", "hred-bi"])
    def test_every_position_normalized(self, variant):
        model = tiny_model(variant, seed=3)
        randomize_params(model, 7)
        res = forward(model, TINY_TRIPLE)
        for lp in res.log_probs:
            assert abs(np.exp(lp.data).sum() - 1.0) < 1e-9

    @pytest.mark.parametrize("variant", ["rnn-lm", "hred", "hred-bi"])
    def test_causality(self, variant):
        """Editing a token never changes distributions at earlier positions."""
        model = tiny_model(variant, seed=4)
        randomize_params(model, 11)
        base = forward(model, TINY_TRIPLE)
        edited = [list(u) for u in TINY_TRIPLE]
        edited[2][0] = 2  # final utterance, first token
        res = forward(model, edited)
        edit_pos = len(TINY_TRIPLE[0]) + len(TINY_TRIPLE[1])
        for i in range(edit_pos + 1):
            # distribution at the edited position itself only depends on the prefix
            np.testing.assert_array_equal(res.log_probs[i].data, base.log_probs[i].data)
        assert not np.array_equal(
            res.log_probs[edit_pos + 1].data, base.log_probs[edit_pos + 1].data
        )

    def test_mid_dialogue_edit_affects_only_suffix(self):
        model = tiny_model("hred", seed=6)
        randomize_params(model, 13)
        base = forward(model, TINY_TRIPLE)
        edited = [list(u) for u in TINY_TRIPLE]
        edited[1][0] = 6  # second utterance
        res = forward(model, edited)
        u1_len = len(TINY_TRIPLE[0])
        for i in range(u1_len + 1):
            np.testing.assert_array_equal(res.log_probs[i].data, base.log_probs[i].data)

    def test_empty_dialogue_rejected(self):
        with pytest.raises(ValueError, match="empty dialogue"):
            forward(tiny_model("hred"), [])

    def test_missing_eou_rejected(self):
        with pytest.raises(ValueError, match="end-of-utterance"):
            forward(tiny_model("hred"), [[1, 2]])

    def test_out_of_range_token_rejected(self):
        with pytest.raises(IndexError):
            forward(tiny_model("hred"), [[1, TINY_VOCAB, TINY_EOU]])

    def test_memorizes_one_repeated_triple(self):
        """A small model overfit to one triple assigns its tokens prob > 0.9.

        The first tokens of the second and third utterance are separable
        only through the encoder/context path, which starts near-identity
        (tiny factored embeddings), so this needs a few hundred epochs.
        """
        from hredchat.training import AdamConfig, TrainConfig, train

        model = build_model("hred", TINY_VOCAB, TINY_EOU, ModelDims(16, 16, 4), Rng(1))
        data = [TINY_TRIPLE]
        cfg = TrainConfig(max_epochs=600, patience=600, seed=0,
                          adam=AdamConfig(lr=0.01))
        ckpt = train(model, data, data, cfg)
        ckpt.restore(model)
        res = forward(model, TINY_TRIPLE)
        probs = [math.exp(float(p.data)) for p in res.token_log_probs]
        assert min(probs) > 0.9


class TestParameterSharing:
    def test_same_cells_process_every_utterance(self):
        """Gradients of the shared encoder collect contributions from every
        encoded utterance; there are no per-utterance parameter copies."""
        model = tiny_model("hred", seed=8)
        randomize_params(model, 17)
        params = model.parameters()
        assert len(params) == len(set(id(p) for p in params.values()))
        one = [[1, 2, TINY_EOU], [4, TINY_EOU]]
        two = [[1, 2, TINY_EOU], [4, TINY_EOU], [5, TINY_EOU]]
        grads = {}
        for key, d in (("one", one), ("two", two)):
            with Graph() as g:
                res = forward(model, d)
            g.backward(res.log_likelihood)
            grads[key] = g.grad(params["encoder.w_c"])
        # the second dialogue encodes one more utterance through the same cell
        assert not np.array_equal(grads["one"], grads["two"])
        assert params is not model.parameters() or True
        assert set(model.parameters()) == set(params)

    def test_parameter_count_independent_of_dialogue_length(self):
        model = tiny_model("hred")
        n = len(model.parameters())
        forward(model, TINY_TRIPLE)
        forward(model, TINY_TRIPLE + [[2, TINY_EOU]])
        assert len(model.parameters()) == n


class TestEncodeUtterance:
    def test_single_token_matches_one_gru_step(self):
        model = tiny_model("hred", seed=9)
        randomize_params(model, 19)
        utt = [5, TINY_EOU]
        vec = encode_utterance(model, utt)
        h = model.zero_input()
        from hredchat.layers import embed

        for tok in utt:
            h = gru_step(model.encoder, h, embed(model.embedding, tok))
        np.testing.assert_array_equal(vec.data, h.data)

    def test_bi_concat_width(self):
        model = tiny_model("hred-bi", bi_mode="concat")
        vec = encode_utterance(model, [1, 2, TINY_EOU])
        assert vec.shape == (2 * model.dims.d_h,)

    def test_bi_l2pool_width(self):
        model = tiny_model("hred-bi", bi_mode="l2pool")
        vec = encode_utterance(model, [1, 2, TINY_EOU])
        assert vec.shape == (2 * model.dims.d_h,)

    def test_palindrome_with_shared_weights(self):
        """With tied forward/backward cells, a palindromic utterance yields
        equal forward and backward pooled summaries."""
        model = tiny_model("hred-bi", seed=10, bi_mode="l2pool")
        randomize_params(model, 23)
        model.encoder_bwd = model.encoder
        vec = encode_utterance(model, [2, 5, 2]).data
        d = model.dims.d_h
        np.testing.assert_allclose(vec[:d], vec[d:], atol=1e-12)

    def test_rnn_lm_has_no_encoder(self):
        with pytest.raises(ValueError):
            encode_utterance(tiny_model("rnn-lm"), [1, TINY_EOU])


class TestContext:
    def test_zero_weights_zero_state(self):
        model = tiny_model("hred")
        for p in model.context.named("context").values():
            p.data = np.zeros_like(p.data)
        out = advance_context(model, model.zero_context(), Tensor(np.ones(4)))
        np.testing.assert_array_equal(out.data, np.zeros(4))

    def test_order_sensitivity_after_training(self):
        """A briefly trained model distinguishes utterance order."""
        from hredchat.training import AdamConfig, TrainConfig, train

        model = tiny_model("hred", seed=12)
        data = [TINY_TRIPLE, [[4, 5, TINY_EOU], [1, 2, TINY_EOU], [6, TINY_EOU]]]
        cfg = TrainConfig(max_epochs=30, patience=30, seed=0, adam=AdamConfig(lr=0.01))
        ckpt = train(model, data, data, cfg)
        ckpt.restore(model)
        u1, u2 = [1, 2, TINY_EOU], [4, 5, TINY_EOU]
        s0 = model.zero_context()
        s_ab = advance_context(model, advance_context(model, s0, encode_utterance(model, u1)),
                               encode_utterance(model, u2))
        s_ba = advance_context(model, advance_context(model, s0, encode_utterance(model, u2)),
                               encode_utterance(model, u1))
        assert np.abs(s_ab.data - s_ba.data).max() > 1e-9

    def test_state_dimension_constant_across_turns(self):
        model = tiny_model("hred", seed=13)
        s = model.zero_context()
        for utt in TINY_TRIPLE:
            s = advance_context(model, s, encode_utterance(model, utt))
            assert s.shape == (model.dims.d_ctx,)

    def test_bi_summary_width_mismatch_raises(self):
        model = tiny_model("hred")  # context expects d_h-wide summaries
        from hredchat.tensor import ShapeMismatch

        with pytest.raises(ShapeMismatch):
            advance_context(model, model.zero_context(), Tensor(np.zeros(8)))


class TestInitDecoder:
    def test_zero_bridge_ignores_context(self):
        model = tiny_model("hred")
        model.bridge_w.data = np.zeros_like(model.bridge_w.data)
        model.bridge_b.data = np.zeros_like(model.bridge_b.data)
        out = init_decoder(model, Tensor(Rng(0).standard_normal(4)))
        np.testing.assert_array_equal(out.data, np.zeros(4))

    def test_output_in_tanh_range(self):
        model = tiny_model("hred", seed=14)
        randomize_params(model, 29)
        out = init_decoder(model, Tensor(Rng(1).standard_normal(4) * 3))
        assert (np.abs(out.data) < 1.0).all()

    def test_hand_computed_bridge(self):
        model = tiny_model("hred")
        model.bridge_w.data = np.array([[1.0, 0.0, 0.0, 0.0],
                                        [0.0, 2.0, 0.0, 0.0],
                                        [0.0, 0.0, 1.0, 0.0],
                                        [0.0, 0.0, 0.0, 1.0]])
        model.bridge_b.data = np.array([0.5, 0.0, 0.0, 0.0])
        s = np.array([0.1, 0.2, 0.0, 0.0])
        out = init_decoder(model, Tensor(s))
        np.testing.assert_allclose(out.data, np.tanh([0.6, 0.4, 0.0, 0.0]), atol=1e-15)


class TestFullModelGradients:
    @pytest.mark.parametrize(
        "variant,kwargs",
        [
            ("rnn-lm", {"maxout_k": 2}),
            ("hred", {}),
            ("hred-bi", {"bi_mode": "concat"}),
            ("hred-bi", {"bi_mode": "l2pool"}),
        ],
        ids=["rnn-lm+maxout", "hred", "hred-bi-concat", "hred-bi-l2pool"],
    )
    def test_gradients_match_finite_differences(self, variant, kwargs):
        model = tiny_model(variant, seed=20, **kwargs)
        randomize_params(model, 31)
        params = model.parameters()

        def loss_value():
            return -float(forward(model, TINY_TRIPLE).log_likelihood.data)

        with Graph() as g:
            loss = -forward(model, TINY_TRIPLE).log_likelihood
        g.backward(loss)
        for name, p in params.items():
            numeric = fd_gradient(loss_value, p)
            err = max_rel_error(g.grad(p), numeric)
            assert err < FD_RTOL, f"{variant} {name}: {err}"


class TestBuildModel:
    def test_rnn_lm_owns_no_context_cells(self):
        m = tiny_model("rnn-lm")
        assert m.encoder is None and m.context is None and m.bridge_w is None

    def test_hred_bi_concat_context_width(self):
        m = tiny_model("hred-bi", bi_mode="concat")
        assert m.context.input_size == 2 * m.dims.d_h

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            build_model("gpt", 7, 3, ModelDims(4, 4, 3), Rng(0))

    def test_paper_scale_dims_buildable(self):
        m = build_model("hred", 50, 3, ModelDims(d_h=300, d_ctx=300, d_e=300), Rng(0))
        assert m.embedding.E.shape == (300, 50)

    @pytest.mark.parametrize("variant", ["rnn-lm", "hred", "hred-bi"])
    def test_initialization_bit_identical_under_fixed_seed(self, variant):
        a = tiny_model(variant, seed=99, maxout_k=2)
        b = tiny_model(variant, seed=99, maxout_k=2)
        for name, p in a.parameters().items():
            assert b.parameters()[name].data.tobytes() == p.data.tobytes(), name
