"""The three generative dialogue models: a flat RNN language model over the
concatenated dialogue, the hierarchical encoder/context/decoder model, and
its bidirectional-encoder variant.

All variants factor the dialogue probability autoregressively: every token
is predicted from the strictly preceding tokens of its utterance plus (for
the hierarchical variants) a context state summarizing earlier utterances.
One encoder cell and one decoder cell are shared across all utterances of a
dialogue; there are no per-utterance parameter copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (
    GAUSSIAN_STD,
    EmbeddingLayer,
    GruCell,
    OutputLayer,
    embed,
    gru_step,
    l2_pool,
    logits,
)
from .tensor import Rng, Tensor, concat, gaussian_init, log_softmax, matmul, pick, tanh, zeros

VARIANTS = ("rnn-lm", "hred", "hred-bi")
BI_MODES = ("concat", "l2pool")

Utt = list[int]           # token ids, last one the end-of-utterance id
Dialogue = list[Utt]


@dataclass
class ModelDims:
    d_h: int = 64    # encoder/decoder hidden size
    d_ctx: int = 64  # context hidden size
    d_e: int = 32    # embedding code size


@dataclass
class DialogueModel:
    variant: str
    dims: ModelDims
    vocab_size: int
    eou_id: int
    embedding: EmbeddingLayer
    decoder: GruCell
    output: OutputLayer
    encoder: GruCell | None = None
    encoder_bwd: GruCell | None = None
    context: GruCell | None = None
    bridge_w: Tensor | None = None
    bridge_b: Tensor | None = None
    bi_mode: str = "l2pool"
    # cached constant leaves, shared across graphs
    _zero_x: Tensor = field(default=None, repr=False)
    _zero_ctx: Tensor = field(default=None, repr=False)

    def __post_init__(self):
        if self._zero_x is None:
            self._zero_x = zeros((self.dims.d_h,))
        if self._zero_ctx is None:
            self._zero_ctx = zeros((self.dims.d_ctx,))

    @property
    def hierarchical(self) -> bool:
        return self.variant != "rnn-lm"

    def parameters(self) -> dict[str, Tensor]:
        """Named trainable tensors in a stable order."""
        params = dict(self.embedding.named())
        if self.encoder is not None:
            params.update(self.encoder.named("encoder"))
        if self.encoder_bwd is not None:
            params.update(self.encoder_bwd.named("encoder_bwd"))
        if self.context is not None:
            params.update(self.context.named("context"))
        if self.bridge_w is not None:
            params["bridge.w"] = self.bridge_w
            params["bridge.b"] = self.bridge_b
        params.update(self.decoder.named("decoder"))
        params.update(self.output.named())
        return params

    def zero_context(self) -> Tensor:
        return self._zero_ctx

    def zero_input(self) -> Tensor:
        return self._zero_x


def build_model(
    variant: str,
    vocab_size: int,
    eou_id: int,
    dims: ModelDims,
    rng: Rng,
    maxout_k: int = 0,
    bi_mode: str = "l2pool",
) -> DialogueModel:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    if bi_mode not in BI_MODES:
        raise ValueError(f"unknown bi_mode {bi_mode!r}, expected one of {BI_MODES}")
    emb = EmbeddingLayer.create(dims.d_h, dims.d_e, vocab_size, rng)
    encoder = encoder_bwd = context = None
    bridge_w = bridge_b = None
    if variant != "rnn-lm":
        encoder = GruCell.create(dims.d_h, dims.d_h, rng)
        if variant == "hred-bi":
            encoder_bwd = GruCell.create(dims.d_h, dims.d_h, rng)
            ctx_in = 2 * dims.d_h
        else:
            ctx_in = dims.d_h
        context = GruCell.create(ctx_in, dims.d_ctx, rng)
        bridge_w = gaussian_init((dims.d_h, dims.d_ctx), GAUSSIAN_STD, rng)
        bridge_b = gaussian_init((dims.d_h,), GAUSSIAN_STD, rng)
    decoder = GruCell.create(dims.d_h, dims.d_h, rng)
    output = OutputLayer.create(dims.d_h, vocab_size, rng, maxout_k=maxout_k)
    return DialogueModel(
        variant=variant,
        dims=dims,
        vocab_size=vocab_size,
        eou_id=eou_id,
        embedding=emb,
        decoder=decoder,
        output=output,
        encoder=encoder,
        encoder_bwd=encoder_bwd,
        context=context,
        bridge_w=bridge_w,
        bridge_b=bridge_b,
        bi_mode=bi_mode,
    )


def encode_utterance(model: DialogueModel, utterance: Utt) -> Tensor:
    """Fixed-length summary vector for one utterance.

    Plain hierarchical variant: last forward-GRU state.  Bidirectional:
    forward and backward chains, summarized either by concatenating the two
    final states or by concatenating the L2-pooled chains (per bi_mode);
    either way the summary is 2*d_h wide.
    """
    if not model.hierarchical:
        raise ValueError("encode_utterance: rnn-lm has no utterance encoder")
    if not utterance:
        raise ValueError("encode_utterance: empty utterance")
    h = model.zero_input()
    fwd_states = []
    for tok in utterance:
        h = gru_step(model.encoder, h, embed(model.embedding, tok))
        fwd_states.append(h)
    if model.variant == "hred":
        return fwd_states[-1]
    hb = model.zero_input()
    bwd_states = []
    for tok in reversed(utterance):
        hb = gru_step(model.encoder_bwd, hb, embed(model.embedding, tok))
        bwd_states.append(hb)
    if model.bi_mode == "concat":
        return concat([fwd_states[-1], bwd_states[-1]])
    return concat([l2_pool(fwd_states), l2_pool(bwd_states)])


def advance_context(model: DialogueModel, state: Tensor, utterance_vec: Tensor) -> Tensor:
    """One context-GRU step: fold an utterance summary into the dialogue state."""
    if not model.hierarchical:
        raise ValueError("advance_context: rnn-lm has no context cell")
    return gru_step(model.context, state, utterance_vec)


def init_decoder(model: DialogueModel, context_state: Tensor) -> Tensor:
    """Decoder start state: a learned tanh-affine image of the context state."""
    if not model.hierarchical:
        raise ValueError("init_decoder: rnn-lm has no context bridge")
    return tanh(matmul(model.bridge_w, context_state) + model.bridge_b)


@dataclass
class ForwardResult:
    """Per-position conditional distributions plus the total log-likelihood.

    ``log_probs[i]`` is the full log-distribution used to predict
    ``targets[i]``; ``token_log_probs[i]`` is its realized component, and
    ``log_likelihood`` is their sum (both as graph nodes when recording).
    """

    log_probs: list[Tensor]
    targets: list[int]
    utterance_index: list[int]
    token_log_probs: list[Tensor]
    log_likelihood: Tensor


def _validate_dialogue(model: DialogueModel, dialogue: Dialogue) -> None:
    if not dialogue:
        raise ValueError("forward: empty dialogue")
    for m, utt in enumerate(dialogue):
        if not utt:
            raise ValueError(f"forward: utterance {m} is empty")
        if utt[-1] != model.eou_id:
            raise ValueError(f"forward: utterance {m} missing end-of-utterance token")
        for tok in utt:
            if not 0 <= tok < model.vocab_size:
                raise IndexError(f"forward: token id {tok} out of range")


def forward(model: DialogueModel, dialogue: Dialogue) -> ForwardResult:
    """Score a dialogue token by token.

    Each prediction is conditioned only on strictly preceding tokens (and,
    for hierarchical variants, on the context state built from preceding
    utterances); the decoder never sees the encoding of the utterance it is
    generating.  The first position of each decoded utterance consumes a
    zero input vector instead of a previous-token embedding.
    """
    _validate_dialogue(model, dialogue)
    log_probs: list[Tensor] = []
    targets: list[int] = []
    utt_index: list[int] = []
    picks: list[Tensor] = []

    def emit(state: Tensor, target: int, m: int) -> None:
        lp = log_softmax(logits(model.output, state))
        log_probs.append(lp)
        targets.append(target)
        utt_index.append(m)
        picks.append(pick(lp, target))

    if model.variant == "rnn-lm":
        h = model.zero_input()
        prev: int | None = None
        for m, utt in enumerate(dialogue):
            for tok in utt:
                x = model.zero_input() if prev is None else embed(model.embedding, prev)
                h = gru_step(model.decoder, h, x)
                emit(h, tok, m)
                prev = tok
    else:
        s = model.zero_context()
        last = len(dialogue) - 1
        for m, utt in enumerate(dialogue):
            d = init_decoder(model, s)
            prev = None
            for tok in utt:
                x = model.zero_input() if prev is None else embed(model.embedding, prev)
                d = gru_step(model.decoder, d, x)
                emit(d, tok, m)
                prev = tok
            if m != last:
                s = advance_context(model, s, encode_utterance(model, utt))

    total = picks[0]
    for p in picks[1:]:
        total = total + p
    return ForwardResult(
        log_probs=log_probs,
        targets=targets,
        utterance_index=utt_index,
        token_log_probs=picks,
        log_likelihood=total,
    )


def log_likelihood(model: DialogueModel, dialogue: Dialogue) -> float:
    return float(forward(model, dialogue).log_likelihood.data)
