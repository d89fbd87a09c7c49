"""Evaluation metrics and decoders.

Metrics: word perplexity (exp of the negative mean per-token log
probability) and word classification error (teacher-forced argmax
mismatches over total tokens), each over the full dialogue or restricted to
the third utterance while still conditioning on the first two.

Decoders: beam-search MAP approximation and temperature-scaled ancestral
sampling, both driven by the same incremental decode-state helpers so every
model variant decodes through one code path.  Beam scores carry no length
normalization: short generic outputs are a property of the objective, and
we keep it observable rather than patch it (an optional length penalty is
available as an explicitly flagged extension).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .layers import embed, gru_step, logits
from .models import (
    Dialogue,
    DialogueModel,
    ForwardResult,
    Utt,
    advance_context,
    encode_utterance,
    forward,
    init_decoder,
)
from .tensor import Rng, Tensor, log_softmax

DEFAULT_MAX_LEN = 40  # half the default 80-token dialogue budget


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------

def _in_scope(utt_index: int, scope: str) -> bool:
    if scope == "full":
        return True
    if scope == "u3":
        return utt_index == 2
    raise ValueError(f"scope must be 'full' or 'u3', got {scope!r}")


def perplexity(model: DialogueModel, dataset: Sequence[Dialogue], scope: str = "full") -> float:
    """Eq.-style word perplexity over a dataset; speech-act tokens count."""
    if not dataset:
        raise ValueError("perplexity: empty dataset")
    total = 0.0
    n_w = 0
    for d in dataset:
        res = forward(model, d)
        for lp, m in zip(res.token_log_probs, res.utterance_index):
            if _in_scope(m, scope):
                total += float(lp.data)
                n_w += 1
    if n_w == 0:
        raise ValueError(f"perplexity: scope {scope!r} selected no tokens")
    return math.exp(-total / n_w)


def word_error_rate(model: DialogueModel, dataset: Sequence[Dialogue], scope: str = "full") -> float:
    """Teacher-forced argmax error; ties break toward the lowest token id.

    Free-running predictions are never used: both the word and its position
    must match under the true prefix.
    """
    if not dataset:
        raise ValueError("word_error_rate: empty dataset")
    wrong = 0
    n_w = 0
    for d in dataset:
        res = forward(model, d)
        for lp, target, m in zip(res.log_probs, res.targets, res.utterance_index):
            if _in_scope(m, scope):
                if int(np.argmax(lp.data)) != target:
                    wrong += 1
                n_w += 1
    if n_w == 0:
        raise ValueError(f"word_error_rate: scope {scope!r} selected no tokens")
    return wrong / n_w


@dataclass(frozen=True)
class EvalReport:
    """One evaluation record; names are the wire format."""

    ppl: float
    ppl_u3: float
    wer: float
    wer_u3: float
    n: int
    n_w: int
    n_w_u3: int

    def to_record(self) -> dict:
        return {
            "ppl": self.ppl,
            "ppl_u3": self.ppl_u3,
            "wer": self.wer,
            "wer_u3": self.wer_u3,
            "n": self.n,
            "n_w": self.n_w,
            "n_w_u3": self.n_w_u3,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)

    def table(self, label: str = "model") -> str:
        head = f"{'Model':<24} {'Perplexity':>12} {'Perplexity@U3':>14} {'Error-Rate':>12} {'Error-Rate@U3':>14}"
        row = (
            f"{label:<24} {self.ppl:>12.2f} {self.ppl_u3:>14.2f} "
            f"{self.wer * 100:>11.2f}% {self.wer_u3 * 100:>13.2f}%"
        )
        return head + "\n" + row


def evaluate(model: DialogueModel, dataset: Sequence[Dialogue]) -> EvalReport:
    """All four metrics in one pass over the dataset."""
    if not dataset:
        raise ValueError("evaluate: empty dataset")
    total = {"full": 0.0, "u3": 0.0}
    wrong = {"full": 0, "u3": 0}
    n_w = {"full": 0, "u3": 0}
    for d in dataset:
        res = forward(model, d)
        for lp_vec, lp, target, m in zip(
            res.log_probs, res.token_log_probs, res.targets, res.utterance_index
        ):
            miss = int(np.argmax(lp_vec.data)) != target
            for scope in ("full", "u3"):
                if _in_scope(m, scope):
                    total[scope] += float(lp.data)
                    wrong[scope] += miss
                    n_w[scope] += 1
    if n_w["u3"] == 0:
        raise ValueError("evaluate: dataset has no third utterances")
    return EvalReport(
        ppl=math.exp(-total["full"] / n_w["full"]),
        ppl_u3=math.exp(-total["u3"] / n_w["u3"]),
        wer=wrong["full"] / n_w["full"],
        wer_u3=wrong["u3"] / n_w["u3"],
        n=len(dataset),
        n_w=n_w["full"],
        n_w_u3=n_w["u3"],
    )


def aggregate_reports(reports: Sequence[EvalReport]) -> dict:
    """Mean and standard deviation per metric across seeds."""
    if not reports:
        raise ValueError("aggregate_reports: no reports")
    out = {}
    for key in ("ppl", "ppl_u3", "wer", "wer_u3"):
        values = np.array([getattr(r, key) for r in reports])
        out[key] = {"mean": float(values.mean()), "std": float(values.std())}
    return out


# --------------------------------------------------------------------------
# Incremental decoding
# --------------------------------------------------------------------------

@dataclass
class DecodeState:
    """Recurrent state plus the id the next step must consume.

    ``prev`` is None exactly when the next step should consume the zero
    input vector (start of a decoded utterance in the hierarchical models).
    """

    h: Tensor
    prev: int | None


def _validate_context(model: DialogueModel, context: Sequence[Utt]) -> None:
    if not context:
        raise ValueError("decode: empty context")
    for utt in context:
        if not utt or utt[-1] != model.eou_id:
            raise ValueError("decode: every context utterance must end with </s>")
        for tok in utt:
            if not 0 <= tok < model.vocab_size:
                raise IndexError(f"decode: token id {tok} out of range")


def init_decode_state(model: DialogueModel, context: Sequence[Utt]) -> DecodeState:
    """Decoder state conditioned on the context utterances.

    Hierarchical variants fold each context utterance through the encoder
    and context cells, then bridge into the decoder.  The flat LM replays
    the concatenated history, so generation continues the single stream.
    """
    _validate_context(model, context)
    if model.hierarchical:
        s = model.zero_context()
        for utt in context:
            s = advance_context(model, s, encode_utterance(model, utt))
        return DecodeState(h=init_decoder(model, s), prev=None)
    h = model.zero_input()
    prev: int | None = None
    for utt in context:
        for tok in utt:
            x = model.zero_input() if prev is None else embed(model.embedding, prev)
            h = gru_step(model.decoder, h, x)
            prev = tok
    return DecodeState(h=h, prev=prev)


def decode_step(model: DialogueModel, state: DecodeState) -> tuple[Tensor, np.ndarray]:
    """Advance one position: returns the new recurrent state and the log
    distribution over the next token."""
    x = model.zero_input() if state.prev is None else embed(model.embedding, state.prev)
    h = gru_step(model.decoder, h_prev=state.h, x=x)
    lp = log_softmax(logits(model.output, h))
    return h, lp.data


@dataclass(frozen=True)
class Hypothesis:
    """A (partial) decoded utterance with its accumulated log probability."""

    tokens: tuple[int, ...]
    log_prob: float
    finished: bool


def beam_search(
    model: DialogueModel,
    context: Sequence[Utt],
    width: int,
    max_len: int = DEFAULT_MAX_LEN,
    length_penalty: float = 0.0,
) -> Hypothesis:
    """Approximate MAP next utterance given the context.

    Standard beam: every live hypothesis expands over the whole vocabulary,
    finished hypotheses persist as candidates, and the top ``width`` by
    score survive each step.  Hypotheses finish at </s>; at ``max_len`` the
    terminator is forced (its log probability still counts, so re-scoring
    the returned tokens reproduces the returned score exactly).  Width 1 is
    greedy decoding.  ``length_penalty`` > 0 divides scores by
    len(tokens)**penalty for ranking only; the default 0 reports the raw
    objective.
    """
    if width < 1:
        raise ValueError(f"beam width must be >= 1, got {width}")
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    eou = model.eou_id
    start = init_decode_state(model, context)
    beams: list[tuple[Hypothesis, DecodeState | None]] = [
        (Hypothesis((), 0.0, False), start)
    ]

    def rank(h: Hypothesis) -> tuple:
        score = h.log_prob
        if length_penalty > 0.0 and h.tokens:
            score = score / (len(h.tokens) ** length_penalty)
        return (-score, h.tokens)

    for t in range(1, max_len + 1):
        candidates: list[tuple[Hypothesis, DecodeState | None]] = []
        any_live = False
        for hyp, state in beams:
            if hyp.finished:
                candidates.append((hyp, None))
                continue
            any_live = True
            h_new, lp = decode_step(model, state)
            if t == max_len:
                token_range = (eou,)  # force-finish at the length cap
            else:
                token_range = range(model.vocab_size)
            for v in token_range:
                new = Hypothesis(hyp.tokens + (v,), hyp.log_prob + float(lp[v]), v == eou)
                candidates.append(
                    (new, None if new.finished else DecodeState(h=h_new, prev=v))
                )
        if not any_live:
            break
        candidates.sort(key=lambda pair: rank(pair[0]))
        beams = candidates[:width]
    best = beams[0][0]
    assert best.finished
    return best


def sample(
    model: DialogueModel,
    context: Sequence[Utt],
    temperature: float,
    rng: Rng,
    max_len: int = DEFAULT_MAX_LEN,
) -> Hypothesis:
    """Ancestral sampling from the temperature-scaled conditionals.

    The reported log probability is always under the untempered model, so
    the result re-scores exactly via forward().  At the length cap the
    terminator is forced, as in beam search.  Temperature -> 0 approaches
    greedy decoding.
    """
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    eou = model.eou_id
    state = init_decode_state(model, context)
    tokens: list[int] = []
    total = 0.0
    for t in range(1, max_len + 1):
        h_new, lp = decode_step(model, state)
        if t == max_len:
            v = eou
        else:
            scaled = lp / temperature
            scaled -= scaled.max()
            p = np.exp(scaled)
            p /= p.sum()
            v = rng.categorical(p)
        tokens.append(v)
        total += float(lp[v])
        if v == eou:
            break
        state = DecodeState(h=h_new, prev=v)
    return Hypothesis(tuple(tokens), total, True)


def rescore(model: DialogueModel, context: Sequence[Utt], response: Sequence[int]) -> float:
    """Log probability of ``response`` as the next utterance after ``context``,
    computed through forward() rather than the incremental decoder."""
    res: ForwardResult = forward(model, [list(u) for u in context] + [list(response)])
    m = len(context)
    return sum(
        float(lp.data)
        for lp, idx in zip(res.token_log_probs, res.utterance_index)
        if idx == m
    )
