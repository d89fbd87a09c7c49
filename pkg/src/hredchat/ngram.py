"""Smoothed n-gram language models over concatenated dialogues.

Four methods: fixed-mass Katz-style backoff, Witten-Bell, absolute
discounting with count-of-counts discounts, and interpolated modified
Kneser-Ney with three discounts.  All four produce, for every context, a
distribution that sums to one exactly (up to float error) and assigns
strictly positive probability to every in-vocabulary token; recursion
bottoms out at the uniform distribution so perplexity is always finite.

Each dialogue contributes one token stream (its utterances concatenated,
speech-act tokens included); contexts never cross dialogue boundaries, and
positions near the stream start simply use shorter contexts.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

METHODS = ("backoff", "witten-bell", "absolute", "modified-kn")

#: Fixed discounted mass for the plain backoff model.
BACKOFF_BETA = 0.4

#: Lower clamp for estimated discounts.  Chen-Goodman count-of-count
#: formulas can degenerate to zero or below on tiny corpora, which would
#: zero out backoff mass and break strict positivity; any value in (0, 1)
#: keeps normalization exact.
MIN_DISCOUNT = 1e-3

Ctx = tuple[int, ...]
Stream = list[int]


@dataclass
class CountTable:
    """Exact n-gram counts, one dict per context length 0..order-1."""

    order: int
    counts: list[dict[Ctx, dict[int, int]]] = field(default_factory=list)

    @classmethod
    def from_streams(cls, streams: Iterable[Sequence[int]], order: int) -> "CountTable":
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        counts: list[dict[Ctx, dict[int, int]]] = [
            defaultdict(Counter) for _ in range(order)
        ]
        for stream in streams:
            n = len(stream)
            for c in range(order):
                level = counts[c]
                for i in range(c, n):
                    level[tuple(stream[i - c:i])][stream[i]] += 1
        return cls(order, [dict(level) for level in counts])

    def successors(self, context: Ctx) -> dict[int, int] | None:
        if len(context) >= self.order:
            raise ValueError(f"context of length {len(context)} too long for order {self.order}")
        return self.counts[len(context)].get(context)


def dialogue_stream(dialogue: Sequence[Sequence[int]]) -> Stream:
    out: Stream = []
    for utt in dialogue:
        out.extend(utt)
    return out


def mle(table: CountTable, context: Sequence[int], token: int) -> float:
    """Unsmoothed maximum-likelihood estimate; 0 for unseen contexts.

    The building block every smoother discounts; exposed for diagnostics
    and as the plain sub-case in tests.
    """
    succ = table.successors(tuple(context))
    if not succ:
        return 0.0
    return succ.get(token, 0) / sum(succ.values())


def count(dialogues: Iterable[Sequence[Sequence[int]]], order: int) -> CountTable:
    return CountTable.from_streams((dialogue_stream(d) for d in dialogues), order)


def _continuation_counts(table: CountTable) -> list[dict[Ctx, dict[int, int]]]:
    """Distinct-left-extension counts for context lengths 0..order-2.

    cont[c][ctx][w] = number of distinct x such that the (c+2)-gram
    x . ctx . w was observed.  Derived level by level from the raw counts.
    """
    cont: list[dict[Ctx, dict[int, int]]] = [defaultdict(Counter) for _ in range(max(table.order - 1, 0))]
    for c in range(1, table.order):
        target = cont[c - 1]
        for ctx, succ in table.counts[c].items():
            shorter = ctx[1:]
            for w in succ:
                target[shorter][w] += 1
    return [dict(level) for level in cont]


def _count_of_counts(levels: Sequence[dict[Ctx, dict[int, int]]]) -> list[Counter]:
    out = []
    for level in levels:
        coc: Counter = Counter()
        for succ in level.values():
            for c in succ.values():
                if c <= 4:
                    coc[c] += 1
        out.append(coc)
    return out


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


class NgramModel:
    """One trained smoothing model.  Immutable after construction."""

    def __init__(self, method: str, order: int, vocab_size: int, table: CountTable):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")
        if not 1 <= order <= 5:
            raise ValueError(f"order must be in 1..5, got {order}")
        if vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        if table.order != order:
            raise ValueError("count table order does not match model order")
        if not table.counts[0]:
            raise ValueError("model has no counts; train on a non-empty corpus")
        self.method = method
        self.order = order
        self.vocab_size = vocab_size
        self.table = table
        self.cont = _continuation_counts(table) if method == "modified-kn" else []
        if method == "absolute":
            self.discount = [self._abs_discount(c) for c in range(order)]
        elif method == "modified-kn":
            self.kn_discounts = [self._kn_discounts(c) for c in range(order)]

    # -- discount estimation ------------------------------------------------

    def _level_counts(self, c: int) -> dict[Ctx, dict[int, int]]:
        """Counts the model actually uses at context length c: raw at the
        highest level, continuation counts below (modified-kn only)."""
        if self.method == "modified-kn" and c < self.order - 1:
            return self.cont[c]
        return self.table.counts[c]

    def _abs_discount(self, c: int) -> float:
        coc = _count_of_counts([self.table.counts[c]])[0]
        n1, n2 = coc[1], coc[2]
        if n1 == 0:
            return 0.5
        return _clamp(n1 / (n1 + 2.0 * n2), MIN_DISCOUNT, 1.0)

    def _kn_discounts(self, c: int) -> tuple[float, float, float]:
        coc = _count_of_counts([self._level_counts(c)])[0]
        n1, n2, n3, n4 = coc[1], coc[2], coc[3], coc[4]
        y = n1 / (n1 + 2.0 * n2) if n1 > 0 else 0.5
        d1 = 1.0 - 2.0 * y * n2 / n1 if n1 > 0 else 0.5
        d2 = 2.0 - 3.0 * y * n3 / n2 if n2 > 0 else 1.0
        d3 = 3.0 - 4.0 * y * n4 / n3 if n3 > 0 else 1.5
        return (
            _clamp(d1, MIN_DISCOUNT, 1.0),
            _clamp(d2, MIN_DISCOUNT, 2.0),
            _clamp(d3, MIN_DISCOUNT, 3.0),
        )

    # -- probabilities ------------------------------------------------------

    def prob(self, context: Sequence[int], token: int) -> float:
        """Smoothed P(token | context); context must be shorter than order."""
        context = tuple(context)
        if len(context) >= self.order:
            raise ValueError(
                f"context length {len(context)} must be < order {self.order}"
            )
        if not 0 <= token < self.vocab_size:
            raise ValueError(f"token {token} outside vocabulary of size {self.vocab_size}")
        return self._p(context, token)

    def _p(self, ctx: Ctx, w: int) -> float:
        if self.method == "backoff":
            return self._p_backoff(ctx, w)
        if self.method == "witten-bell":
            return self._p_wb(ctx, w)
        if self.method == "absolute":
            return self._p_abs(ctx, w)
        return self._p_kn(ctx, w)

    def _backoff_dist(self, ctx: Ctx, w: int, kind) -> float:
        if len(ctx) == 0:
            return 1.0 / self.vocab_size
        return kind(ctx[1:], w)

    def _p_backoff(self, ctx: Ctx, w: int) -> float:
        succ = self.table.counts[len(ctx)].get(ctx)
        if not succ:
            return self._backoff_dist(ctx, w, self._p_backoff)
        n = sum(succ.values())
        if len(succ) == self.vocab_size:
            # every token observed after this context: nothing to redistribute
            return succ[w] / n
        if w in succ:
            return (1.0 - BACKOFF_BETA) * succ[w] / n
        # share the reserved mass among unseen tokens, proportionally to the
        # shorter-context model, renormalized over the unseen set
        lower = self._backoff_dist(ctx, w, self._p_backoff)
        seen_lower = sum(self._backoff_dist(ctx, v, self._p_backoff) for v in succ)
        return BACKOFF_BETA * lower / (1.0 - seen_lower)

    def _p_wb(self, ctx: Ctx, w: int) -> float:
        succ = self.table.counts[len(ctx)].get(ctx)
        back = self._backoff_dist(ctx, w, self._p_wb)
        if not succ:
            return back
        n = sum(succ.values())
        t = len(succ)
        return (succ.get(w, 0) + t * back) / (n + t)

    def _p_abs(self, ctx: Ctx, w: int) -> float:
        succ = self.table.counts[len(ctx)].get(ctx)
        back = self._backoff_dist(ctx, w, self._p_abs)
        if not succ:
            return back
        n = sum(succ.values())
        t = len(succ)
        d = self.discount[len(ctx)]
        return max(succ.get(w, 0) - d, 0.0) / n + (d * t / n) * back

    def _p_kn(self, ctx: Ctx, w: int) -> float:
        succ = self._level_counts(len(ctx)).get(ctx)
        back = self._backoff_dist(ctx, w, self._p_kn)
        if not succ:
            return back
        n = sum(succ.values())
        d1, d2, d3 = self.kn_discounts[len(ctx)]

        def disc(c: int) -> float:
            return d1 if c == 1 else (d2 if c == 2 else d3)

        n1 = n2 = n3 = 0
        for c in succ.values():
            if c == 1:
                n1 += 1
            elif c == 2:
                n2 += 1
            else:
                n3 += 1
        gamma = (d1 * n1 + d2 * n2 + d3 * n3) / n
        cw = succ.get(w, 0)
        top = max(cw - disc(cw), 0.0) / n if cw else 0.0
        return top + gamma * back


def train_ngram(
    dialogues: Sequence[Sequence[Sequence[int]]],
    order: int,
    method: str,
    vocab_size: int,
) -> NgramModel:
    return NgramModel(method, order, vocab_size, count(dialogues, order))


def ngram_perplexity(model: NgramModel, dialogues: Sequence[Sequence[Sequence[int]]],
                     scope: str = "full") -> float:
    """Word perplexity: exp of the negative mean per-token log probability.

    scope "full" covers every token; scope "u3" counts only third-utterance
    tokens while still conditioning on the preceding stream.
    """
    if scope not in ("full", "u3"):
        raise ValueError(f"scope must be 'full' or 'u3', got {scope!r}")
    if not dialogues:
        raise ValueError("ngram_perplexity: empty dataset")
    total = 0.0
    n_w = 0
    span = model.order - 1
    for d in dialogues:
        stream: Stream = []
        owners: list[int] = []
        for m, utt in enumerate(d):
            stream.extend(utt)
            owners.extend([m] * len(utt))
        for i, w in enumerate(stream):
            if scope == "u3" and owners[i] != 2:
                continue
            ctx = tuple(stream[max(0, i - span):i])
            total += math.log(model.prob(ctx, w))
            n_w += 1
    if n_w == 0:
        raise ValueError(f"ngram_perplexity: scope {scope!r} selected no tokens")
    return math.exp(-total / n_w)


# --------------------------------------------------------------------------
# Serialization: versioned text, counts only (everything else re-derives)
# --------------------------------------------------------------------------

_FORMAT = "ngramlm"
_VERSION = 1


def save_ngram(model: NgramModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{_FORMAT}\t{_VERSION}\n")
        params = json.dumps({"vocab_size": model.vocab_size}, sort_keys=True)
        f.write(f"{model.order}\t{model.method}\t{params}\n")
        for c in range(model.order):
            for ctx in sorted(model.table.counts[c]):
                succ = model.table.counts[c][ctx]
                for w in sorted(succ):
                    parts = [str(t) for t in ctx] + [str(w), str(succ[w])]
                    f.write(" ".join(parts) + "\n")


def load_ngram(path) -> NgramModel:
    with open(path, encoding="utf-8") as f:
        head = f.readline().rstrip("\n").split("\t")
        if len(head) != 2 or head[0] != _FORMAT:
            raise ValueError(f"{path}: not an n-gram model file")
        if int(head[1]) != _VERSION:
            raise ValueError(f"{path}: unsupported format version {head[1]}")
        order_s, method, params_s = f.readline().rstrip("\n").split("\t")
        order = int(order_s)
        params = json.loads(params_s)
        counts: list[dict[Ctx, dict[int, int]]] = [defaultdict(dict) for _ in range(order)]
        for ln, line in enumerate(f):
            parts = [int(p) for p in line.split()]
            if len(parts) < 2:
                raise ValueError(f"{path}:{ln + 3}: malformed n-gram line")
            *ctx, w, c = parts
            counts[len(ctx)][tuple(ctx)][w] = c
    table = CountTable(order, [dict(level) for level in counts])
    return NgramModel(method, order, params["vocab_size"], table)
