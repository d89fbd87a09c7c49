"""Optimization: Adam, early stopping with patience, and the two
bootstrapping regimes (staged word-embedding loading and pretrain-then-
finetune on a question-answer corpus).

Training is deterministic given the seed: the example order of epoch e is
drawn from an independent child stream (seed, e), so resuming from a
checkpoint at an epoch boundary replays exactly the run that produced it.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .corpus import Vocabulary, truncate_utterances
from .layers import load_word_vectors
from .models import DialogueModel, Dialogue, forward
from .tensor import Graph, NonFiniteInput, Rng, Tensor

log = logging.getLogger(__name__)


class NonFiniteGradient(RuntimeError):
    """Raised by adam_step when a parameter's gradient is NaN or infinite."""

    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.param = name


@dataclass
class AdamConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    """Per-parameter first/second moments and the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros(p.shape) for k, p in params.items()},
            v={k: np.zeros(p.shape) for k, p in params.items()},
        )

    def snapshot(self) -> "AdamState":
        return AdamState(
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
            t=self.t,
        )


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: AdamConfig,
    freeze: frozenset[str] = frozenset(),
    freeze_embedding_cols: frozenset[int] = frozenset(),
) -> None:
    """One bias-corrected Adam update, in place on the parameter tensors.

    Fully frozen parameters are skipped; frozen embedding columns have their
    gradient zeroed before the moment update, which keeps moments at exactly
    zero there, so the columns never move by even one ulp.
    """
    for name in params:
        g = grads.get(name)
        if g is not None and name not in freeze and not np.isfinite(g).all():
            raise NonFiniteGradient(name)  # before any parameter moves
    state.t += 1
    t = state.t
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    col_list = sorted(freeze_embedding_cols)
    for name, p in params.items():
        if name in freeze:
            continue
        g = grads.get(name)
        if g is None:
            g = np.zeros(p.shape)
        if col_list and name == "embedding.E":
            g = g.copy()
            g[:, col_list] = 0.0
        m = state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        p.data = p.data - cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


@dataclass
class TrainConfig:
    max_epochs: int = 100
    patience: int = 5            # non-improving validations tolerated
    validate_every: int = 1      # epochs between validation passes
    truncate_limit: int = 80
    seed: int = 0
    adam: AdamConfig = field(default_factory=AdamConfig)
    freeze: frozenset[str] = frozenset()
    freeze_embedding_cols: frozenset[int] = frozenset()
    clip_norm: float | None = None
    shuffle: bool = True
    log_path: str | None = None

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.validate_every < 1:
            raise ValueError("validate_every must be >= 1")


@dataclass
class Checkpoint:
    """Everything needed to reproduce or resume a training run."""

    params: dict[str, np.ndarray]
    adam: AdamState
    epoch: int
    step: int
    best_valid_ppl: float
    config: TrainConfig

    @classmethod
    def capture(cls, model: DialogueModel, state: AdamState, epoch: int, step: int,
                best: float, config: TrainConfig) -> "Checkpoint":
        return cls(
            params={k: p.data.copy() for k, p in model.parameters().items()},
            adam=state.snapshot(),
            epoch=epoch,
            step=step,
            best_valid_ppl=best,
            config=config,
        )

    def restore(self, model: DialogueModel) -> None:
        params = model.parameters()
        if set(params) != set(self.params):
            raise ValueError("checkpoint parameter names do not match the model")
        for k, p in params.items():
            p.data = self.params[k].copy()


def _dataset_perplexity(model: DialogueModel, dataset: Sequence[Dialogue]) -> float:
    total = 0.0
    n_w = 0
    for d in dataset:
        res = forward(model, d)
        total += float(res.log_likelihood.data)
        n_w += len(res.targets)
    try:
        return math.exp(-total / n_w)
    except OverflowError:
        return math.inf  # diverged far enough to overflow exp; never improves


def train(
    model: DialogueModel,
    train_set: Sequence[Dialogue],
    valid_set: Sequence[Dialogue],
    config: TrainConfig,
    resume: Checkpoint | None = None,
) -> Checkpoint:
    """Minimize dialogue negative log-likelihood with per-example Adam steps.

    Validation perplexity is measured every ``validate_every`` epochs; after
    ``patience`` consecutive non-improving measurements training stops and
    the checkpoint with the *best* validation perplexity is returned, not
    the last one.  A NaN validation perplexity or a non-finite gradient
    aborts the run with the last good checkpoint.

    ``resume`` continues a run from an epoch boundary; given the same seed
    and data the continuation is step-identical to an uninterrupted run.
    ``config.max_epochs`` counts total epochs including resumed ones.
    """
    if not train_set:
        raise ValueError("train: empty training set")
    if not valid_set:
        raise ValueError("train: empty validation set")
    params = model.parameters()
    rng = Rng(config.seed)
    data = [
        truncate_utterances([list(u) for u in d], config.truncate_limit)
        for d in train_set
    ]

    if resume is not None:
        resume.restore(model)
        state = resume.adam.snapshot()
        start_epoch = resume.epoch
        step = resume.step
        best_ppl = resume.best_valid_ppl
        best: Checkpoint | None = resume  # incumbent if nothing improves
    else:
        state = AdamState.for_params(params)
        start_epoch = 0
        step = 0
        best_ppl = math.inf
        best = None
    bad = 0
    epochs_done = start_epoch
    log_file = open(config.log_path, "a", encoding="utf-8") if config.log_path else None

    def current() -> Checkpoint:
        return Checkpoint.capture(model, state, epochs_done, step, best_ppl, config)

    try:
        for epoch in range(start_epoch, config.max_epochs):
            order = rng.child(epoch).permutation(len(data)) if config.shuffle else range(len(data))
            epoch_nll = 0.0
            epoch_tokens = 0
            for i in order:
                try:
                    with Graph() as g:
                        res = forward(model, data[i])
                        loss = -res.log_likelihood
                    g.backward(loss)
                    grads = {k: g.grad(p) for k, p in params.items()}
                    if config.clip_norm is not None:
                        grads = clip_gradients(grads, config.clip_norm)
                    adam_step(params, grads, state, config.adam,
                              config.freeze, config.freeze_embedding_cols)
                except (NonFiniteGradient, NonFiniteInput) as e:
                    log.warning("aborting training: %s", e)
                    return best if best is not None else current()
                epoch_nll += float(loss.data)
                epoch_tokens += len(res.targets)
                step += 1
            epochs_done = epoch + 1

            if epochs_done % config.validate_every:
                continue
            try:
                valid_ppl = _dataset_perplexity(model, valid_set)
            except NonFiniteInput:
                valid_ppl = math.nan
            if log_file:
                train_nll = epoch_nll / max(epoch_tokens, 1)
                log_file.write(f"{step}\t{train_nll:.6f}\t{valid_ppl:.6f}\n")
                log_file.flush()
            if math.isnan(valid_ppl):
                log.warning("aborting training: validation perplexity is NaN")
                return best if best is not None else current()
            if valid_ppl < best_ppl:
                best_ppl = valid_ppl
                best = Checkpoint.capture(model, state, epochs_done, step, best_ppl, config)
                bad = 0
            else:
                bad += 1
                if bad >= config.patience:
                    break
    finally:
        if log_file:
            log_file.close()
    return best if best is not None else current()


# --------------------------------------------------------------------------
# Bootstrapping
# --------------------------------------------------------------------------

@dataclass
class BootstrapPlan:
    """Two-stage schedule for externally initialized word embeddings."""

    stage1: TrainConfig  # loaded embedding columns frozen
    stage2: TrainConfig  # everything trainable
    covered_ids: frozenset[int]
    missing: int         # vocabulary tokens without an external vector


def bootstrap_embeddings(
    model: DialogueModel,
    vocab: Vocabulary,
    path,
    base_config: TrainConfig,
) -> BootstrapPlan:
    """Load external word vectors into E and stage the training schedule.

    Covered tokens get their column of E overwritten with the file vector;
    uncovered tokens (special tokens included) keep their Gaussian
    initialization and train normally in both stages.  Stage one freezes
    exactly the covered columns; stage two unfreezes everything.
    """
    if len(vocab) != model.vocab_size:
        raise ValueError(
            f"vocabulary has {len(vocab)} tokens but the model expects {model.vocab_size}"
        )
    vectors = load_word_vectors(path)
    d_e = model.dims.d_e
    covered = []
    e = model.embedding.E.data.copy()
    for tok, idx in vocab.token_to_id.items():
        vec = vectors.get(tok)
        if vec is None:
            continue
        if vec.shape != (d_e,):
            raise ValueError(
                f"embedding file dimension {vec.shape[0]} does not match d_e={d_e}"
            )
        e[:, idx] = vec
        covered.append(idx)
    model.embedding.E.data = e
    if not covered:
        warnings.warn("embedding file covers no vocabulary tokens", stacklevel=2)
    stage1 = replace(base_config, freeze_embedding_cols=frozenset(covered))
    stage2 = replace(base_config, freeze_embedding_cols=frozenset())
    return BootstrapPlan(stage1, stage2, frozenset(covered), len(vocab) - len(covered))


def pretrain_finetune(
    model: DialogueModel,
    qa_corpus: Sequence[Dialogue],
    target_train: Sequence[Dialogue],
    target_valid: Sequence[Dialogue],
    config: TrainConfig,
    pretrain_epochs: int = 4,
) -> Checkpoint:
    """Pretrain every parameter on two-turn dialogues, then fine-tune on the
    target dialogues with the embedding table frozen.

    The pretraining phase runs a fixed epoch budget (no early stopping);
    vocabularies must be shared, which the joint preprocessing guarantees.
    """
    if not qa_corpus:
        raise ValueError("pretrain_finetune: empty pretraining corpus")
    # validate_every beyond the budget: the pretraining phase runs its fixed
    # epoch count and hands its final state to fine-tuning
    pre_cfg = replace(
        config,
        max_epochs=pretrain_epochs,
        validate_every=pretrain_epochs + 1,
        freeze=frozenset(),
        freeze_embedding_cols=frozenset(),
    )
    pre_ckpt = train(model, qa_corpus, target_valid, pre_cfg)
    pre_ckpt.restore(model)
    fine_cfg = replace(config, freeze=config.freeze | {"embedding.E"})
    return train(model, target_train, target_valid, fine_cfg)
