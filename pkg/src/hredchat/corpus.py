"""Dataset construction: tokenization, placeholder substitution, vocabulary
capping, speech-act tokens, triple assembly, Q-A conversion, truncation, and
split statistics.

File formats (all UTF-8 text):
  raw script   one turn per line, ``SPEAKER<TAB>text``; blank line separates
               dialogues; one movie per file, movie name = file stem.
  raw Q-A      one ``Q<TAB>A`` pair per line.
  encoded set  one dialogue per line, utterances joined by a single tab,
               tokens space-separated (surface forms, specials included).
  vocabulary   ``token<TAB>id<TAB>count`` per line, ordered by id.
  gazetteer    one lowercase name per line.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

UNK = "<unk>"
PERSON = "<person>"
NUMBER = "<number>"
EOU = "</s>"
CONT = "<c>"

#: Reserved tokens in id order; always present, exempt from the cap.
RESERVED = (UNK, PERSON, NUMBER, EOU, CONT)

_TOKEN_RE = re.compile(r"[A-Za-z0-9]+|[^\sA-Za-z0-9]")


def tokenize(line: str, gazetteer: frozenset[str] = frozenset()) -> list[str]:
    """Split one raw line into lowercase surface tokens.

    Runs of ASCII letters/digits form word tokens; every other non-space
    character is its own token, which splits punctuation and gives the
    ``don ' t`` apostrophe style.  Pure digit runs become the number
    placeholder.  A word becomes the person placeholder when it is
    capitalized in the source and its lowercase form is in the gazetteer;
    the gazetteer replaces full NER and keeps the pipeline deterministic.
    """
    out = []
    for m in _TOKEN_RE.finditer(line):
        tok = m.group(0)
        if tok.isdigit():
            out.append(NUMBER)
        elif tok[0].isupper() and tok.lower() in gazetteer:
            out.append(PERSON)
        else:
            out.append(tok.lower())
    return out


def detokenize(tokens: Sequence[str]) -> str:
    """Approximate inverse of :func:`tokenize` for display.

    Lossy by design: attaches punctuation to the preceding word and closes
    up apostrophes.
    """
    text = " ".join(tokens)
    text = re.sub(r"\s+([,.!?;:%])", r"\1", text)
    text = re.sub(r"\s+'\s+", r"'", text)
    return text


class Vocabulary:
    """Bijective token<->id map with reserved specials at ids 0..4."""

    def __init__(self, tokens: Sequence[str], counts: dict[str, int]):
        self.id_to_token: list[str] = list(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        for i, tok in enumerate(RESERVED):
            if self.id_to_token[i] != tok:
                raise ValueError(f"reserved token {tok!r} must sit at id {i}")
        self.counts = dict(counts)

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def unk_id(self) -> int:
        return 0

    @property
    def person_id(self) -> int:
        return 1

    @property
    def number_id(self) -> int:
        return 2

    @property
    def eou_id(self) -> int:
        return 3

    @property
    def cont_id(self) -> int:
        return 4

    def encode(self, tokens: Iterable[str]) -> list[int]:
        unk = self.unk_id
        t2i = self.token_to_id
        return [t2i.get(t, unk) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        i2t = self.id_to_token
        return [i2t[i] for i in ids]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for i, tok in enumerate(self.id_to_token):
            h.update(f"{tok}\t{i}\n".encode("utf-8"))
        return h.hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for i, tok in enumerate(self.id_to_token):
                f.write(f"{tok}\t{i}\t{self.counts.get(tok, 0)}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens: list[str] = []
        counts: dict[str, int] = {}
        with open(path, encoding="utf-8") as f:
            for ln, line in enumerate(f):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise ValueError(f"{path}:{ln + 1}: expected token<TAB>id<TAB>count")
                tok, idx, count = parts[0], int(parts[1]), int(parts[2])
                if idx != len(tokens):
                    raise ValueError(f"{path}:{ln + 1}: ids must be dense and ordered")
                tokens.append(tok)
                counts[tok] = count
        return cls(tokens, counts)


def build_vocab(streams: Iterable[Iterable[str]], cap: int = 10000) -> Vocabulary:
    """Keep the ``cap`` most frequent non-reserved tokens.

    Ties at the boundary break lexicographically so the result never depends
    on iteration order.  Reserved tokens do not count against the cap.
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    counts: Counter[str] = Counter()
    for stream in streams:
        counts.update(stream)
    if not counts:
        raise ValueError("build_vocab: empty corpus")
    candidates = [t for t in counts if t not in RESERVED]
    candidates.sort(key=lambda t: (-counts[t], t))
    kept = candidates[:cap]
    return Vocabulary(list(RESERVED) + kept, dict(counts))


# --------------------------------------------------------------------------
# Dialogue assembly
# --------------------------------------------------------------------------

SurfaceUtt = list[str]          # surface tokens, last one EOU
SurfaceDialogue = list[SurfaceUtt]


@dataclass(frozen=True)
class Triple:
    """Three consecutive alternating-speaker utterances from one movie."""

    u1: tuple[str, ...]
    u2: tuple[str, ...]
    u3: tuple[str, ...]
    movie: str = ""

    @property
    def utterances(self) -> tuple[tuple[str, ...], ...]:
        return (self.u1, self.u2, self.u3)

    @property
    def token_count(self) -> int:
        return len(self.u1) + len(self.u2) + len(self.u3)


def merge_turns(
    turns: Sequence[tuple[str, str]], gazetteer: frozenset[str] = frozenset()
) -> list[SurfaceUtt]:
    """Tokenize speaker-tagged turns, joining consecutive lines from one
    speaker with the continued-utterance token.  Appends EOU to each merged
    utterance.  Empty lines contribute nothing (and never leave a dangling
    continuation marker)."""
    merged: list[SurfaceUtt] = []
    speakers: list[str] = []
    for speaker, text in turns:
        tokens = tokenize(text, gazetteer)
        if not tokens:
            continue
        if speakers and speakers[-1] == speaker:
            merged[-1] = merged[-1] + [CONT] + tokens
        else:
            merged.append(list(tokens))
            speakers.append(speaker)
    return [utt + [EOU] for utt in merged]


def make_triples(
    dialogues: Iterable[Sequence[tuple[str, str]]],
    gazetteer: frozenset[str] = frozenset(),
    movie: str = "",
) -> list[Triple]:
    """Sliding windows of three consecutive merged turns.

    Dialogues shorter than three merged turns yield nothing.  Callers split
    movies into train/valid/test *before* calling this, so no window ever
    crosses a movie boundary.
    """
    triples: list[Triple] = []
    for turns in dialogues:
        utts = merge_turns(turns, gazetteer)
        for i in range(len(utts) - 2):
            triples.append(
                Triple(tuple(utts[i]), tuple(utts[i + 1]), tuple(utts[i + 2]), movie=movie)
            )
    return triples


def qa_to_dialogues(
    pairs: Iterable[tuple[str, str]], gazetteer: frozenset[str] = frozenset()
) -> tuple[list[SurfaceDialogue], int]:
    """Two-turn dialogues from raw question/answer pairs.

    Uses the exact tokenization the triple pipeline uses.  Pairs where
    either side tokenizes to nothing are skipped and counted.
    """
    dialogues: list[SurfaceDialogue] = []
    skipped = 0
    for q, a in pairs:
        q_tok = tokenize(q, gazetteer)
        a_tok = tokenize(a, gazetteer)
        if not q_tok or not a_tok:
            skipped += 1
            continue
        dialogues.append([q_tok + [EOU], a_tok + [EOU]])
    return dialogues, skipped


def truncate_utterances(utterances: list[list], limit: int) -> list[list]:
    """Cut a dialogue down to ``limit`` tokens, trimming from the tail of the
    last utterance first, then earlier ones; every terminal token survives."""
    if limit < len(utterances):
        raise ValueError(f"limit {limit} leaves no room for {len(utterances)} terminals")
    total = sum(len(u) for u in utterances)
    excess = total - limit
    if excess <= 0:
        return [list(u) for u in utterances]
    out = [list(u) for u in utterances]
    for i in range(len(out) - 1, -1, -1):
        cut = min(excess, len(out[i]) - 1)  # keep the terminal
        if cut:
            out[i] = out[i][:len(out[i]) - 1 - cut] + [out[i][-1]]
            excess -= cut
        if excess == 0:
            break
    return out


def truncate(triple: Triple, limit: int = 80) -> Triple:
    if limit < 3:
        raise ValueError(f"limit must leave room for three terminals, got {limit}")
    u1, u2, u3 = truncate_utterances([list(triple.u1), list(triple.u2), list(triple.u3)], limit)
    return Triple(tuple(u1), tuple(u2), tuple(u3), movie=triple.movie)


@dataclass(frozen=True)
class SplitStats:
    dialogues: int
    avg_tokens: float
    avg_unk: float
    movies: int | None = None


def stats(split: Sequence[Sequence[Sequence[int]]], vocab: Vocabulary,
          movies: int | None = None) -> SplitStats:
    """Dialogue count, tokens per dialogue, and unknown-token rate.

    Token counts include speech-act tokens, matching how the models and the
    perplexity denominator see the data.
    """
    if not split:
        raise ValueError("stats: empty split")
    unk = vocab.unk_id
    n_tokens = 0
    n_unk = 0
    for dialogue in split:
        for utt in dialogue:
            n_tokens += len(utt)
            n_unk += sum(1 for t in utt if t == unk)
    n = len(split)
    return SplitStats(n, n_tokens / n, n_unk / n, movies)


# --------------------------------------------------------------------------
# File I/O
# --------------------------------------------------------------------------

def parse_script_file(path) -> list[list[tuple[str, str]]]:
    """Dialogues of (speaker, text) turns from one movie script file."""
    dialogues: list[list[tuple[str, str]]] = []
    current: list[tuple[str, str]] = []
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f):
            line = line.rstrip("\n")
            if not line.strip():
                if current:
                    dialogues.append(current)
                    current = []
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{ln + 1}: expected SPEAKER<TAB>text")
            speaker, text = line.split("\t", 1)
            current.append((speaker, text))
    if current:
        dialogues.append(current)
    return dialogues


def parse_qa_file(path) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{ln + 1}: expected Q<TAB>A")
            q, a = line.split("\t", 1)
            pairs.append((q, a))
    return pairs


def load_gazetteer(path) -> frozenset[str]:
    with open(path, encoding="utf-8") as f:
        return frozenset(line.strip().lower() for line in f if line.strip())


def save_encoded(path, dialogues: Iterable[SurfaceDialogue]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in dialogues:
            f.write("\t".join(" ".join(utt) for utt in d) + "\n")


def load_encoded(path, vocab: Vocabulary) -> list[list[list[int]]]:
    """Encoded dialogues as id sequences.

    Files written by the preprocessing pipeline contain only in-vocabulary
    surface forms; any other token signals a vocabulary mismatch and raises.
    """
    out: list[list[list[int]]] = []
    t2i = vocab.token_to_id
    with open(path, encoding="utf-8") as f:
        for ln, line in enumerate(f):
            line = line.rstrip("\n")
            if not line:
                continue
            dialogue = []
            for utt in line.split("\t"):
                ids = []
                for tok in utt.split(" "):
                    if tok not in t2i:
                        raise ValueError(
                            f"{path}:{ln + 1}: token {tok!r} not in vocabulary "
                            "(wrong vocab file?)"
                        )
                    ids.append(t2i[tok])
                dialogue.append(ids)
            out.append(dialogue)
    return out


def split_movies(names: Sequence[str], fractions=(0.8, 0.1, 0.1)) -> tuple[list[str], list[str], list[str]]:
    """Deterministic contiguous train/valid/test split of sorted movie names.

    Movies are split before triples are built, so triples never share a
    movie across splits.  Every split receives at least one movie when there
    are at least three.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    ordered = sorted(names)
    n = len(ordered)
    n_train = round(n * fractions[0])
    n_valid = round(n * fractions[1])
    if n >= 3:
        n_train = min(max(n_train, 1), n - 2)
        n_valid = min(max(n_valid, 1), n - n_train - 1)
    train = ordered[:n_train]
    valid = ordered[n_train:n_train + n_valid]
    test = ordered[n_train + n_valid:]
    return train, valid, test


def encode_to_surface(vocab: Vocabulary, utterances: Sequence[Sequence[str]]) -> SurfaceDialogue:
    """Surface forms after unknown-token substitution (decode of encode)."""
    return [vocab.decode(vocab.encode(u)) for u in utterances]


def preprocess_scripts(
    script_dir,
    out_dir,
    cap: int = 10000,
    gazetteer: frozenset[str] = frozenset(),
    limit: int = 80,
    fractions=(0.8, 0.1, 0.1),
    qa_path=None,
) -> dict:
    """Run the whole corpus pipeline and write encoded splits.

    The vocabulary is counted on the training split (plus the Q-A corpus
    when one is given, so pretraining shares ids with fine-tuning).  Writes
    ``vocab.tsv``, ``{train,valid,test}.triples`` and, when requested,
    ``qa.dialogues`` into ``out_dir``.  Returns a summary with per-split
    statistics and the list of files written.
    """
    script_dir = Path(script_dir)
    out_dir = Path(out_dir)
    files = sorted(script_dir.glob("*.txt"))
    if not files:
        raise FileNotFoundError(f"no .txt script files in {script_dir}")
    movies = {f.stem: parse_script_file(f) for f in files}
    train_m, valid_m, test_m = split_movies(list(movies), fractions)

    split_triples: dict[str, list[Triple]] = {}
    for split_name, names in (("train", train_m), ("valid", valid_m), ("test", test_m)):
        triples: list[Triple] = []
        for name in names:
            triples.extend(make_triples(movies[name], gazetteer, movie=name))
        split_triples[split_name] = [truncate(t, limit) for t in triples]

    qa_dialogues: list[SurfaceDialogue] = []
    qa_skipped = 0
    if qa_path is not None:
        qa_dialogues, qa_skipped = qa_to_dialogues(parse_qa_file(qa_path), gazetteer)

    streams: list[Sequence[str]] = []
    for t in split_triples["train"]:
        streams.extend(t.utterances)
    for d in qa_dialogues:
        streams.extend(d)
    vocab = build_vocab(streams, cap)

    # stage every output before touching the filesystem, so a failure
    # anywhere in the pipeline leaves no partial files behind
    staged: dict[str, list[SurfaceDialogue]] = {}
    summary_stats = {}
    split_movies_count = {"train": len(train_m), "valid": len(valid_m), "test": len(test_m)}
    for split_name, triples in split_triples.items():
        surface = [encode_to_surface(vocab, t.utterances) for t in triples]
        staged[f"{split_name}.triples"] = surface
        if triples:
            encoded = [[vocab.encode(u) for u in d] for d in surface]
            s = stats(encoded, vocab, movies=split_movies_count[split_name])
            summary_stats[split_name] = s
    if qa_path is not None:
        staged["qa.dialogues"] = [encode_to_surface(vocab, d) for d in qa_dialogues]

    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    vocab_path = out_dir / "vocab.tsv"
    vocab.save(vocab_path)
    written.append(vocab_path)
    for name, dialogues in staged.items():
        path = out_dir / name
        save_encoded(path, dialogues)
        written.append(path)

    return {
        "vocab_size": len(vocab),
        "vocab_hash": vocab.content_hash(),
        "stats": summary_stats,
        "qa_pairs": len(qa_dialogues),
        "qa_skipped": qa_skipped,
        "files": written,
    }
