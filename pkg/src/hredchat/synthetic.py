"""Synthetic two-speaker corpus from a small template grammar.

The real movie-dialogue datasets are distributed only on request, so the
desk-scale experiments and the whole test suite run on scripted dialogues
generated here.  Everything is drawn through the deterministic Rng, one
child stream per movie or pair, so output is reproducible byte for byte.
"""

from __future__ import annotations

from pathlib import Path

from .tensor import Rng

NAMES = ["Alice", "Bob", "Carol", "Dave", "Erin", "Frank"]
TOPICS = ["coffee", "tea", "music", "rain", "books", "cats", "chess", "soup"]

_OPENERS = [
    "hello {name} .",
    "hi there .",
    "do you like {topic} ?",
    "what about {topic} ?",
    "have you seen {name} today ?",
    "i bought {n} {topic} books .",
    "the {topic} here is great .",
]

_REPLIES = [
    "i like {topic} .",
    "i do not like {topic} at all .",
    "yes , i love {topic} .",
    "no , not really .",
    "i have {n} of them .",
    "maybe later .",
    "ask {name} about it .",
    "that is a lot .",
]

_CLOSERS = [
    "okay then .",
    "fine .",
    "that sounds good .",
    "see you tomorrow .",
    "thanks anyway .",
    "i will think about it .",
]


def gazetteer() -> frozenset[str]:
    return frozenset(n.lower() for n in NAMES)


def _fill(template: str, rng: Rng) -> str:
    return template.format(
        name=NAMES[rng.integers(0, len(NAMES))],
        topic=TOPICS[rng.integers(0, len(TOPICS))],
        n=rng.integers(2, 99),
    )


def _line(bank: list[str], rng: Rng) -> str:
    return _fill(bank[rng.integers(0, len(bank))], rng)


def generate_dialogue(rng: Rng) -> list[tuple[str, str]]:
    """One speaker-tagged dialogue of 3..6 alternating turns.

    With small probability a speaker gets two consecutive lines, which
    exercises the continued-utterance merge downstream.
    """
    n_turns = rng.integers(3, 7)
    turns: list[tuple[str, str]] = []
    for i in range(n_turns):
        speaker = "A" if i % 2 == 0 else "B"
        bank = _OPENERS if i == 0 else (_REPLIES if i % 2 == 1 else _CLOSERS)
        turns.append((speaker, _line(bank, rng)))
        if rng.random() < 0.15:
            turns.append((speaker, _line(_CLOSERS, rng)))
    return turns


def generate_movies(rng: Rng, n_movies: int, dialogues_per_movie: int = 4
                    ) -> list[tuple[str, list[list[tuple[str, str]]]]]:
    movies = []
    for m in range(n_movies):
        movie_rng = rng.child(m)
        dialogues = [generate_dialogue(movie_rng) for _ in range(dialogues_per_movie)]
        movies.append((f"movie{m:03d}", dialogues))
    return movies


def generate_qa_pairs(rng: Rng, n_pairs: int) -> list[tuple[str, str]]:
    """Question/answer pairs from the same grammar as the dialogues, so a
    model pretrained here transfers to the triple corpus."""
    pairs = []
    for i in range(n_pairs):
        pair_rng = rng.child(1_000_000 + i)
        pairs.append((_line(_OPENERS, pair_rng), _line(_REPLIES, pair_rng)))
    return pairs


def write_corpus(out_dir, n_movies: int = 20, seed: int = 0,
                 dialogues_per_movie: int = 4, qa_pairs: int = 0) -> list[Path]:
    """Write script files, a gazetteer, and optionally a Q-A file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = Rng(seed)
    written = []
    for name, dialogues in generate_movies(rng, n_movies, dialogues_per_movie):
        path = out_dir / f"{name}.txt"
        with open(path, "w", encoding="utf-8") as f:
            for d in dialogues:
                for speaker, text in d:
                    f.write(f"{speaker}\t{text}\n")
                f.write("\n")
        written.append(path)
    gaz_path = out_dir / "gazetteer.names"
    with open(gaz_path, "w", encoding="utf-8") as f:
        for n in sorted(gazetteer()):
            f.write(n + "\n")
    written.append(gaz_path)
    if qa_pairs:
        qa_path = out_dir / "qa.tsv"
        with open(qa_path, "w", encoding="utf-8") as f:
            for q, a in generate_qa_pairs(rng, qa_pairs):
                f.write(f"{q}\t{a}\n")
        written.append(qa_path)
    return written
