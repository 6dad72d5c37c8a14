"""Small synthetic multi-hop corpora for smoke runs and tests.

Entities are made-up names so every answer is a unique token; bridge
questions chain two or three paragraphs, comparison questions are yes/no.
"""

from __future__ import annotations

import random
from typing import Optional

from .datamodel import MultiHopExample, Paragraph

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "tr", "st"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]
_GENRES = ["drama", "comedy", "horror", "western"]


class _Names:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.used: set[str] = set()

    def __call__(self) -> str:
        while True:
            n = self.rng.randint(2, 3)
            name = "".join(self.rng.choice(_ONSETS) + self.rng.choice(_VOWELS) for _ in range(n)).capitalize()
            if name not in self.used and name.lower() not in ("yes", "no"):
                self.used.add(name)
                return name


def _distractor(names: _Names, rng: random.Random) -> tuple[str, list[str]]:
    title = names()
    kind = rng.choice(["city", "person", "film"])
    if kind == "city":
        return title, [f"{title} is a city in {names()}.", f" It has a population of {rng.randint(2, 90)} thousand."]
    if kind == "person":
        return title, [f"{title} is a {rng.choice(_GENRES)} actor.", f" {title} was born in {names()}."]
    return title, [f"{title} is a {rng.randint(1950, 2020)} {rng.choice(_GENRES)} film.", f" {title} was directed by {names()}."]


def _assemble(ex_id: str, question: str, answer: str, gold: list[tuple[str, list[str]]],
              distractors: list[tuple[str, list[str]]], supports: list[tuple[str, int]],
              rng: random.Random, qtype: str) -> MultiHopExample:
    paras = gold + distractors
    rng.shuffle(paras)
    paragraphs = tuple(Paragraph(t, tuple(s), i) for i, (t, s) in enumerate(paras))
    return MultiHopExample(ex_id, question, paragraphs, answer, tuple(supports), qtype=qtype, level="easy")


def bridge_example(ex_id: str, rng: random.Random, names: _Names, n_distractors: int = 2, hops: int = 2) -> MultiHopExample:
    film, director, city = names(), names(), names()
    genre = rng.choice(_GENRES)
    film_p = (film, [f"{film} is a {rng.randint(1950, 2020)} {genre} film.", f" {film} was directed by {director}."])
    person_p = (director, [f"{director} is a film director.", f" {director} was born in {city}."])
    gold = [film_p, person_p]
    supports = [(film, 1), (director, 1)]
    if hops == 2:
        question = f"Where was the director of {film} born?"
        answer = city
    else:
        country = names()
        city_p = (city, [f"{city} is a city in {country}.", " It lies on a river."])
        gold.append(city_p)
        supports.append((city, 0))
        question = f"In which country is the birthplace of the director of {film}?"
        answer = country
    distractors = [_distractor(names, rng) for _ in range(n_distractors)]
    return _assemble(ex_id, question, answer, gold, distractors, supports, rng, "bridge")


def comparison_example(ex_id: str, rng: random.Random, names: _Names, n_distractors: int = 2) -> MultiHopExample:
    a, b = names(), names()
    ga = rng.choice(_GENRES)
    same = rng.random() < 0.5
    gb = ga if same else rng.choice([g for g in _GENRES if g != ga])
    pa = (a, [f"{a} is a {rng.randint(1950, 2020)} {ga} film.", f" {a} was directed by {names()}."])
    pb = (b, [f"{b} is a {rng.randint(1950, 2020)} {gb} film.", f" {b} was directed by {names()}."])
    question = f"Are {a} and {b} both {ga} films?"
    distractors = [_distractor(names, rng) for _ in range(n_distractors)]
    return _assemble(ex_id, question, "yes" if same else "no", [pa, pb], distractors, [(a, 0), (b, 0)], rng, "comparison")


def make_corpus(
    n: int,
    seed: int = 0,
    comparison_every: Optional[int] = 4,
    n_distractors: int = 2,
    hops: int = 2,
    prefix: str = "syn",
) -> list[MultiHopExample]:
    """``n`` examples; every ``comparison_every``-th one is a yes/no comparison."""
    rng = random.Random(seed)
    names = _Names(rng)
    out = []
    for i in range(n):
        ex_id = f"{prefix}{seed}-{i:04d}"
        if comparison_every and i % comparison_every == comparison_every - 1:
            out.append(comparison_example(ex_id, rng, names, n_distractors))
        else:
            out.append(bridge_example(ex_id, rng, names, n_distractors, hops))
    return out
