"""Template dialogue corpus for desk-scale experiments.

Each dialogue picks a topic; every turn picks a speech act and fills a
template with topic nouns, adjectives and names.  The act of a response is
drawn at random, so much of a response is not predictable from its context
and a per-response latent variable has something to encode.
"""

from __future__ import annotations

import numpy as np

TOPICS = {
    "food": ["pizza", "soup", "salad", "pasta", "cake", "bread"],
    "travel": ["train", "flight", "hotel", "beach", "ticket", "map"],
    "work": ["office", "meeting", "report", "boss", "project", "desk"],
    "music": ["song", "guitar", "concert", "band", "piano", "album"],
    "sport": ["game", "match", "team", "ball", "coach", "race"],
    "home": ["garden", "kitchen", "sofa", "window", "door", "lamp"],
    "school": ["exam", "class", "teacher", "book", "lesson", "homework"],
    "weather": ["rain", "snow", "wind", "sun", "storm", "cloud"],
}
GOOD = ["great", "nice", "lovely", "fun", "cheap", "fresh", "quiet", "easy"]
BAD = ["awful", "boring", "noisy", "expensive", "old", "hard", "cold", "slow"]
NAMES = ["tom", "anna", "lucy", "mark", "sara", "john"]
TIMES = ["today", "tomorrow", "tonight", "later", "now"]

OPENERS = [
    "hi {name} , do you like the {noun} ?",
    "hello , what do you think about the {noun} ?",
    "hey {name} , have you seen the {noun} {time} ?",
    "good morning , is the {noun} {good} ?",
]
RESPONSES = {
    "yes": [
        "yes , i really like the {noun} , it is {good} and {good2} .",
        "of course , the {noun} is {good} , i love it .",
    ],
    "no": [
        "no , i do not like the {noun} , it is {bad} and {bad2} .",
        "not really , the {noun} is too {bad} for me .",
    ],
    "ask": [
        "why do you ask about the {noun} ?",
        "do you want to see the {noun} with {name} {time} ?",
    ],
    "plan": [
        "let us go to the {noun} {time} , it will be {good} .",
        "maybe we can try the {noun} {time} with {name} .",
    ],
}
CLOSERS = [
    "ok , see you {time} .",
    "thanks {name} , that sounds {good} .",
    "sure , i will tell {name} about the {noun} .",
    "fine , the {noun} is {bad} anyway .",
]


def _fill(template: str, topic: str, rng: np.random.Generator) -> str:
    nouns = TOPICS[topic]
    good = rng.choice(GOOD, size=2, replace=False)
    bad = rng.choice(BAD, size=2, replace=False)
    return template.format(
        noun=rng.choice(nouns), good=good[0], good2=good[1], bad=bad[0], bad2=bad[1],
        name=rng.choice(NAMES), time=rng.choice(TIMES),
    )


def make_dialogue(rng: np.random.Generator, min_turns: int = 3, max_turns: int = 5) -> str:
    topic = rng.choice(sorted(TOPICS))
    n_turns = int(rng.integers(min_turns, max_turns + 1))
    turns = [_fill(rng.choice(OPENERS), topic, rng)]
    acts = sorted(RESPONSES)
    for _ in range(n_turns - 2):
        act = acts[int(rng.integers(len(acts)))]
        turns.append(_fill(rng.choice(RESPONSES[act]), topic, rng))
    turns.append(_fill(rng.choice(CLOSERS), topic, rng))
    return " __eou__ ".join(turns) + " __eou__"


def make_corpus(n_dialogues: int, seed: int = 0, min_turns: int = 3, max_turns: int = 5) -> list[str]:
    rng = np.random.Generator(np.random.Philox(seed))
    return [make_dialogue(rng, min_turns, max_turns) for _ in range(n_dialogues)]


def write_corpus(path, n_dialogues: int, seed: int = 0, **kw) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in make_corpus(n_dialogues, seed, **kw):
            fh.write(line + "\n")
