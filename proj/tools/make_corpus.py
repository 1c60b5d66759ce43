#!/usr/bin/env python3
# Copyright (c) 2026 The fastfwd Authors
# SPDX-License-Identifier: Apache-2.0
"""Regenerates data/tiny_corpus.txt: templated English sentences, fixed seed."""

import random
import sys

SUBJECTS = ["the miller", "a young fox", "the old sailor", "my sister", "the village cat", "a tired clerk",
            "the baker", "our neighbor", "the small boy", "a gray heron", "the teacher", "the night watchman"]
VERBS = ["walked to", "looked at", "painted", "carried", "forgot", "found", "cleaned", "opened", "followed",
         "counted", "mended", "sold"]
OBJECTS = ["the red door", "a wooden boat", "the long road", "an empty basket", "the garden wall",
           "a heavy coat", "the stone bridge", "a paper lantern", "the quiet river", "an iron key"]
TAILS = ["before the rain", "in the morning", "after supper", "without a word", "near the market",
         "under the old tree", "for the third time", "at the edge of town", "while it snowed", "with great care"]


def sentence(rng: random.Random) -> str:
    s = f"{rng.choice(SUBJECTS)} {rng.choice(VERBS)} {rng.choice(OBJECTS)}"
    if rng.random() < 0.7:
        s += " " + rng.choice(TAILS)
    return s[0].upper() + s[1:] + "."


def main() -> None:
    rng = random.Random(20240611)
    count = int(sys.argv[1]) if len(sys.argv) > 1 else 2400
    lines = []
    for _ in range(count // 4):
        lines.append(" ".join(sentence(rng) for _ in range(4)))
    sys.stdout.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
