"""Synthetic corpora with planted ngram evidence.

Each class's signature trigram is a distinct permutation of the same three
signature words.  Word identity alone therefore carries no label signal
(every document contains exactly the same signature word set); only units
that see local word order, bigrams and up, can separate the classes.  That
makes these corpora sharp probes for order-sensitivity and for whether
attention finds the planted span.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Corpus

SIGNATURE_WORDS = ("siga", "sigb", "sigc")
# Five of the six orderings of the signature words, one per class.
SIGNATURE_PERMUTATIONS = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1))
PLANT_LENGTH = 3


def class_signature(class_id: int) -> tuple[str, str, str]:
    perm = SIGNATURE_PERMUTATIONS[class_id]
    return tuple(SIGNATURE_WORDS[i] for i in perm)


@dataclass
class PlantedCorpus:
    corpus: Corpus
    plant_starts: list[int]
    plant_length: int = PLANT_LENGTH

    def plant_for(self, doc_index: int) -> tuple[int, int]:
        """(start, end) token range of the planted trigram for a document,
        addressed by pre-split index (``Corpus.origin`` values)."""
        start = self.plant_starts[doc_index]
        return start, start + self.plant_length


def make_planted_corpus(
    num_docs: int = 500,
    num_classes: int = 5,
    distractor_vocab: int = 200,
    length_range: tuple[int, int] = (30, 50),
    seed: int = 0,
) -> PlantedCorpus:
    """Balanced corpus of distractor text with one planted signature trigram
    per document at a random position."""
    if not 2 <= num_classes <= len(SIGNATURE_PERMUTATIONS):
        raise ValueError(
            f"num_classes must be in [2, {len(SIGNATURE_PERMUTATIONS)}], got {num_classes}"
        )
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11,)))
    distractors = [f"w{i:03d}" for i in range(distractor_vocab)]
    low, high = length_range
    if low < PLANT_LENGTH:
        raise ValueError(f"documents must fit a trigram; min length {low} too small")
    documents, labels, plant_starts = [], [], []
    for i in range(num_docs):
        label = i % num_classes
        length = int(rng.integers(low, high + 1))
        tokens = [distractors[j] for j in rng.integers(0, distractor_vocab, size=length)]
        start = int(rng.integers(0, length - PLANT_LENGTH + 1))
        tokens[start : start + PLANT_LENGTH] = class_signature(label)
        documents.append(tokens)
        labels.append(label)
        plant_starts.append(start)
    corpus = Corpus(
        documents=documents,
        labels=labels,
        label_names=[f"class{i}" for i in range(num_classes)],
    )
    return PlantedCorpus(corpus, plant_starts)
