"""Generated corpora with planted structure, for tests and offline experiments.

Every generator takes a ``numpy.random.Generator`` and returns token-string
records, so the output goes through the same encode path as file input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dictionary import Dictionary
from .io_formats import dictionary_tokens, encode_record
from .samplers import Corpus, Record


@dataclass
class ClusterSpec:
    n_clusters: int = 20
    docs_per_cluster: int = 50
    sentences_per_doc: int = 8
    sentence_len: int = 5
    vocab_per_cluster: int = 40


def cluster_word(c: int, w: int) -> str:
    return f"c{c}w{w}"


def planted_documents(spec: ClusterSpec, rng: np.random.Generator) -> tuple[list[list[list[str]]], np.ndarray]:
    """Documents as sentence lists; every word of a document comes from its
    cluster's private vocabulary. Returns (docs, cluster id per doc)."""
    docs, clusters = [], []
    for c in range(spec.n_clusters):
        for _ in range(spec.docs_per_cluster):
            sents = []
            for _ in range(spec.sentences_per_doc):
                w = rng.choice(spec.vocab_per_cluster, size=spec.sentence_len, replace=False)
                sents.append([cluster_word(c, int(i)) for i in w])
            docs.append(sents)
            clusters.append(c)
    return docs, np.asarray(clusters)


def labeled_documents(spec: ClusterSpec, rng: np.random.Generator, shared_vocab: int = 0,
                      shared_frac: float = 0.0) -> list[Record]:
    """Classification records: one flattened document plus its cluster label.

    ``shared_frac`` of each document's words are replaced by words from a
    vocabulary common to all clusters, which makes the task noisier.
    """
    docs, clusters = planted_documents(spec, rng)
    out = []
    for doc, c in zip(docs, clusters.tolist()):
        words = [w for s in doc for w in s]
        if shared_vocab and shared_frac:
            mask = rng.random(len(words)) < shared_frac
            words = [f"common{rng.integers(shared_vocab)}" if m else w for w, m in zip(words, mask)]
        out.append(Record.labeled(words, [f"__label__{c}"]))
    return out


def user_item_lists(n_clusters: int, users_per_cluster: int, items_per_cluster: int, items_per_user: int,
                    rng: np.random.Generator) -> tuple[list[Record], np.ndarray]:
    """Users whose liked items all come from one taste cluster.

    Each record is ``[user] item item ...``, one entity per bag, the first
    bag being the user id feature.
    """
    recs, clusters = [], []
    u = 0
    for c in range(n_clusters):
        for _ in range(users_per_cluster):
            items = rng.choice(items_per_cluster, size=items_per_user, replace=False)
            recs.append(Record([[f"user{u}"]] + [[f"c{c}item{int(i)}"] for i in items]))
            clusters.append(c)
            u += 1
    return recs, np.asarray(clusters)


def structured_kg(n_groups: int, entities_per_group: int, n_relations: int, n_triples: int,
                  rng: np.random.Generator, head_types: int = 2) -> list[tuple[str, str, str]]:
    """Typed triples: relation r sends a head whose group has type
    g % head_types to a random entity of group (r * head_types + type) mod
    n_groups, so the tail is predictable up to its group."""
    triples = set()
    n_ent = n_groups * entities_per_group
    if n_triples > n_ent * n_relations * entities_per_group:
        raise ValueError("more triples requested than the structure allows")
    while len(triples) < n_triples:
        h = int(rng.integers(n_ent))
        r = int(rng.integers(n_relations))
        g = (r * head_types + (h // entities_per_group) % head_types) % n_groups
        t = g * entities_per_group + int(rng.integers(entities_per_group))
        triples.add((f"e{h}", f"rel{r}", f"e{t}"))
    out = sorted(triples)
    rng.shuffle(out)
    return out


def triple_records(triples) -> list[Record]:
    return [Record([[h], [r], [t]]) for h, r, t in triples]


def encode(records: list[Record], fmt: str, dictionary: Dictionary | None = None,
           **build_kw) -> tuple[Corpus, Dictionary]:
    """Token records to an id Corpus, building a dictionary when none is given.

    Records the dictionary cannot encode are dropped.
    """
    if dictionary is None:
        dictionary = Dictionary.build((dictionary_tokens(r, fmt) for r in records), **build_kw)
    enc = [e for e in (encode_record(r, fmt, dictionary) for r in records) if e is not None]
    return Corpus.from_records(enc), dictionary
