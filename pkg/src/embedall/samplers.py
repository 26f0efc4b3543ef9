"""Positive-pair generators, negative sampling and feature dropout for every
training mode.

Records are stored in a two-level CSR layout (records -> entities ->
feature ids) so the numba kernels can walk them without Python objects.
Each record is a list of entities (feature bags); which entities matter
depends on the mode:

=========================  ====================================================
mode                       record layout
=========================  ====================================================
classification/multilabel  text entities + singleton label entities
collab_filtering           [user id], item, item, ...
collab_filtering_oos       item, item, ...            (singleton items)
content_rec                item, item, ...            (items are feature bags)
knowledge_graph            [h], [r@lhs], [r@rhs], [t]
info_retrieval_supervised  query, relevant doc, ...
info_retrieval_keywords    text entities (a document)
word_embedding             text entities
sentence_embedding         text entities (one per sentence)
=========================  ====================================================
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

MODES = (
    "classification",
    "multilabel",
    "collab_filtering",
    "collab_filtering_oos",
    "content_rec",
    "knowledge_graph",
    "info_retrieval_supervised",
    "info_retrieval_keywords",
    "word_embedding",
    "sentence_embedding",
)
(CLASSIFICATION, MULTILABEL, COLLAB, COLLAB_OOS, CONTENT_REC, KNOWLEDGE_GRAPH,
 IR_SUPERVISED, IR_KEYWORDS, WORD, SENTENCE) = range(len(MODES))

NEG_REJECT_ATTEMPTS = 10
IR_MAX_KEYWORDS = 10


class DegenerateRecord(ValueError):
    def __init__(self, msg: str = "degenerate record"):
        super().__init__(msg)


@dataclass(frozen=True)
class TrainMode:
    """A training mode; ``multitask`` carries weighted sub-modes in ``tasks``."""

    name: str
    window: int = 2
    max_distance: int | None = None
    tasks: tuple[tuple["TrainMode", float], ...] = ()

    def __post_init__(self):
        if self.name == "multitask":
            if not self.tasks:
                raise ValueError("multitask needs at least one sub-mode")
            for sub, w in self.tasks:
                if sub.name == "multitask":
                    raise ValueError("multitask modes cannot nest")
                if not (np.isfinite(w) and w > 0):
                    raise ValueError("multitask weights must be positive and finite")
        elif self.name not in MODES:
            raise ValueError(f"unknown train mode {self.name!r}")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.max_distance is not None and self.max_distance < 1:
            raise ValueError("max_distance must be >= 1 (None = unlimited)")

    @classmethod
    def parse(cls, text: str, window: int = 2, max_distance: int | None = None) -> "TrainMode":
        """``"classification"`` or ``"multitask:classification=1,word_embedding=0.5"``."""
        if text.startswith("multitask"):
            _, _, spec = text.partition(":")
            tasks = []
            for part in filter(None, spec.split(",")):
                name, _, w = part.partition("=")
                tasks.append((cls(name.strip(), window, max_distance), float(w or 1.0)))
            return cls("multitask", window, max_distance, tuple(tasks))
        return cls(text, window, max_distance)

    def __str__(self) -> str:
        if self.name == "multitask":
            return "multitask:" + ",".join(f"{m.name}={w:g}" for m, w in self.tasks)
        return self.name

    def task_table(self):
        """(codes, windows, max_distances, cumulative weights) for the kernels."""
        subs = self.tasks if self.name == "multitask" else ((self, 1.0),)
        w = np.array([x for _, x in subs], dtype=np.float64)
        return (
            np.array([MODES.index(m.name) for m, _ in subs], dtype=np.int64),
            np.array([m.window for m, _ in subs], dtype=np.int64),
            np.array([m.max_distance or 0 for m, _ in subs], dtype=np.int64),
            np.cumsum(w / w.sum()),
        )


@dataclass
class Record:
    """One parsed input line: a list of feature bags.

    ``label_mask`` flags the entities that are labels (classification modes);
    ``None`` means no entity is a label.
    """

    entities: list[list]
    label_mask: tuple[bool, ...] | None = None

    @classmethod
    def labeled(cls, doc: Sequence, labels: Sequence) -> "Record":
        return cls([list(doc)] + [[lab] for lab in labels], (False,) + (True,) * len(labels))

    def labels(self) -> list:
        if self.label_mask is None:
            return []
        return [f for e, m in zip(self.entities, self.label_mask) if m for f in e]

    def __post_init__(self):
        if not self.entities:
            raise ValueError("empty record")
        if self.label_mask is not None and len(self.label_mask) != len(self.entities):
            raise ValueError("label_mask length must match entities")


@dataclass
class TrainingInstance:
    lhs: list[int]
    rhs_pos: list[int]
    rhs_negs: list[list[int]] = field(default_factory=list)


@dataclass
class Corpus:
    """Encoded records in CSR form."""

    feats: np.ndarray
    ent_ptr: np.ndarray
    rec_ptr: np.ndarray
    ent_label: np.ndarray

    @classmethod
    def from_records(cls, records: Sequence[Record]) -> "Corpus":
        feats: list[int] = []
        ent_ptr = [0]
        rec_ptr = [0]
        ent_label: list[bool] = []
        for rec in records:
            mask = rec.label_mask or (False,) * len(rec.entities)
            for ent, is_label in zip(rec.entities, mask):
                feats.extend(int(f) for f in ent)
                ent_ptr.append(len(feats))
                ent_label.append(bool(is_label))
            rec_ptr.append(len(ent_ptr) - 1)
        return cls(
            np.array(feats, dtype=np.int64),
            np.array(ent_ptr, dtype=np.int64),
            np.array(rec_ptr, dtype=np.int64),
            np.array(ent_label, dtype=np.bool_),
        )

    def __len__(self) -> int:
        return self.rec_ptr.size - 1

    def record(self, i: int) -> Record:
        e0, e1 = self.rec_ptr[i], self.rec_ptr[i + 1]
        ents = [self.feats[self.ent_ptr[e]:self.ent_ptr[e + 1]].tolist() for e in range(e0, e1)]
        mask = tuple(bool(x) for x in self.ent_label[e0:e1])
        return Record(ents, mask if any(mask) else None)

    def __iter__(self):
        return (self.record(i) for i in range(len(self)))

    def subset(self, indices: Sequence[int]) -> "Corpus":
        return Corpus.from_records([self.record(int(i)) for i in indices])

    def record_sizes(self) -> np.ndarray:
        return self.ent_ptr[self.rec_ptr[1:]] - self.ent_ptr[self.rec_ptr[:-1]]

    @property
    def max_record_features(self) -> int:
        return int(self.record_sizes().max(initial=0))

    def arrays(self):
        return self.feats, self.ent_ptr, self.rec_ptr, self.ent_label


# ---------------------------------------------------------------------------
# kernels


@njit(nogil=True, cache=True)
def _copy(src, start, stop, out, pos):
    for j in range(start, stop):
        out[pos] = src[j]
        pos += 1
    return pos


@njit(nogil=True, cache=True)
def _nth_entity(ent_ptr, ent_label, e0, e1, want_label, min_len, n):
    """Index of the n-th entity in [e0, e1) with the given label flag and length."""
    seen = 0
    for e in range(e0, e1):
        if ent_label[e] == want_label and ent_ptr[e + 1] - ent_ptr[e] >= min_len:
            if seen == n:
                return e
            seen += 1
    return -1


@njit(nogil=True, cache=True)
def _count_entities(ent_ptr, ent_label, e0, e1, want_label, min_len):
    c = 0
    for e in range(e0, e1):
        if ent_label[e] == want_label and ent_ptr[e + 1] - ent_ptr[e] >= min_len:
            c += 1
    return c


@njit(nogil=True, cache=True)
def _positive(mode, window, maxd, feats, ent_ptr, rec_ptr, ent_label, r, rng, branch, lhs, rhs):
    """Fill lhs/rhs with one positive pair from record r.

    Returns (n_lhs, n_rhs, branch_used); n_lhs == -1 marks a degenerate record.
    All degeneracy checks precede the first random draw.
    """
    e0 = rec_ptr[r]
    e1 = rec_ptr[r + 1]
    nl = 0
    nr = 0
    if mode == CLASSIFICATION or mode == MULTILABEL:
        n_lab = _count_entities(ent_ptr, ent_label, e0, e1, True, 1)
        n_txt = 0
        for e in range(e0, e1):
            if not ent_label[e]:
                n_txt += ent_ptr[e + 1] - ent_ptr[e]
        if n_lab == 0 or n_txt == 0:
            return -1, 0, -1
        for e in range(e0, e1):
            if not ent_label[e]:
                nl = _copy(feats, ent_ptr[e], ent_ptr[e + 1], lhs, nl)
        e = _nth_entity(ent_ptr, ent_label, e0, e1, True, 1, rng.integers(0, n_lab))
        nr = _copy(feats, ent_ptr[e], ent_ptr[e + 1], rhs, 0)
        return nl, nr, -1
    if mode == COLLAB:
        # entity e0 is the user, the rest are items
        n_items = 0
        for e in range(e0 + 1, e1):
            if ent_ptr[e + 1] > ent_ptr[e]:
                n_items += 1
        if e1 - e0 < 2 or ent_ptr[e0 + 1] == ent_ptr[e0] or n_items == 0:
            return -1, 0, -1
        nl = _copy(feats, ent_ptr[e0], ent_ptr[e0 + 1], lhs, 0)
        j = rng.integers(0, n_items)
        for e in range(e0 + 1, e1):
            if ent_ptr[e + 1] > ent_ptr[e]:
                if j == 0:
                    nr = _copy(feats, ent_ptr[e], ent_ptr[e + 1], rhs, 0)
                    break
                j -= 1
        return nl, nr, -1
    if mode == COLLAB_OOS or mode == CONTENT_REC:
        n_items = 0
        for e in range(e0, e1):
            if ent_ptr[e + 1] > ent_ptr[e]:
                n_items += 1
        if n_items < 2:
            return -1, 0, -1
        j = rng.integers(0, n_items)
        seen = 0
        for e in range(e0, e1):
            if ent_ptr[e + 1] > ent_ptr[e]:
                if seen == j:
                    nr = _copy(feats, ent_ptr[e], ent_ptr[e + 1], rhs, 0)
                else:
                    nl = _copy(feats, ent_ptr[e], ent_ptr[e + 1], lhs, nl)
                seen += 1
        return nl, nr, -1
    if mode == KNOWLEDGE_GRAPH:
        if e1 - e0 != 4:
            return -1, 0, -1
        for e in range(e0, e1):
            if ent_ptr[e + 1] == ent_ptr[e]:
                return -1, 0, -1
        if branch < 0:
            branch = 0 if rng.random() < 0.5 else 1
        nl = _copy(feats, ent_ptr[e0], ent_ptr[e0 + 1], lhs, 0)
        if branch == 0:
            nl = _copy(feats, ent_ptr[e0 + 1], ent_ptr[e0 + 2], lhs, nl)
        else:
            nr = _copy(feats, ent_ptr[e0 + 2], ent_ptr[e0 + 3], rhs, 0)
        nr = _copy(feats, ent_ptr[e0 + 3], ent_ptr[e0 + 4], rhs, nr)
        return nl, nr, branch
    if mode == IR_SUPERVISED:
        n_docs = 0
        for e in range(e0 + 1, e1):
            if ent_ptr[e + 1] > ent_ptr[e]:
                n_docs += 1
        if ent_ptr[e0 + 1] == ent_ptr[e0] or n_docs == 0:
            return -1, 0, -1
        nl = _copy(feats, ent_ptr[e0], ent_ptr[e0 + 1], lhs, 0)
        j = rng.integers(0, n_docs)
        for e in range(e0 + 1, e1):
            if ent_ptr[e + 1] > ent_ptr[e]:
                if j == 0:
                    nr = _copy(feats, ent_ptr[e], ent_ptr[e + 1], rhs, 0)
                    break
                j -= 1
        return nl, nr, -1
    if mode == IR_KEYWORDS or mode == WORD:
        n_txt = _count_entities(ent_ptr, ent_label, e0, e1, False, 2)
        if n_txt == 0:
            return -1, 0, -1
        e = _nth_entity(ent_ptr, ent_label, e0, e1, False, 2, rng.integers(0, n_txt))
        s = ent_ptr[e]
        n = ent_ptr[e + 1] - s
        if mode == WORD:
            c = rng.integers(0, n)
            lo = max(0, c - window)
            hi = min(n - 1, c + window)
            for p in range(lo, hi + 1):
                if p != c:
                    lhs[nl] = feats[s + p]
                    nl += 1
            rhs[0] = feats[s + c]
            return nl, 1, -1
        m = rng.integers(1, min(IR_MAX_KEYWORDS, n - 1) + 1)
        perm = np.arange(n)
        for p in range(m):
            q = p + rng.integers(0, n - p)
            tmp = perm[p]
            perm[p] = perm[q]
            perm[q] = tmp
        picked = np.zeros(n, np.bool_)
        for p in range(m):
            picked[perm[p]] = True
            lhs[nl] = feats[s + perm[p]]
            nl += 1
        for p in range(n):
            if not picked[p]:
                rhs[nr] = feats[s + p]
                nr += 1
        return nl, nr, -1
    if mode == SENTENCE:
        n_s = _count_entities(ent_ptr, ent_label, e0, e1, False, 1)
        if n_s < 2:
            return -1, 0, -1
        i = rng.integers(0, n_s)
        lo = 0
        hi = n_s - 1
        if maxd > 0:
            lo = max(0, i - maxd)
            hi = min(n_s - 1, i + maxd)
        j = lo + rng.integers(0, hi - lo)
        if j >= i:
            j += 1
        ei = _nth_entity(ent_ptr, ent_label, e0, e1, False, 1, i)
        ej = _nth_entity(ent_ptr, ent_label, e0, e1, False, 1, j)
        nl = _copy(feats, ent_ptr[ei], ent_ptr[ei + 1], lhs, 0)
        nr = _copy(feats, ent_ptr[ej], ent_ptr[ej + 1], rhs, 0)
        return nl, nr, -1
    return -1, 0, -1


@njit(nogil=True, cache=True)
def _same_set(a, na, b, nb):
    ua = np.unique(a[:na])
    ub = np.unique(b[:nb])
    if ua.shape[0] != ub.shape[0]:
        return False
    for i in range(ua.shape[0]):
        if ua[i] != ub[i]:
            return False
    return True


@njit(nogil=True, cache=True)
def _negatives(mode, window, maxd, feats, ent_ptr, rec_ptr, ent_label, elig, k, exclude, n_ex,
               source, branch, rng, negf, negp, tmp_l, tmp_r):
    """k negatives: the rhs of uniformly drawn eligible records (same KG branch).

    A draw equal as a set to ``exclude`` (or, in sentence mode, drawn from
    ``source``) is redrawn, at most NEG_REJECT_ATTEMPTS times, then kept.
    """
    pos = 0
    negp[0] = 0
    n_elig = elig.shape[0]
    for i in range(k):
        nr = 0
        for attempt in range(NEG_REJECT_ATTEMPTS):
            r = elig[rng.integers(0, n_elig)]
            _, nr, _ = _positive(mode, window, maxd, feats, ent_ptr, rec_ptr, ent_label, r, rng,
                                 branch, tmp_l, tmp_r)
            if mode == SENTENCE and r == source:
                continue
            if not _same_set(tmp_r, nr, exclude, n_ex):
                break
        for p in range(nr):
            negf[pos] = tmp_r[p]
            pos += 1
        negp[i + 1] = pos
    return pos


@njit(nogil=True, cache=True)
def _dropout(ids, start, stop, p_drop, rng, out, pos, keep_one):
    """Copy ids[start:stop] into out at pos, dropping each with prob p_drop."""
    if p_drop <= 0.0:
        return _copy(ids, start, stop, out, pos)
    n = stop - start
    begin = pos
    for j in range(start, stop):
        if rng.random() >= p_drop:
            out[pos] = ids[j]
            pos += 1
    if keep_one and pos == begin and n > 0:
        out[pos] = ids[start + rng.integers(0, n)]
        pos += 1
    return pos


@njit(nogil=True, cache=True)
def _pick_task(cumw, rng):
    if cumw.shape[0] == 1:
        return 0
    u = rng.random()
    for t in range(cumw.shape[0] - 1):
        if u < cumw[t]:
            return t
    return cumw.shape[0] - 1


@njit(nogil=True, cache=True)
def _make_instance(codes, windows, maxds, cumw, feats, ent_ptr, rec_ptr, ent_label, elig_flat,
                   elig_ptr, r, k, p_drop, rng, lhs, rhs, negf, negp, tmp_l, tmp_r, tmp_n):
    """Assemble one instance into lhs/rhs/negf/negp. Returns (n_lhs, n_rhs); -1 if degenerate."""
    t = _pick_task(cumw, rng)
    mode = codes[t]
    nl, nr0, branch = _positive(mode, windows[t], maxds[t], feats, ent_ptr, rec_ptr, ent_label, r,
                                rng, -1, lhs, tmp_r)
    if nl <= 0 or nr0 <= 0:
        return -1, 0
    elig = elig_flat[elig_ptr[t]:elig_ptr[t + 1]]
    _negatives(mode, windows[t], maxds[t], feats, ent_ptr, rec_ptr, ent_label, elig, k, tmp_r, nr0,
               r, branch, rng, tmp_n, negp, tmp_l, rhs)
    nr = _dropout(tmp_r, 0, nr0, p_drop, rng, rhs, 0, True)
    pos = 0
    start = 0
    for i in range(k):
        stop = negp[i + 1]
        pos = _dropout(tmp_n, start, stop, p_drop, rng, negf, pos, True)
        start = stop
        negp[i + 1] = pos
    return nl, nr


@njit(nogil=True, cache=True)
def _eligibility(codes, windows, maxds, feats, ent_ptr, rec_ptr, ent_label, cap, scratch):
    n_tasks = codes.shape[0]
    n_rec = rec_ptr.shape[0] - 1
    out = np.zeros((n_tasks, n_rec), np.bool_)
    lhs = np.empty(cap, np.int64)
    rhs = np.empty(cap, np.int64)
    for t in range(n_tasks):
        for r in range(n_rec):
            nl, nr, _ = _positive(codes[t], windows[t], maxds[t], feats, ent_ptr, rec_ptr, ent_label,
                                  r, scratch, -1, lhs, rhs)
            out[t, r] = nl > 0 and nr > 0
    return out


# ---------------------------------------------------------------------------
# sampler state and Python-facing wrappers


class Sampler:
    """A corpus bound to a training mode with per-task eligible record lists."""

    def __init__(self, mode: TrainMode, corpus: Corpus, negative_pool: int | None = None):
        self.mode = mode
        self.corpus = corpus
        self.codes, self.windows, self.maxds, self.cumw = mode.task_table()
        self.cap = max(corpus.max_record_features, 1)
        # degeneracy checks never consume randomness, so any generator will do
        self.eligible = _eligibility(self.codes, self.windows, self.maxds, *corpus.arrays(), self.cap,
                                     np.random.default_rng(0))
        pool = len(corpus) if negative_pool is None else negative_pool
        lists = [np.flatnonzero(row[:pool]) for row in self.eligible]
        self.elig_ptr = np.zeros(len(lists) + 1, dtype=np.int64)
        self.elig_ptr[1:] = np.cumsum([x.size for x in lists])
        self.elig_flat = np.concatenate(lists).astype(np.int64)

    def trainable(self) -> np.ndarray:
        """Record indices eligible for at least one task."""
        return np.flatnonzero(self.eligible.any(axis=0))

    def buffers(self, k: int):
        cap = self.cap
        return (np.empty(cap, np.int64), np.empty(cap, np.int64), np.empty(k * cap, np.int64),
                np.zeros(k + 1, np.int64), np.empty(cap, np.int64), np.empty(cap, np.int64),
                np.empty(k * cap, np.int64))

    def task_elig(self, t: int = 0) -> np.ndarray:
        return self.elig_flat[self.elig_ptr[t]:self.elig_ptr[t + 1]]

    def make_instance(self, r: int, k: int, p_drop: float, rng: np.random.Generator) -> TrainingInstance:
        if self.elig_flat.size == 0:
            raise DegenerateRecord("no eligible records to draw negatives from")
        lhs, rhs, negf, negp, tl, tr, tn = self.buffers(k)
        nl, nr = _make_instance(self.codes, self.windows, self.maxds, self.cumw, *self.corpus.arrays(),
                                self.elig_flat, self.elig_ptr, r, k, float(p_drop), rng,
                                lhs, rhs, negf, negp, tl, tr, tn)
        if nl < 0:
            raise DegenerateRecord()
        return TrainingInstance(lhs[:nl].tolist(), rhs[:nr].tolist(),
                                [negf[negp[i]:negp[i + 1]].tolist() for i in range(k)])


def _single(mode: TrainMode) -> TrainMode:
    if mode.name == "multitask":
        raise ValueError("pass a concrete sub-mode, not multitask")
    return mode


def generate_positive(mode: TrainMode, record: Record, rng: np.random.Generator,
                      branch: int | None = None) -> tuple[list[int], list[int]]:
    """One (a, b) pair from a record. ``branch`` forces the KG orientation (0 or 1)."""
    mode = _single(mode)
    corpus = Corpus.from_records([record])
    cap = max(corpus.max_record_features, 1)
    lhs = np.empty(cap, np.int64)
    rhs = np.empty(cap, np.int64)
    nl, nr, _ = _positive(MODES.index(mode.name), mode.window, mode.max_distance or 0, *corpus.arrays(),
                          0, rng, -1 if branch is None else int(branch), lhs, rhs)
    if nl <= 0 or nr <= 0:
        raise DegenerateRecord()
    return lhs[:nl].tolist(), rhs[:nr].tolist()


def sample_negatives(mode: TrainMode, k: int, corpus: Corpus, exclude: Sequence[int],
                     rng: np.random.Generator, branch: int | None = None,
                     source: int = -1) -> list[list[int]]:
    """k negative rhs bags drawn through random eligible records of ``corpus``."""
    mode = _single(mode)
    if k < 1:
        raise ValueError("k must be >= 1")
    sampler = Sampler(mode, corpus)
    elig = sampler.task_elig(0)
    if elig.size == 0:
        raise DegenerateRecord("corpus has no eligible records")
    cap = sampler.cap
    ex = np.asarray(exclude, dtype=np.int64)
    negf = np.empty(k * cap, np.int64)
    negp = np.zeros(k + 1, np.int64)
    _negatives(sampler.codes[0], sampler.windows[0], sampler.maxds[0], *corpus.arrays(), elig, k, ex,
               ex.size, source, -1 if branch is None else int(branch), rng, negf, negp,
               np.empty(cap, np.int64), np.empty(cap, np.int64))
    return [negf[negp[i]:negp[i + 1]].tolist() for i in range(k)]


def apply_feature_dropout(features: Sequence[int], p_drop: float, rng: np.random.Generator,
                          keep_one: bool = True) -> list[int]:
    """Drop each feature with probability p_drop, keeping one if all would go
    (unless ``keep_one`` is off)."""
    if not 0.0 <= p_drop < 1.0:
        raise ValueError("p_drop must be in [0, 1)")
    ids = np.asarray(features, dtype=np.int64)
    out = np.empty(max(ids.size, 1), np.int64)
    n = _dropout(ids, 0, ids.size, float(p_drop), rng, out, 0, keep_one)
    return out[:n].tolist()


def make_instance(mode: TrainMode, record: int | Record, corpus: Corpus, k: int, p_drop: float,
                  rng: np.random.Generator) -> TrainingInstance:
    """Positive pair, k negatives, then rhs dropout, as one training instance.

    ``record`` is an index into ``corpus`` or a standalone Record (negatives
    still come from ``corpus``).
    """
    pool = None
    if isinstance(record, Record):
        pool = len(corpus)
        corpus = Corpus.from_records(list(corpus) + [record])
        record = pool
    return Sampler(mode, corpus, negative_pool=pool).make_instance(int(record), k, p_drop, rng)
