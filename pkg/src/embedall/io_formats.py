"""Input file formats, corpus loading and model serialization.

Binary model layout (little-endian)::

    b"EMBALL01"
    int64 dim, int64 D, int64 n_unigrams, int64 bucket_count, uint8 shared, float64 max_norm
    uint32 n, n bytes of UTF-8 JSON {model, dictionary, train} hyperparameters, sorted keys
    int64 n_tokens, then per token: uint32 len, UTF-8 bytes, int64 count   (id order)
    float32[D * dim] lhs matrix, row-major
    float32[D * dim] rhs matrix, only when not shared

``max_norm`` is +inf for unbounded models.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .dictionary import Dictionary
from .model_core import EmbeddingModel
from .samplers import Corpus, Record

log = logging.getLogger(__name__)

FORMATS = ("labeled_text", "tabbed_entities", "triple")
MAGIC = b"EMBALL01"
LHS_ROLE = "@lhs"
RHS_ROLE = "@rhs"
_HEADER = struct.Struct("<qqqqBd")


class DataError(ValueError):
    """Malformed input data or model file."""


class ParseError(DataError):
    def __init__(self, msg: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {msg}" if lineno is not None else msg)


def relation_roles(relation: str) -> tuple[str, str]:
    return relation + LHS_ROLE, relation + RHS_ROLE


def is_role_token(token: str) -> bool:
    return token.endswith(LHS_ROLE) or token.endswith(RHS_ROLE)


def kg_entity_ids(dictionary: Dictionary) -> np.ndarray:
    """Ids of concept (non-relation) features."""
    return np.array([i for i, t in enumerate(dictionary.tokens) if not is_role_token(t)], dtype=np.int64)


def parse_line(line: str, fmt: str, label_prefix: str = "__label__", lineno: int | None = None,
               lowercase: bool = False) -> Record:
    """One non-blank line to a Record of token strings."""
    if lowercase:
        line = line.lower()
    if fmt == "labeled_text":
        tokens = line.split()
        if not tokens:
            raise ParseError("blank line", lineno)
        doc = [t for t in tokens if not t.startswith(label_prefix)]
        labels = [t for t in tokens if t.startswith(label_prefix)]
        return Record.labeled(doc, labels)
    if fmt == "tabbed_entities":
        segments = line.rstrip("\r\n").split("\t")
        bags = [seg.split() for seg in segments]
        if any(not b for b in bags):
            raise ParseError("empty tab-separated segment", lineno)
        mask = tuple(all(t.startswith(label_prefix) for t in b) for b in bags)
        return Record(bags, mask if any(mask) else None)
    if fmt == "triple":
        fields = line.split()
        if len(fields) != 3:
            raise ParseError(f"expected 3 fields (h r t), got {len(fields)}", lineno)
        return Record([[fields[0]], [fields[1]], [fields[2]]])
    raise ValueError(f"unknown file format {fmt!r}; expected one of {FORMATS}")


def format_record(record: Record, fmt: str) -> str:
    """Inverse of :func:`parse_line` for token-string records."""
    if fmt == "labeled_text":
        return " ".join(record.entities[0] + record.labels())
    if fmt == "tabbed_entities":
        return "\t".join(" ".join(b) for b in record.entities)
    if fmt == "triple":
        return " ".join(b[0] for b in record.entities)
    raise ValueError(f"unknown file format {fmt!r}")


def iter_records(path: str | Path, fmt: str, label_prefix: str = "__label__",
                 lowercase: bool = False) -> Iterator[Record]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if line.strip():
                yield parse_line(line, fmt, label_prefix, lineno, lowercase)


def dictionary_tokens(record: Record, fmt: str) -> list[str]:
    if fmt == "triple":
        h, r, t = (b[0] for b in record.entities)
        return [h, *relation_roles(r), t]
    return [tok for bag in record.entities for tok in bag]


def encode_record(record: Record, fmt: str, dictionary: Dictionary) -> Record | None:
    """Token record to id record; ``None`` when a triple has an unknown element."""
    if fmt == "triple":
        h, r, t = (b[0] for b in record.entities)
        toks = [h, *relation_roles(r), t]
        ids = [dictionary.token_to_id.get(x) for x in toks]
        if any(i is None for i in ids):
            return None
        return Record([[i] for i in ids])
    mask = record.label_mask or (False,) * len(record.entities)
    ents: list[list[int]] = []
    kept_mask: list[bool] = []
    for bag, is_label in zip(record.entities, mask):
        if is_label:
            ids = [dictionary.token_to_id[t] for t in bag if t in dictionary.token_to_id]
            if not ids:
                continue
        else:
            ids = dictionary.encode(bag)
        ents.append(ids)
        kept_mask.append(bool(is_label))
    if not ents:
        return None
    return Record(ents, tuple(kept_mask) if any(kept_mask) else None)


def load_corpus(path: str | Path, fmt: str, dictionary: Dictionary | str = "build", *, min_count: int = 1,
                ngram_order: int = 1, bucket_count: int = 0, label_prefix: str = "__label__",
                lowercase: bool = False) -> tuple[Corpus, Dictionary]:
    """Parse and encode a file; ``dictionary="build"`` first builds one from it."""
    if fmt not in FORMATS:
        raise ValueError(f"unknown file format {fmt!r}; expected one of {FORMATS}")
    if isinstance(dictionary, str):
        if dictionary != "build":
            raise ValueError("dictionary must be a Dictionary or 'build'")
        try:
            dictionary = Dictionary.build(
                (dictionary_tokens(r, fmt) for r in iter_records(path, fmt, label_prefix, lowercase)),
                min_count=min_count, ngram_order=ngram_order, bucket_count=bucket_count,
                label_prefix=label_prefix,
            )
        except ValueError as e:
            if isinstance(e, DataError):
                raise
            raise DataError(f"{path}: {e}") from None
    label_prefix = dictionary.label_prefix
    records = []
    skipped = 0
    for rec in iter_records(path, fmt, label_prefix, lowercase):
        enc = encode_record(rec, fmt, dictionary)
        if enc is None:
            skipped += 1
        else:
            records.append(enc)
    if skipped:
        log.warning("%s: skipped %d records with no known features", path, skipped)
    if not records:
        raise DataError(f"{path}: empty corpus")
    return Corpus.from_records(records), dictionary


def load_known_triples(paths, dictionary: Dictionary) -> set[tuple[int, int, int]]:
    """(h, r@lhs, t) id triples from triple files, for filtered evaluation."""
    known = set()
    for path in paths:
        for rec in iter_records(path, "triple"):
            enc = encode_record(rec, "triple", dictionary)
            if enc is not None:
                h, rl, _, t = (b[0] for b in enc.entities)
                known.add((h, rl, t))
    return known


# ---------------------------------------------------------------------------
# model files


def save_model(model: EmbeddingModel, dictionary: Dictionary, path: str | Path) -> None:
    if model.size != dictionary.size:
        raise ValueError("model and dictionary sizes differ")
    hyper = {
        "model": {"sim": model.sim, "loss": model.loss, "margin": model.margin,
                  "norm_exponent": model.norm_exponent},
        "dictionary": {"ngram_order": dictionary.ngram_order, "min_count": dictionary.min_count,
                       "label_prefix": dictionary.label_prefix},
        "train": model.hyperparams,
    }
    blob = json.dumps(hyper, sort_keys=True).encode("utf-8")
    max_norm = math.inf if model.max_norm is None else float(model.max_norm)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(model.dim, model.size, dictionary.n_unigrams, dictionary.bucket_count,
                             int(model.share_embeddings), max_norm))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<q", len(dictionary.tokens)))
        for tok, count in zip(dictionary.tokens, dictionary.counts.tolist()):
            b = tok.encode("utf-8")
            f.write(struct.pack("<I", len(b)))
            f.write(b)
            f.write(struct.pack("<q", count))
        f.write(np.ascontiguousarray(model.lhs, dtype="<f4").tobytes())
        if not model.share_embeddings:
            f.write(np.ascontiguousarray(model.rhs, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DataError(f"truncated model file at byte offset {self.pos} "
                            f"(needed {n} bytes, {len(self.buf) - self.pos} left)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str | struct.Struct):
        s = fmt if isinstance(fmt, struct.Struct) else struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def load_model(path: str | Path) -> tuple[EmbeddingModel, Dictionary]:
    rd = _Reader(Path(path).read_bytes())
    if len(rd.buf) < len(MAGIC) or rd.take(len(MAGIC)) != MAGIC:
        raise DataError("unrecognized model file")
    dim, size, n_unigrams, buckets, shared, max_norm = rd.unpack(_HEADER)
    (n,) = rd.unpack("<I")
    try:
        hyper = json.loads(rd.take(n).decode("utf-8"))
        mh, dh = hyper["model"], hyper["dictionary"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError):
        raise DataError("corrupt hyperparameter block") from None
    (n_tokens,) = rd.unpack("<q")
    if n_tokens != n_unigrams or n_unigrams + buckets != size:
        raise DataError("inconsistent model header")
    tokens, counts = [], []
    for _ in range(n_tokens):
        (m,) = rd.unpack("<I")
        tokens.append(rd.take(m).decode("utf-8"))
        counts.append(rd.unpack("<q")[0])
    nbytes = size * dim * 4
    lhs = np.frombuffer(rd.take(nbytes), dtype="<f4").reshape(size, dim).astype(np.float32)
    acc_lhs = np.zeros(size)
    if shared:
        rhs, acc_rhs = lhs, acc_lhs
    else:
        rhs = np.frombuffer(rd.take(nbytes), dtype="<f4").reshape(size, dim).astype(np.float32)
        acc_rhs = np.zeros(size)
    if rd.pos != len(rd.buf):
        raise DataError(f"trailing bytes after offset {rd.pos}")
    dictionary = Dictionary(
        token_to_id={t: i for i, t in enumerate(tokens)},
        counts=np.array(counts, dtype=np.int64),
        n_unigrams=n_unigrams,
        bucket_count=buckets,
        ngram_order=dh["ngram_order"],
        min_count=dh["min_count"],
        label_prefix=dh["label_prefix"],
        tokens=tokens,
    )
    model = EmbeddingModel(
        lhs, rhs, acc_lhs, acc_rhs,
        max_norm=None if math.isinf(max_norm) else max_norm,
        sim=mh["sim"], loss=mh["loss"], margin=mh["margin"],
        norm_exponent=mh["norm_exponent"], hyperparams=hyper.get("train", {}),
    )
    return model, dictionary


def export_text(model: EmbeddingModel, dictionary: Dictionary, out) -> None:
    """``feature<TAB>v1<TAB>...<TAB>vd`` per explicit feature, float32 values."""
    rows = model.lhs[:dictionary.n_unigrams].astype(np.float32)
    for tok, row in zip(dictionary.tokens, rows):
        out.write(tok + "\t" + "\t".join(str(v) for v in row) + "\n")
