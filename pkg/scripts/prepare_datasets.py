"""Download, verify and convert the public benchmark datasets.

    python scripts/prepare_datasets.py ag_news dbpedia fb15k [--root data]
    python scripts/prepare_datasets.py ag_news --archive ~/Downloads/ag_news_csv.tgz

SHA-256 digests are written to <root>/CHECKSUMS.json the first time an
archive is fetched and checked on every later run; none are shipped.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import re
import shutil
import sys
import tarfile
import urllib.request
from pathlib import Path

log = logging.getLogger("prepare")

SOURCES = {
    "ag_news": "https://s3.amazonaws.com/fast-ai-nlp/ag_news_csv.tgz",
    "dbpedia": "https://s3.amazonaws.com/fast-ai-nlp/dbpedia_csv.tgz",
    "yelp15": "https://s3.amazonaws.com/fast-ai-nlp/yelp_review_full_csv.tgz",
    "fb15k": "https://everest.hds.utc.fr/lib/exe/fetch.php?media=en:fb15k.tgz",
}

_PUNCT = re.compile(r"([.,()!?])")
_DROP = re.compile(r"[;:\"]|<br />")


def normalize(text: str) -> str:
    """Lowercase, split off punctuation, drop quotes and colons."""
    text = text.lower().replace("'", " ' ")
    text = _DROP.sub(" ", text)
    text = _PUNCT.sub(r" \1 ", text)
    return " ".join(text.split())


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def fetch(name: str, root: Path, archive: Path | None) -> Path:
    dest = root / "archives" / f"{name}.tgz"
    dest.parent.mkdir(parents=True, exist_ok=True)
    if archive is not None:
        shutil.copyfile(archive, dest)
    elif not dest.exists():
        log.info("downloading %s", SOURCES[name])
        with urllib.request.urlopen(SOURCES[name], timeout=60) as r, open(dest, "wb") as f:
            shutil.copyfileobj(r, f)
    sums_path = root / "CHECKSUMS.json"
    sums = json.loads(sums_path.read_text()) if sums_path.exists() else {}
    digest = sha256(dest)
    if dest.name in sums and sums[dest.name] != digest:
        raise SystemExit(f"checksum mismatch for {dest}: expected {sums[dest.name]}, got {digest}")
    if dest.name not in sums:
        sums[dest.name] = digest
        sums_path.write_text(json.dumps(sums, indent=2, sort_keys=True) + "\n")
        log.info("recorded sha256 %s for %s", digest, dest.name)
    return dest


def _members(tar: tarfile.TarFile, suffix: str) -> tarfile.TarInfo:
    hits = [m for m in tar.getmembers() if m.name.endswith(suffix)]
    if len(hits) != 1:
        raise SystemExit(f"expected one member ending in {suffix!r}, found {len(hits)}")
    return hits[0]


def convert_csv(archive: Path, out_dir: Path) -> None:
    """fastText-style labeled text from the char-CNN CSV releases."""
    out_dir.mkdir(parents=True, exist_ok=True)
    with tarfile.open(archive) as tar:
        for split in ("train", "test"):
            raw = tar.extractfile(_members(tar, f"/{split}.csv"))
            rows = csv.reader(line.decode("utf-8") for line in raw)
            n = 0
            with open(out_dir / f"{split}.txt", "w", encoding="utf-8") as f:
                for row in rows:
                    f.write(f"__label__{row[0]} {normalize(' '.join(row[1:]))}\n")
                    n += 1
            log.info("%s/%s.txt: %d lines", out_dir.name, split, n)


def convert_fb15k(archive: Path, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with tarfile.open(archive) as tar:
        for split in ("train", "valid", "test"):
            raw = tar.extractfile(_members(tar, f"freebase_mtr100_mte100-{split}.txt"))
            n = 0
            with open(out_dir / f"{split}.txt", "w", encoding="utf-8") as f:
                for line in raw:
                    h, r, t = line.decode("utf-8").split()
                    f.write(f"{h}\t{r}\t{t}\n")
                    n += 1
            log.info("fb15k/%s.txt: %d triples", split, n)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("datasets", nargs="+", choices=sorted(SOURCES))
    ap.add_argument("--root", type=Path, default=Path("data"))
    ap.add_argument("--archive", type=Path, default=None, help="use a manually downloaded archive (one dataset)")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    if args.archive and len(args.datasets) != 1:
        ap.error("--archive needs exactly one dataset")
    for name in args.datasets:
        archive = fetch(name, args.root, args.archive)
        if name == "fb15k":
            convert_fb15k(archive, args.root / name)
        else:
            convert_csv(archive, args.root / name)
    return 0


if __name__ == "__main__":
    sys.exit(main())
