#!/usr/bin/env python3
"""Download the MovieLens-100k rating log and write it as ``user<TAB>item<TAB>timestamp``.

Sources, tried in order:
  1. the GroupLens archive (``ml-100k/u.data``)
  2. the copy bundled in the ``recbole`` wheel (``pip download --no-deps recbole``)

Usage: python scripts/fetch_ml100k.py [--out data/ml-100k.tsv]
"""

from __future__ import annotations

import argparse
import io
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
WHEEL_MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def from_grouplens(timeout=30) -> list[tuple[str, str, str]]:
    with urllib.request.urlopen(GROUPLENS, timeout=timeout) as resp:
        blob = resp.read()
    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        text = zf.read("ml-100k/u.data").decode("utf-8")
    rows = []
    for line in text.splitlines():
        if line.strip():
            user, item, _rating, ts = line.split("\t")
            rows.append((user, item, ts))
    return rows


def from_recbole_wheel() -> list[tuple[str, str, str]]:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "--quiet", "-d", tmp, "recbole"],
            check=True,
        )
        wheel = next(Path(tmp).glob("recbole-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            text = zf.read(WHEEL_MEMBER).decode("utf-8")
    rows = []
    for line in text.splitlines()[1:]:  # header: user_id:token item_id:token rating:float timestamp:float
        if line.strip():
            user, item, _rating, ts = line.split("\t")
            rows.append((user, item, str(int(float(ts)))))
    return rows


def fetch(out: Path) -> Path:
    rows = None
    for source in (from_grouplens, from_recbole_wheel):
        try:
            rows = source()
            print(f"fetched {len(rows)} events via {source.__name__}", file=sys.stderr)
            break
        except Exception as exc:  # noqa: BLE001 - any failure means try the next source
            print(f"{source.__name__} failed: {exc}", file=sys.stderr)
    if not rows:
        raise SystemExit("could not obtain ML-100k from any source")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(f"{u}\t{i}\t{t}\n" for u, i, t in rows), encoding="utf-8")
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data" / "ml-100k.tsv"))
    args = p.parse_args(argv)
    print(fetch(Path(args.out)))


if __name__ == "__main__":
    main()
