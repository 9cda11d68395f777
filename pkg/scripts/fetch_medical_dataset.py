#!/usr/bin/env python3
"""Fetch the public medical-abstract classification dataset and convert it
to this package's TSV corpus format (``label<TAB>text``).

The source is the Medical-Text-Classification repository by SnehaVM on
GitHub: medical abstracts, one of five disease categories each.  This
script is the only place in the project that touches the network; the
library and the test suite never download anything.  If the upstream file
layout has changed, download the raw files manually and pass them via
--train-file/--test-file.
"""
import argparse
import sys
import urllib.request
from pathlib import Path

BASE = "https://raw.githubusercontent.com/SnehaVM/Medical-Text-Classification/master"
CANDIDATES = ["train.dat", "data/train.dat", "train.csv", "data/train.csv"]

LABEL_NAMES = {
    "1": "digestive-system-diseases",
    "2": "cardiovascular-diseases",
    "3": "neoplasms",
    "4": "nervous-system-diseases",
    "5": "general-pathological-conditions",
}


def fetch_first(candidates):
    for name in candidates:
        url = f"{BASE}/{name}"
        try:
            with urllib.request.urlopen(url, timeout=30) as response:
                print(f"fetched {url}", file=sys.stderr)
                return response.read().decode("utf-8", errors="replace")
        except Exception as exc:  # noqa: BLE001 - try the next candidate
            print(f"  {url}: {exc}", file=sys.stderr)
    raise SystemExit("could not locate the labeled training file; pass --train-file")


def convert(raw: str) -> list[str]:
    lines = []
    for line in raw.splitlines():
        line = line.strip()
        if not line:
            continue
        label, _, text = line.partition("\t")
        label = label.strip()
        if label not in LABEL_NAMES or not text.strip():
            continue
        text = " ".join(text.split())
        lines.append(f"{LABEL_NAMES[label]}\t{text}")
    return lines


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--train-file", help="already-downloaded labeled file")
    parser.add_argument("--output", default="data/medical.tsv")
    args = parser.parse_args()

    raw = Path(args.train_file).read_text(encoding="utf-8") if args.train_file else fetch_first(CANDIDATES)
    lines = convert(raw)
    if not lines:
        raise SystemExit("no labeled lines recognized; check the input format")
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} documents to {out}")


if __name__ == "__main__":
    main()
