#!/usr/bin/env python3
"""Stand-in external detector used by the test suite.

Reads the image list, then writes one prediction file per image into the
output directory by copying canned files from --preds (empty file when no
canned prediction exists). Can also fail on demand, skip images, or emit
a timing sidecar.
"""

import argparse
import shutil
import sys
from pathlib import Path


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("input_list")
    parser.add_argument("output_dir")
    parser.add_argument("--preds")
    parser.add_argument("--skip", action="append", default=[])
    parser.add_argument("--fail", action="store_true")
    parser.add_argument("--sidecar", nargs=3, type=float, metavar=("PRE", "INF", "POST"))
    args = parser.parse_args()

    if args.fail:
        print("detector exploded", file=sys.stderr)
        return 1

    out = Path(args.output_dir)
    stems = [
        Path(line).stem
        for line in Path(args.input_list).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    for stem in stems:
        if stem in args.skip:
            continue
        dst = out / f"{stem}.txt"
        src = Path(args.preds) / f"{stem}.txt" if args.preds else None
        if src is not None and src.exists():
            shutil.copyfile(src, dst)
        else:
            dst.write_text("", encoding="utf-8")

    if args.sidecar:
        pre, inf, post = args.sidecar
        rows = "".join(f"{stem} {pre} {inf} {post}\n" for stem in stems)
        (out / "timings.txt").write_text(rows, encoding="utf-8")
    return 0


if __name__ == "__main__":
    sys.exit(main())
