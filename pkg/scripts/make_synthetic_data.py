"""Regenerate the bundled moving-blob dataset under data/synthetic/."""
import argparse
import os
import shutil

from fightnet.synthetic import write_blob_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", default=os.path.join(os.path.dirname(__file__), "..", "data", "synthetic"))
    ap.add_argument("--clips", type=int, default=20)
    ap.add_argument("--frames", type=int, default=12)
    ap.add_argument("--size", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if os.path.isdir(args.root):
        shutil.rmtree(args.root)
    path = write_blob_dataset(args.root, args.clips, args.frames, args.size, args.seed)
    print(f"wrote {args.clips} clips -> {os.path.normpath(path)}")


if __name__ == "__main__":
    main()
