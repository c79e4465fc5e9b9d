"""Write the default synthetic corpus (or a scaled variant) and print its class counts.

    python scripts/generate_corpus.py --out data/synthetic --tracks 1500
"""
import argparse
from collections import Counter
from dataclasses import replace

from lanecast.synthetic import SyntheticSpec, generate_corpus, generate_recordings


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--tracks", type=int, default=SyntheticSpec.n_tracks)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = replace(SyntheticSpec(), n_tracks=args.tracks, seed=args.seed)
    paths = generate_corpus(spec, args.out)
    _, truth = generate_recordings(spec)
    print(f"{len(paths)} files, {spec.n_recordings} recordings, {spec.n_tracks} tracks")
    print("lane changes:", dict(Counter(g.maneuver for g in truth)))


if __name__ == "__main__":
    main()
