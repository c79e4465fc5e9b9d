"""Train the three headline configurations on the default synthetic corpus.

Prints held-out accuracy, epochs and wall time per model for one grid cell.

    python scripts/learning_sanity.py --obs 2 --pred 3 --archs lstm2,cnn3,tn2
"""
import argparse
import json
import time

from lanecast.synthetic import SyntheticSpec, generate_recordings
from lanecast.train_eval import TrainConfig, prepare_cell, run_cell


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--obs", type=float, default=2.0)
    ap.add_argument("--pred", type=float, default=3.0)
    ap.add_argument("--archs", default="lstm2,cnn3,tn2")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-epochs", type=int, default=200)
    ap.add_argument("--json", action="store_true", help="dump full result rows")
    args = ap.parse_args()

    recs, _ = generate_recordings(SyntheticSpec(seed=args.seed))
    _, _, arrays = prepare_cell(recs, args.obs, args.pred, args.seed)
    print("split sizes", {k: len(v[1]) for k, v in arrays.items()}, flush=True)
    tc = TrainConfig(max_epochs=args.max_epochs, seed=args.seed)
    for arch in args.archs.split(","):
        t0 = time.perf_counter()
        res = run_cell(arch, arrays, args.obs, args.pred, args.seed, tc)
        dt = time.perf_counter() - t0
        m = res["metrics"]
        print(
            f"{arch:6s} acc {m['acc']:6.2f}%  train {m['train_acc']:6.2f}%  "
            f"epochs {len(res['history']['train_loss']):3d} (best {res['history']['best_epoch']})  {dt:6.1f}s",
            flush=True,
        )
        if args.json:
            print(json.dumps(res, sort_keys=True), flush=True)


if __name__ == "__main__":
    main()
