"""Iterations needed to fit 8 synthetic clips perfectly, per learning rate.

Trains in chunks and evaluates on the training clips after each chunk; the
optimizer state carries across chunks so the run equals one long training.

    python scripts/overfit_sweep.py --lr 1e-4 1e-3 --max-iters 500 --every 50
"""
import argparse
import time

import numpy as np

from fightnet.data import ClipStore, PipelineConfig
from fightnet.model import ModelConfig, build_model
from fightnet.synthetic import blob_dataset
from fightnet.tensor import make_rng
from fightnet.train import RMSprop, TrainConfig, batch_order, bce_loss, evaluate


def sweep(lr, max_iters, every, seed):
    clips, labels = blob_dataset(8, 6, 20, seed=seed)
    store = ClipStore.from_arrays(clips, labels, PipelineConfig(num_frames=6, resize_size=20, crop_size=16))
    ids = store.ids()
    stats = store.norm_stats(ids)
    cfg = ModelConfig(backbone="tiny-cnn", aggregator_width=8, tiny_channels=(8, 16), head=(16, 1), frame_size=16)
    tcfg = TrainConfig(learning_rate=lr, batch_size=8, iterations=max_iters, seed=seed)
    model = build_model(cfg, make_rng(seed))
    opt = RMSprop(model.params, model.grads, tcfg)
    rng = make_rng(seed)
    order = batch_order(ids, rng)
    start = time.perf_counter()
    for it in range(1, max_iters + 1):
        batch = [next(order) for _ in range(tcfg.batch_size)]
        x = np.stack([store.train_input(c, rng, stats) for c in batch]).astype(model.dtype)
        y = np.array([store.label(c) for c in batch])
        model.train()
        model.zero_grads()
        p = model.forward(x)
        losses, dp = bce_loss(p, y)
        model.backward((dp / len(batch)).astype(model.dtype))
        opt.step()
        if it % every == 0:
            acc = evaluate(model, store, ids, stats).accuracy
            print(f"lr={lr:g} iter={it:4d} loss={losses.mean():.4f} train_acc={acc:.3f}")
            if acc == 1.0:
                return it, time.perf_counter() - start
    return None, time.perf_counter() - start


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lr", type=float, nargs="+", default=[1e-4, 1e-3])
    ap.add_argument("--max-iters", type=int, default=500)
    ap.add_argument("--every", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for lr in args.lr:
        it, secs = sweep(lr, args.max_iters, args.every, args.seed)
        status = f"100% at iteration {it}" if it else f"not fitted within {args.max_iters}"
        print(f"lr={lr:g}: {status} ({secs:.1f}s)")


if __name__ == "__main__":
    main()
