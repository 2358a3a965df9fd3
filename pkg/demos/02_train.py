"""Pretrain the encoder on a handful of crops and watch the loss fall.

Run:  python3 demos/02_train.py [outdir]
"""
import sys
from pathlib import Path

from dht.corpus import toy_corpus
from dht.encoder import EncoderConfig, TrainHyper, init_state, mean_loss, save_checkpoint, train
from dht.kernels import KernelSpec
from dht.pipeline import score_images, summarize
from dht.selection import ICConfig

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

corpus = toy_corpus(size=32)[::2]
kernel, ic = KernelSpec("gaussian"), ICConfig("AICC")
cfg = EncoderConfig(d=8, seed=0)

start = init_state(cfg, 3)
print(f"{len(corpus)} images, untrained loss {mean_loss(corpus, start, kernel, ic):.5f}")


def show(epoch, loss, state):
    print(f"  epoch {epoch + 1}: mean loss {loss:.5f}")


res = train(corpus, cfg, TrainHyper(lr=1e-3, epochs=6, batch=4), kernel, ic, on_epoch=show)

# Training changes the features, so the merges and the selected cut change too.
for name, st in (("untrained", start), ("trained", res.state)):
    s = summarize(score_images(corpus, st, kernel, ic))
    print(f"{name:>9}: tokens/image {s['tokens']:.1f}  mse {s['mse']:.5f}  psnr {s['psnr']:.2f}  ssim {s['ssim']:.3f}")

save_checkpoint(out / "toy.ckpt", res.state, {"epoch_losses": res.epoch_losses})
print("checkpoint:", out / "toy.ckpt")
