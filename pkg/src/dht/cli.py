"""Command-line interface: ``dht tokenize | train | bench | vectorize | inspect``.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
3 numerical failure.  With ``--json-errors`` the error is written to stderr
as a single JSON line.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .corpus import load_corpus, toy_corpus
from .encoder import (
    CKPT_MAGIC,
    EncoderState,
    TrainingDiverged,
    init_state,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .hierarchy import HIER_MAGIC, save_hierarchy
from .imagegraph import ImageFormatError, load_image
from .pipeline import cell_state, grid, score_images, tokenize, vectorize_image
from .selection import save_partition
from .tokens import TOKEN_MAGIC, token_dump
from .vectorize import rasterize_svg, score_vectorization

log = logging.getLogger("dht")

EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class NumericError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# helpers


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    flat = {
        "kernel.kind": getattr(args, "kernel", None),
        "kernel.sigma": getattr(args, "sigma", None),
        "ic.criterion": getattr(args, "criterion", None),
        "ic.gn_shape": getattr(args, "gn_shape", None),
        "ic.df_scale": getattr(args, "df_scale", None),
        "encoder.d": getattr(args, "d", None),
        "tokens.q": getattr(args, "q", None),
        "tokens.p": getattr(args, "p", None),
        "train.lr": getattr(args, "lr", None),
        "train.epochs": getattr(args, "epochs", None),
        "train.batch": getattr(args, "batch", None),
        "vectorize.tol": getattr(args, "tol", None),
        "vectorize.coarse_level": getattr(args, "coarse_level", None),
        "seed": getattr(args, "seed", None),
        "io.checkpoint": getattr(args, "checkpoint", None),
        "io.out": getattr(args, "out", None),
    }
    if getattr(args, "on_raw_pixels", False):
        flat["ic.on_raw_pixels"] = True
    merged = cfg.to_flat()
    merged.update({k: v for k, v in flat.items() if v is not None})
    return RunConfig.from_flat(merged)


def _state_for(cfg: RunConfig, channels: int, untrained: bool) -> EncoderState:
    if cfg.checkpoint:
        state, _ = load_checkpoint(cfg.checkpoint)
        if state.channels != channels:
            raise UsageError(f"checkpoint expects {state.channels} channels, image has {channels}")
        return state
    if not untrained:
        raise UsageError("a checkpoint is required (pass --checkpoint or --untrained)")
    return init_state(cfg.encoder, channels, cfg.q)


def _require_out(cfg: RunConfig) -> str:
    if not cfg.out:
        raise UsageError("an output path is required (--out)")
    return cfg.out


def _corpus(args):
    if args.toy:
        xs = toy_corpus()
        return [f"toy-{i:02d}" for i in range(len(xs))], xs
    if not args.corpus:
        raise UsageError("give a corpus directory or --toy")
    if not Path(args.corpus).is_dir():
        raise FileNotFoundError(f"corpus directory not found: {args.corpus}")
    paths, images = load_corpus(args.corpus)
    if not images:
        raise FileNotFoundError(f"no readable images in {args.corpus}")
    return [p.name for p in paths], [im.data for im in images]


def _fmt(v: float) -> str:
    return repr(float(v))


# --------------------------------------------------------------------------
# commands


def cmd_tokenize(args) -> int:
    cfg = _config(args)
    out = _require_out(cfg)
    img = load_image(args.image)
    state = _state_for(cfg, img.channels, args.untrained)
    res = tokenize(img, state, cfg.kernel, cfg.ic, q=cfg.q, p=cfg.p, max_levels=cfg.max_levels)
    if not (np.isfinite(res.tokens.features).all() and np.isfinite(res.pruned.total_ic)):
        raise NumericError("non-finite token features")
    token_dump(res.tokens, out)
    if args.dump_labels:
        save_partition(args.dump_labels, res.pruned)
    if args.dump_hierarchy:
        save_hierarchy(args.dump_hierarchy, res.hierarchy)
    print(f"tokens {len(res.tokens)}")
    print(f"total_ic {res.pruned.total_ic!r}")
    return 0


def _write_loss_csv(path, losses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(losses):
            w.writerow([i + 1, _fmt(v)])


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _require_out(cfg)
    _, corpus = _corpus(args)
    channels = corpus[0].shape[2]
    if any(x.shape[2] != channels for x in corpus):
        raise UsageError("all corpus images must have the same channel count")
    prior: list[float] = []
    state = None
    if args.resume:
        state, extra = load_checkpoint(args.resume)
        prior = list(extra.get("epoch_losses", []))
        if state.channels != channels:
            raise UsageError(f"checkpoint expects {state.channels} channels, corpus has {channels}")
    else:
        state = init_state(cfg.encoder, channels, cfg.q)
    hyper = cfg.train
    threads = cfg.resolved_threads()
    try:
        res = train(corpus, state.config, hyper, cfg.kernel, cfg.ic, cfg.max_levels, state=state, q=cfg.q, threads=threads)
    except TrainingDiverged as exc:
        save_checkpoint(out, exc.state, {"epoch_losses": prior, "diverged": True})
        raise NumericError(str(exc)) from exc
    losses = prior + res.epoch_losses
    save_checkpoint(out, res.state, {"epoch_losses": losses})
    _write_loss_csv(args.loss_csv or out + ".loss.csv", losses)
    print(f"epochs {res.state.epochs_done}")
    if losses:
        print(f"final_loss {losses[-1]!r}")
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    out = _require_out(cfg)
    names, corpus = _corpus(args)
    cells = grid(
        args.kernels.split(","),
        [int(v) for v in args.dims.split(",")],
        args.criteria.split(","),
        [float(v) for v in args.gn_shapes.split(",")],
    )
    threads = cfg.resolved_threads()
    rows = []
    for cell in cells:
        if args.checkpoint_dir:
            state, _ = load_checkpoint(Path(args.checkpoint_dir) / f"{cell.name}.ckpt")
        else:
            hyper = None if args.untrained else cfg.train
            state = cell_state(cell, corpus, hyper, cfg.seed, cfg.q, cfg.max_levels, threads, cfg.kernel.sigma)
        ic = cell.ic_config(cfg.ic.df_scale, cfg.ic.on_raw_pixels)
        scores = score_images(corpus, state, cell.kernel_spec(cfg.kernel.sigma), ic, cfg.max_levels, threads)
        for name, s in zip(names, scores):
            rows.append(
                [cell.kernel, cell.d, cell.criterion, f"{cell.gn_shape:g}", name, s.tokens]
                + [_fmt(s.metrics.mse), _fmt(s.metrics.psnr), _fmt(s.metrics.ssim)]
            )
        log.info("cell %s done", cell.name)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kernel", "d", "criterion", "gn_shape", "image", "tokens", "mse", "psnr", "ssim"])
        w.writerows(rows)
    print(f"rows {len(rows)}")
    return 0


def cmd_vectorize(args) -> int:
    cfg = _config(args)
    out = _require_out(cfg)
    img = load_image(args.image)
    state = _state_for(cfg, img.channels, args.untrained)
    doc = vectorize_image(img, state, cfg.kernel, cfg.ic, cfg.tol, cfg.coarse_level, cfg.max_levels)
    svg = doc.to_svg()
    with open(out, "w") as fh:
        fh.write(svg)
    x = img.data if img.channels == 3 else np.repeat(img.data, 3, axis=2)
    rep = score_vectorization(x, rasterize_svg(svg))
    payload = {"paths": len(doc.paths), "coarse": len(doc.layer("coarse")), "fine": len(doc.layer("fine"))}
    payload.update(rep.as_dict())
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(payload, fh, indent=1)
    print(json.dumps(payload))
    return 0


def _inspect(path: Path) -> dict:
    with open(path, "rb") as fh:
        head = fh.read(16)
    if head[:8] == CKPT_MAGIC:
        state, extra = load_checkpoint(path)
        return {
            "kind": "checkpoint",
            "encoder": vars(state.config),
            "channels": state.channels,
            "q": state.q,
            "step": state.step,
            "epochs_done": state.epochs_done,
            "lambda": state.lam,
            "parameters": int(sum(a.size for a in state.params.values())),
            "epoch_losses": extra.get("epoch_losses", []),
        }
    if head[:8] == TOKEN_MAGIC:
        with open(str(path) + ".json") as fh:
            m = json.load(fh)
        return {"kind": "tokens", "count": m["count"], "channels": m["channels"], "q": m["q"], "p": m["p"]}
    if head[:8] == HIER_MAGIC:
        with open(str(path) + ".json") as fh:
            m = json.load(fh)
        return {"kind": "hierarchy", "height": m["height"], "width": m["width"], "region_counts": m["region_counts"]}
    img = load_image(path)
    return {"kind": "image", "height": img.height, "width": img.width, "channels": img.channels}


def cmd_inspect(args) -> int:
    print(json.dumps(_inspect(Path(args.path)), indent=1, default=str))
    return 0


# --------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--kernel", choices=("gaussian", "cosine", "tanimoto"))
    p.add_argument("--sigma", type=float, help="Gaussian kernel bandwidth")
    p.add_argument("--criterion", choices=("AIC", "AICC", "BIC", "GN"))
    p.add_argument("--gn-shape", type=float, help="generalized-normal shape b")
    p.add_argument("--df-scale", type=float)
    p.add_argument("--on-raw-pixels", action="store_true", help="score regions on raw pixels, not features")
    p.add_argument("--d", type=int, help="feature dimension")
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dht", description="Differentiable hierarchical superpixel tokenizer")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--json-errors", action="store_true", help="report errors as one JSON line on stderr")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("tokenize", help="tokenize one image")
    p.add_argument("image")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--untrained", action="store_true", help="use the seeded initialisation")
    p.add_argument("--q", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--dump-labels", metavar="PNG", help="16-bit label map of the selected regions")
    p.add_argument("--dump-hierarchy", metavar="PATH")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("train", help="pretrain the encoder on reconstruction")
    p.add_argument("corpus", nargs="?")
    p.add_argument("--toy", action="store_true", help="use the bundled toy corpus")
    _common(p)
    p.add_argument("--epochs", type=int, help="total epochs; a resumed run continues up to this count")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--resume", metavar="CKPT")
    p.add_argument("--loss-csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="reconstruction metrics over a config grid")
    p.add_argument("corpus", nargs="?")
    p.add_argument("--toy", action="store_true")
    _common(p)
    p.add_argument("--kernels", default="gaussian,cosine,tanimoto")
    p.add_argument("--dims", default="8")
    p.add_argument("--criteria", default="AICC")
    p.add_argument("--gn-shapes", default="2")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--untrained", action="store_true")
    g.add_argument("--checkpoint-dir")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("vectorize", help="convert an image to layered SVG")
    p.add_argument("image")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--untrained", action="store_true")
    p.add_argument("--tol", type=float)
    p.add_argument("--coarse-level", type=int)
    p.add_argument("--report", metavar="JSON")
    p.set_defaults(func=cmd_vectorize)

    p = sub.add_parser("inspect", help="describe a checkpoint, token file, hierarchy dump or image")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return ap


def _fail(args_json: bool, code: int, kind: str, msg: str) -> int:
    if args_json:
        sys.stderr.write(json.dumps({"error": kind, "message": msg, "exit_code": code}) + "\n")
    else:
        sys.stderr.write(f"dht: {kind}: {msg}\n")
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    # accepted anywhere on the command line, including after the subcommand
    json_errors = "--json-errors" in argv
    argv = [a for a in argv if a != "--json-errors"]
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(json_errors, EXIT_USAGE, "usage", str(exc))
    args.json_errors = json_errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        # BLAS stays single-threaded so results do not depend on the machine
        with threadpool_limits(limits=1):
            return args.func(args)
    except (UsageError, ConfigError) as exc:
        return _fail(args.json_errors, EXIT_USAGE, "usage", str(exc))
    except (OSError, ImageFormatError) as exc:
        return _fail(args.json_errors, EXIT_IO, "io", str(exc))
    except (NumericError, FloatingPointError, TrainingDiverged) as exc:
        return _fail(args.json_errors, EXIT_NUMERIC, "numeric", str(exc))
    except ValueError as exc:
        return _fail(args.json_errors, EXIT_USAGE, "usage", str(exc))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
