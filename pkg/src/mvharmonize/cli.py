"""Command line entry point: ``mvharmonize <subcommand> ...``.

Exit status is 0 on success, 1 for usage errors and 2 when the command
itself fails.  Every subcommand prints its resolved configuration as JSON
before doing any work.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import image_io
from ._validation import parse_dims

log = logging.getLogger("mvharmonize")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _dims(n):
    def parse(text):
        try:
            dims = parse_dims(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
        if len(dims) != n or min(dims) < 1:
            raise argparse.ArgumentTypeError(f"expected {n} positive sizes like {'x'.join(['8'] * n)}, got {text!r}")
        return dims
    return parse


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_sequence(manifest_path):
    m = image_io.read_manifest(manifest_path)
    frames = [image_io.load_image(p) for p in m.frame_paths]
    gts = None if m.ground_truth_paths is None else [image_io.load_image(p) for p in m.ground_truth_paths]
    return m, frames, gts


def _split_reference(m, items):
    ref = items[m.reference_index]
    rest = [x for i, x in enumerate(items) if i != m.reference_index]
    names = [Path(p).stem for i, p in enumerate(m.frame_paths) if i != m.reference_index]
    return ref, rest, names


# -- subcommands --------------------------------------------------------------

def cmd_simulate(args) -> None:
    from .isp_sim import generate_training_pair, synth_scene

    h, w = args.size
    frames = synth_scene(args.seed, args.frames, h, w, jitter=not args.aligned)
    pair = generate_training_pair(frames, args.seed, args.severity)
    out = Path(args.out)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    # The reference input already has the target appearance.
    gts = [pair.inputs[0]] + pair.targets
    frame_paths, gt_paths = [], []
    for i, (inp, gt) in enumerate(zip(pair.inputs, gts)):
        name = f"frame_{i:03d}.png"
        image_io.save_image(inp, out / "frames" / name)
        image_io.save_image(gt, out / "gt" / name)
        frame_paths.append(f"frames/{name}")
        gt_paths.append(f"gt/{name}")
    _write_json([p.to_dict() for p in pair.params], out / "params.json")
    manifest = image_io.SequenceManifest(f"synthetic_{args.seed}", 0, frame_paths, gt_paths)
    image_io.write_manifest(manifest, out / "manifest.json")
    print(f"wrote {len(frame_paths)} frames to {out}")


def cmd_fit_grid(args) -> None:
    from .grid_fit import FitConfig, fit_grid_pair, masked_mae, unsaturated_mask
    from .bilateral_grid import slice_affine

    src = image_io.load_image(args.source)
    tgt = image_io.load_image(args.target)
    cfg = FitConfig(steps=args.steps, lr=args.lr, lambda_tv=args.lambda_tv, grid_dims=args.dims)
    grid, history = fit_grid_pair(src, tgt, cfg)
    image_io.write_grid(grid.numpy(), args.out)
    fitted = slice_affine(grid, torch.as_tensor(src)).numpy()
    mae = masked_mae(fitted, tgt, unsaturated_mask(src, tgt))
    print(f"initial loss {history[0]:.6g}  final loss {history[-1]:.6g}  masked MAE {mae:.6g}")


def _scenes_from_dir(root: Path):
    manifests = sorted(root.rglob("manifest.json"))
    if not manifests:
        raise FileNotFoundError(f"no manifest.json files under {root}")
    scenes = []
    for mp in manifests:
        m, frames, gts = _load_sequence(mp)
        # Training needs appearance-consistent sequences: prefer ground truth.
        scenes.append(gts if gts is not None else frames)
    return scenes


def cmd_train(args) -> None:
    from .training import TrainConfig, synthetic_scenes, train
    from .transformer import ModelConfig, save_checkpoint

    torch.manual_seed(args.seed)
    if args.data == "synthetic":
        scenes = synthetic_scenes(args.scenes, args.frames, size=args.size, seed=args.seed)
    else:
        scenes = _scenes_from_dir(Path(args.data))
    size = tuple(scenes[0][0].shape[:2])
    cfg = TrainConfig(
        alpha=args.alpha, lambda_tv=args.lambda_tv, lr=args.lr, iterations=args.iters, seed=args.seed,
        severity=args.severity, frames_per_batch=args.frames_per_batch, augment=not args.no_augment,
        log_every=args.log_every,
    )
    result = train(scenes, cfg, ModelConfig(image_size=size), log_path=args.log)
    save_checkpoint(result.model, args.out)
    if result.history:
        print(f"final loss {result.history[-1]['loss']:.6g} after {len(result.history)} steps")
    print(f"checkpoint written to {args.out}")


def _harmonize(manifest_path, ckpt):
    from .transformer import harmonize_sequence, load_checkpoint

    m, frames, gts = _load_sequence(manifest_path)
    if len(frames) < 2:
        raise ValueError("the manifest needs a reference and at least one source frame")
    model = load_checkpoint(ckpt)
    ref, sources, names = _split_reference(m, frames)
    out, conf, grids, cgrids = harmonize_sequence(model, ref, sources)
    return m, frames, gts, names, out, conf, grids, cgrids


def cmd_harmonize(args) -> None:
    from .uncertainty import normalize_confidences

    _, _, _, names, out, conf, grids, cgrids = _harmonize(args.manifest, args.ckpt)
    root = Path(args.out)
    for sub in ("harmonized", "confidence", "grids"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    shown = normalize_confidences([c[..., 0] for c in conf])
    for name, img, c, g, cg in zip(names, out, shown, grids, cgrids):
        image_io.save_image(np.clip(img, 0.0, 1.0), root / "harmonized" / f"{name}.png")
        image_io.save_image(c, root / "confidence" / f"{name}.png")
        image_io.write_grid(g, root / "grids" / f"{name}.bgrd")
        image_io.write_grid(cg, root / "grids" / f"{name}_conf.bgrd")
    print(f"harmonized {len(names)} frames into {root}")


def cmd_recon_demo(args) -> None:
    from .uncertainty import toy_reconstruct, weighted_stage_steps

    m, frames, gts, _, out, conf, _, _ = _harmonize(args.manifest, args.ckpt)
    truth = None if gts is None else gts[m.reference_index]
    stage_end = weighted_stage_steps(args.iters, args.weighted_fraction) - 1
    report = {"iters": args.iters, "weighted_fraction": args.weighted_fraction, "frames": len(out)}

    def track(k, latent):
        if truth is not None and k == stage_end:
            report["mae_stage1"] = float(np.abs(np.clip(latent, 0, 1) - truth).mean())

    harmonized = [np.clip(o, 0.0, 1.0) for o in out]
    latent = toy_reconstruct(harmonized, conf, iters=args.iters, weighted_fraction=args.weighted_fraction,
                             callback=track)
    latent = np.clip(latent, 0.0, 1.0)
    if truth is not None:
        report["mae_initial"] = float(np.abs(np.median(np.stack(harmonized), axis=0) - truth).mean())
        report["mae_final"] = float(np.abs(latent - truth).mean())
    image_io.save_image(latent, args.out)
    if args.report:
        _write_json(report, args.report)
    print(json.dumps(report, sort_keys=True))


def _pngs(folder) -> dict:
    folder = Path(folder)
    if not folder.is_dir():
        raise FileNotFoundError(f"{folder} is not a directory")
    return {p.name: p for p in sorted(folder.glob("*.png"))}


def cmd_eval(args) -> None:
    from .metrics import evaluate_sequence

    renders, gts = _pngs(args.renders), _pngs(args.gt)
    names = sorted(set(renders) & set(gts))
    if not names:
        raise ValueError("no PNG file names shared between the render and ground-truth folders")
    missing = sorted(set(renders) ^ set(gts))
    if missing:
        log.warning("ignoring unmatched files: %s", ", ".join(missing))
    report = evaluate_sequence([image_io.load_image(renders[n]) for n in names],
                               [image_io.load_image(gts[n]) for n in names]).to_dict()
    report["names"] = names
    _write_json(report, args.out)
    print(f"PSNR {report['mean_psnr']:.3f}  SSIM {report['mean_ssim']:.4f}  "
          f"PSNR_CC {report['mean_psnr_cc']:.3f}  SSIM_CC {report['mean_ssim_cc']:.4f}")


def cmd_selfcheck(args) -> None:
    from .selfcheck import run_selfcheck

    results = run_selfcheck(seed=args.seed)
    width = max(len(name) for name, _, _ in results)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    if not all(ok for _, ok, _ in results):
        raise RuntimeError("selfcheck failed")


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mvharmonize", description="Bilateral-grid appearance harmonization toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="write a synthetic corrupted sequence with ground truth")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int, default=6)
    s.add_argument("--severity", type=float, default=0.7)
    s.add_argument("--size", type=_dims(2), default=(64, 64), help="HxW")
    s.add_argument("--aligned", action="store_true", help="identical viewpoints (for recon-demo)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit-grid", help="fit one bilateral grid mapping source to target")
    s.add_argument("--source", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--lr", type=float, default=1e-2)
    s.add_argument("--lambda-tv", type=float, default=1e-3)
    s.add_argument("--dims", type=_dims(3), default=(8, 8, 8), help="HxWxD")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_fit_grid)

    s = sub.add_parser("train", help="train the grid transformer")
    s.add_argument("--data", default="synthetic", help="'synthetic' or a folder of manifest.json sequences")
    s.add_argument("--out", required=True)
    s.add_argument("--iters", type=int, default=5000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--alpha", type=float, default=0.1)
    s.add_argument("--lambda-tv", type=float, default=1e-3)
    s.add_argument("--lr", type=float, default=2e-4)
    s.add_argument("--severity", type=float, default=0.7)
    s.add_argument("--scenes", type=int, default=32, help="synthetic scene count")
    s.add_argument("--frames", type=int, default=12, help="frames per synthetic scene")
    s.add_argument("--size", type=_dims(2), default=(64, 64), help="synthetic frame size HxW")
    s.add_argument("--frames-per-batch", type=int, default=10)
    s.add_argument("--no-augment", action="store_true")
    s.add_argument("--log", default=None, help="CSV metrics log path")
    s.add_argument("--log-every", type=int, default=50)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("harmonize", help="harmonize a sequence toward its reference frame")
    s.add_argument("--manifest", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_harmonize)

    s = sub.add_parser("recon-demo", help="confidence-weighted toy reconstruction")
    s.add_argument("--manifest", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--iters", type=int, default=400)
    s.add_argument("--weighted-fraction", type=float, default=0.25)
    s.add_argument("--out", required=True)
    s.add_argument("--report", default=None)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_recon_demo)

    s = sub.add_parser("eval", help="PSNR/SSIM with and without colour correction")
    s.add_argument("--renders", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("selfcheck", help="run built-in numerical consistency checks")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_selfcheck)
    return p


def _resolved(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k == "func":
            continue
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    print(json.dumps(_resolved(args), sort_keys=True))
    try:
        args.func(args)
    except (ValueError, OSError, FloatingPointError, RuntimeError) as exc:
        print(f"mvharmonize {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
