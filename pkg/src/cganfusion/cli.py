"""Command-line entry point: ``cganfusion {synth,prepare,train,predict,evaluate,scatter}``.

Exit codes: 0 ok, 2 invalid arguments, 3 data error, 4 numerical failure.
Every command is a thin wrapper over library calls.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import evaluate as ev
from .checkpoint import CheckpointError, load_checkpoint, load_generator
from .data import rfr
from .data.dataset import Dataset, write_dataset
from .data.ingest import ingest_scene_pair
from .data.pipeline import DataError, build_triplets, extract_patches, split_locations
from .data.synth import SynthConfig, synth_generate
from .models import checksum
from .raster import InvalidInputError, Raster
from .train import DEVICE_ENV, TrainConfig, train

EXIT_OK, EXIT_ARGS, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
PREDICTIONS_FORMAT = "cganfusion-predictions"

log = logging.getLogger("cganfusion")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(","))


def _paths(text: str) -> list[str]:
    return [p for p in text.split(",") if p]


def cmd_synth(args) -> int:
    size = args.size or args.patch_size
    scenes = args.locations if args.locations else args.scenes
    cfg = SynthConfig(
        scenes=scenes,
        size=size,
        patch_size=args.patch_size,
        dates=args.dates,
        fields=args.fields,
        phenology_amplitude=args.phenology_amplitude,
        coarse_factor=args.coarse_factor,
        cloud_probability=args.cloud_probability,
        texture=args.texture,
        coarse_upsample=args.coarse_upsample,
        split_ratios=args.ratios,
        qa_threshold=args.qa_threshold,
        seed=args.seed,
    )
    m = synth_generate(cfg, args.out)
    print(json.dumps({"manifest": str(Path(args.out) / "manifest.json"), "locations": m.location_counts,
                      "records": m.record_counts, "records_before_qa": m.meta["records_before_qa"]}))
    return EXIT_OK


def cmd_prepare(args) -> int:
    """Build a dataset from a JSON scene list of co-registered real scenes."""
    scenes = json.loads(Path(args.scenes).read_text())
    series = {}
    for s in scenes:
        pair = ingest_scene_pair(
            s["fine"], s["coarse"], s.get("qa"), s["date"],
            scene_id=s.get("scene_id", "scene"),
            fine_bands=args.fine_bands, coarse_bands=args.coarse_bands,
            fine_scale=args.fine_scale, fine_offset=args.fine_offset,
            coarse_scale=args.coarse_scale, coarse_offset=args.coarse_offset,
            resample=args.resample,
        )
        for loc, patch in extract_patches(pair, args.patch_size):
            series.setdefault(loc, []).append(patch)
    for loc in series:
        series[loc].sort(key=lambda p: p.date)
    manifest = split_locations(list(series), args.ratios, args.seed)
    manifest.patch_size = manifest.stride = args.patch_size
    manifest.qa_threshold = args.qa_threshold
    manifest.meta = {"source": "ingested", "scene_list": str(args.scenes),
                     "records_before_qa": sum(len(v) - 1 for v in series.values())}
    records = build_triplets(series, args.qa_threshold)
    m = write_dataset(records, manifest, Path(args.out) / "manifest.json")
    print(json.dumps({"locations": m.location_counts, "records": m.record_counts}))
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    base = TrainConfig.desk() if args.desk else TrainConfig()
    over = {
        "lr": args.lr, "lr_decay": args.lr_decay, "batch_size": args.batch_size, "d_steps": args.d_steps,
        "epochs": args.epochs, "alpha": args.alpha, "beta": args.beta, "width": args.width,
        "checkpoint_every": args.checkpoint_every,
    }
    d = {**base.__dict__, **{k: v for k, v in over.items() if v is not None}}
    d["seed"] = args.seed
    d["ssim_loss"] = not args.no_ssim_loss
    return TrainConfig.from_dict(d)


def cmd_train(args) -> int:
    cfg = _train_config(args)
    state = train(cfg, args.dataset, args.out, resume=args.resume)
    last = state.history[-1]
    print(json.dumps({"epochs": state.epoch, "steps": state.step, "d_steps": state.d_step,
                      "val_l1": last["val_l1"], "val_psnr": last["val_psnr"]}))
    return EXIT_OK


def _generator(path, device):
    if path is None:
        raise CheckpointError("method 'cgan' requires --checkpoint")
    return load_generator(path, device)


def cmd_predict(args) -> int:
    ds = Dataset(args.dataset)
    entries = ds.entries(args.split)
    records = [ds.load(e) for e in entries]
    if not records:
        raise DataError(f"split {args.split!r} is empty")
    device = _device()
    torch.manual_seed(args.seed)
    gen = _generator(args.checkpoint, device) if args.method == "cgan" else None
    preds = ev.predict_records(records, args.method, gen, args.stochastic, device)
    out = Path(args.out)
    (out / "records").mkdir(parents=True, exist_ok=True)
    index = []
    for e, p in zip(entries, preds):
        rel = f"records/{Path(e.file).stem}.rfr"
        arr = np.concatenate([p.data, p.mask[None].astype(np.float32)])
        index.append({"file": rel, "sha256": rfr.write_blob(out / rel, arr),
                      "location_id": e.location_id, "date_index": e.date_index})
    meta = {"format": PREDICTIONS_FORMAT, "version": 1, "method": args.method, "split": args.split,
            "dataset": str(Path(args.dataset).resolve()), "checkpoint": args.checkpoint,
            "stochastic": args.stochastic, "seed": args.seed, "records": index}
    (out / "predictions.json").write_text(json.dumps(meta, indent=1))
    print(json.dumps({"predictions": len(index), "out": str(out)}))
    return EXIT_OK


def load_predictions(pred_dir: str | Path, entries) -> tuple[str, list[Raster]]:
    pred_dir = Path(pred_dir)
    try:
        meta = json.loads((pred_dir / "predictions.json").read_text())
    except FileNotFoundError:
        raise DataError(f"no predictions.json in {pred_dir}") from None
    if meta.get("format") != PREDICTIONS_FORMAT:
        raise DataError(f"{pred_dir}: not a predictions directory")
    by_key = {(r["location_id"], r["date_index"]): r for r in meta["records"]}
    if len(by_key) != len(entries) or any((e.location_id, e.date_index) not in by_key for e in entries):
        raise DataError(f"{pred_dir}: predictions are misaligned with the evaluated split")
    out = []
    for e in entries:
        r = by_key[(e.location_id, e.date_index)]
        try:
            arr = rfr.read_blob(pred_dir / r["file"], r["sha256"])
        except rfr.BlobError as err:
            raise DataError(str(err)) from None
        out.append(Raster(arr[:-1], arr[-1] > 0.5))
    return meta["method"], out


def cmd_evaluate(args) -> int:
    ds = Dataset(args.dataset)
    entries = ds.entries(args.split)
    records = [ds.load(e) for e in entries]
    if not records:
        raise DataError(f"split {args.split!r} is empty")
    targets = [r.l_target for r in records]
    device = _device()
    report = ev.EvalReport(
        meta={"split": args.split, "dataset": str(Path(args.dataset).resolve()), "seed": args.seed,
              "predictions_clipped_to": [0.0, 1.0], "aggregation": "unweighted mean over records"}
    )
    methods = list(args.methods) if args.methods else []
    if not methods and not args.predictions:
        methods = ["bilinear", "starfm-homogeneous"] + (["cgan"] if args.checkpoints else [])
    for method in methods:
        if method == "cgan":
            if not args.checkpoints:
                raise CheckpointError("method 'cgan' requires --checkpoints")
            runs, ids = [], []
            for path in args.checkpoints:
                torch.manual_seed(args.seed)
                ckpt = load_checkpoint(path, device)
                ids.append({"path": str(path), "checksum": checksum(ckpt["generator"].cpu())})
                gen = ckpt["generator"].to(device)
                runs.append(ev.score_records(ev.predict_records(records, "cgan", gen, args.stochastic, device), targets))
            report.add("cgan", {**ev.average_scores(runs), "checkpoints": ids})
        else:
            report.add(method, ev.score_records(ev.predict_records(records, method), targets))
    for pred_dir in args.predictions or []:
        name, preds = load_predictions(pred_dir, entries)
        label = name if name not in report.rows else f"{name}:{Path(pred_dir).name}"
        report.add(label, {**ev.score_records(preds, targets), "predictions": str(pred_dir)})
    if not report.rows:
        raise InvalidInputError("nothing to evaluate")
    jpath, _ = report.write(args.out)
    print(report.format_table())
    log.info("report written to %s", jpath)
    return EXIT_OK


def cmd_scatter(args) -> int:
    ds = Dataset(args.dataset)
    records = [ds.load(e) for e in ds.entries(args.split)]
    if not records:
        raise DataError(f"split {args.split!r} is empty")
    device = _device()
    gen = _generator(args.checkpoint, device) if args.method == "cgan" else None
    preds = ev.predict_records(records, args.method, gen, False, device)
    p, t = ev.scatter_pairs(preds, [r.l_target for r in records], args.rate, args.seed)
    meta = {"method": args.method, "split": args.split, "rate": args.rate, "seed": args.seed,
            "checkpoint": args.checkpoint, "pixels_total": int(sum(r.mask.sum() for r in records))}
    path = ev.write_scatter(args.out, p, t, meta)
    print(json.dumps({"points_per_band": int(p.shape[1]), "out": str(path)}))
    return EXIT_OK


def _device() -> str:
    import os

    return os.environ.get(DEVICE_ENV, "cpu")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="JSON file of option defaults, optionally sectioned by command")
    common.add_argument("--out", default="out")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cganfusion", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic paired dataset")
    s.add_argument("--locations", type=int, default=None, help="one patch-sized scene per location")
    s.add_argument("--scenes", type=int, default=60)
    s.add_argument("--size", type=int, default=None, help="scene size (default: patch size)")
    s.add_argument("--patch-size", type=int, default=64)
    s.add_argument("--dates", type=int, default=8)
    s.add_argument("--fields", type=float, default=64.0)
    s.add_argument("--phenology-amplitude", type=float, default=1.0)
    s.add_argument("--coarse-factor", type=int, default=8)
    s.add_argument("--cloud-probability", type=float, default=0.1)
    s.add_argument("--texture", type=float, default=0.01)
    s.add_argument("--coarse-upsample", choices=("bilinear", "nearest"), default="bilinear")
    s.add_argument("--ratios", type=_floats, default=(0.70, 0.15, 0.15))
    s.add_argument("--qa-threshold", type=float, default=0.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("prepare", parents=[common], help="build a dataset from co-registered real scenes")
    s.add_argument("--scenes", required=True, help="JSON list of {scene_id, date, fine, coarse, qa}")
    s.add_argument("--patch-size", type=int, default=256)
    s.add_argument("--qa-threshold", type=float, default=0.0)
    s.add_argument("--ratios", type=_floats, default=(0.70, 0.15, 0.15))
    s.add_argument("--resample", action="store_true", help="bilinearly regrid coarse inputs onto the fine grid")
    s.add_argument("--fine-bands", type=_ints, default=None, help="source band indices for NIR,R,G,B")
    s.add_argument("--coarse-bands", type=_ints, default=None)
    s.add_argument("--fine-scale", type=float, default=1.0)
    s.add_argument("--fine-offset", type=float, default=0.0)
    s.add_argument("--coarse-scale", type=float, default=1.0)
    s.add_argument("--coarse-offset", type=float, default=0.0)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", parents=[common], help="train the cGAN")
    s.add_argument("--dataset", required=True, help="dataset manifest.json")
    s.add_argument("--desk", action="store_true", help="desk-scale defaults (batch 8, 30 epochs, half width)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--lr-decay", type=float)
    s.add_argument("--d-steps", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--width", type=float)
    s.add_argument("--checkpoint-every", type=int)
    s.add_argument("--no-ssim-loss", action="store_true")
    s.add_argument("--resume", help="checkpoint directory to resume from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="write predictions for a split")
    s.add_argument("--dataset", required=True)
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--method", required=True, choices=ev.METHODS)
    s.add_argument("--checkpoint")
    s.add_argument("--stochastic", action="store_true", help="keep dropout active (sample the generator)")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", parents=[common], help="per-method, per-band quality report")
    s.add_argument("--dataset", required=True)
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--methods", type=lambda t: [m for m in t.split(",") if m], default=None)
    s.add_argument("--checkpoints", type=_paths, default=None, help="comma-separated; metrics are averaged")
    s.add_argument("--predictions", type=_paths, default=None, help="comma-separated prediction directories")
    s.add_argument("--stochastic", action="store_true")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("scatter", parents=[common], help="export predicted-vs-truth pixel pairs per band")
    s.add_argument("--dataset", required=True)
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--method", default="cgan", choices=ev.METHODS)
    s.add_argument("--checkpoint")
    s.add_argument("--rate", type=float, default=0.01)
    s.set_defaults(func=cmd_scatter)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = json.loads(Path(known.config).read_text())
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    flat = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    for name, sp in subparsers.choices.items():
        values = {**flat, **cfg.get(name, {})}
        values = {k.replace("-", "_"): v for k, v in values.items()}
        dests = {a.dest for a in sp._actions}
        unknown = set(values) - dests
        if name in cfg and unknown:
            raise InvalidInputError(f"unknown {name} options in config: {sorted(unknown)}")
        sp.set_defaults(**{k: v for k, v in values.items() if k in dests})


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (OSError, json.JSONDecodeError, InvalidInputError) as e:
        print(f"error: bad --config: {e}", file=sys.stderr)
        return EXIT_ARGS
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_ARGS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, InvalidInputError, CheckpointError, rfr.BlobError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"invalid arguments: {e}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    sys.exit(main())
