"""Command line front end: keygen, generate, extract, evaluate, dump-schedule.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 verification
failure (extracted watermark not detected against the sidecar's).
"""
from __future__ import annotations

import argparse
import json
import logging
import secrets
import sys
from pathlib import Path

from .codec import Watermark, bit_accuracy
from .config import RunConfig, key_from_seed
from .edict import DiffusionSchedule
from .errors import CodecError, ConfigError, DistortionError, ShapeError
from .latent import make_rng, save_latent
from .stats import Campaign, detect, evaluate, threshold_bits
from .toy import MODES, ToyPipeline, read_pgm, write_pgm

log = logging.getLogger("gsedict")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_VERIFY = 0, 2, 3, 4


class CliIOError(Exception):
    pass


def write_key_file(path: Path, key: bytes, nonce: bytes) -> None:
    path.write_text(f"key = {key.hex()}\nnonce = {nonce.hex()}\n")


def read_key_file(path) -> tuple[bytes, bytes]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliIOError(f"cannot read key file {path}: {exc}") from None
    vals = {}
    for line in text.splitlines():
        k, sep, v = line.partition("=")
        if sep:
            vals[k.strip()] = v.strip()
    try:
        key, nonce = bytes.fromhex(vals["key"]), bytes.fromhex(vals["nonce"])
    except (KeyError, ValueError):
        raise ConfigError(f"{path}: expected 'key = <64 hex>' and 'nonce = <24 hex>'") from None
    if len(key) != 32 or len(nonce) != 12:
        raise ConfigError(f"{path}: key must be 32 bytes and nonce 12 bytes")
    return key, nonce


def _load_config(path) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig()


def _sidecar_path(image: Path) -> Path:
    return image.with_suffix(".json")


def cmd_keygen(args) -> int:
    out = Path(args.out)
    if out.exists() and not args.force:
        raise CliIOError(f"{out} exists; pass --force to overwrite")
    if args.seed is None:
        key, nonce = secrets.token_bytes(32), secrets.token_bytes(12)
    else:
        key, nonce = key_from_seed(args.seed)
    write_key_file(out, key, nonce)
    print(out)
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = _load_config(args.config)
    key, nonce = read_key_file(args.key_file)
    wcfg = cfg.watermark_config(key, nonce)
    if args.watermark:
        w = Watermark.from_hex(args.watermark, wcfg)
    else:
        wseed = args.seed if args.watermark_seed is None else args.watermark_seed
        w = Watermark.random(wcfg, make_rng(wseed))
    pipe = ToyPipeline(wcfg, cfg.steps, cfg.p, cfg.gamma, cfg.denoiser_seed)
    img, z_T = pipe.generate(w, args.seed, args.mode)
    out = Path(args.out)
    try:
        write_pgm(out, img)
        if args.latent_out:
            save_latent(args.latent_out, z_T)
        sidecar = {"watermark": w.to_hex(), "seed": args.seed, "mode": args.mode,
                   "config_hash": cfg.hash(), "capacity": wcfg.capacity}
        _sidecar_path(out).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise CliIOError(str(exc)) from None
    print(out)
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = _load_config(args.config)
    key, nonce = read_key_file(args.key_file)
    wcfg = cfg.watermark_config(key, nonce)
    try:
        img = read_pgm(args.image)
    except (OSError, ValueError) as exc:
        raise CliIOError(f"cannot read image {args.image}: {exc}") from None
    pipe = ToyPipeline(wcfg, cfg.steps, cfg.p, cfg.gamma, cfg.denoiser_seed)
    try:
        w_hat = pipe.recover(img, args.mode)
    except ShapeError as exc:
        raise ConfigError(f"image does not match latent shape {cfg.latent_shape}: {exc}") from None
    result = {"watermark": w_hat.to_hex(), "mode": args.mode}
    status = EXIT_OK
    sidecar = Path(args.sidecar) if args.sidecar else _sidecar_path(Path(args.image))
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        if meta.get("config_hash") != cfg.hash():
            log.warning("config hash %s differs from sidecar's %s; results may be meaningless",
                        cfg.hash(), meta.get("config_hash"))
        w = Watermark.from_hex(meta["watermark"], wcfg)
        acc = bit_accuracy(w, w_hat)
        ok = detect(acc, len(w), cfg.fpr)
        result.update(bit_accuracy=acc, detected=ok,
                      threshold_bits=threshold_bits(len(w), cfg.fpr))
        if not ok:
            status = EXIT_VERIFY
    print(json.dumps(result, sort_keys=True))
    return status


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    key, nonce = key_from_seed(cfg.key_seed)
    campaign = Campaign(
        config=cfg.watermark_config(key, nonce), n_images=cfg.n_images,
        distortions=cfg.distortion_list(), modes=cfg.modes, steps=cfg.steps, p=cfg.p,
        gamma=cfg.gamma, denoiser_seed=cfg.denoiser_seed, image_seed=cfg.image_seed,
        user_seed=cfg.user_seed, distortion_seed=cfg.distortion_seed,
        n_users=cfg.n_users, fpr=cfg.fpr, workers=cfg.workers)
    report = evaluate(campaign)
    out = Path(args.output_dir or cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(report.to_csv())
        summary = report.summary()
        summary["config_hash"] = cfg.hash()
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise CliIOError(str(exc)) from None
    print(report.format_table())
    th = report.thresholds()
    if th:
        print(f"detect threshold {th['detect_bits']}/{th['n_bits']} bits "
              f"({th['detect_fraction']:.4f}; quoted {th['quoted_detect_fraction']:.2f})")
    return EXIT_OK


def cmd_dump_schedule(args) -> int:
    text = DiffusionSchedule.linear(args.steps).dumps()
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            raise CliIOError(str(exc)) from None
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gsedict", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="write a key/nonce file")
    p.add_argument("out")
    p.add_argument("--seed", type=int, help="derive the key deterministically")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("generate", help="generate a watermarked toy image")
    p.add_argument("--config")
    p.add_argument("--key-file", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--watermark", help="watermark bits as hex")
    g.add_argument("--random-watermark", action="store_true")
    p.add_argument("--watermark-seed", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=MODES, default="edict")
    p.add_argument("--out", required=True, help="output .pgm; sidecar goes next to it as .json")
    p.add_argument("--latent-out", help="also write z_T as a .lat file")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("extract", help="recover the watermark from an image")
    p.add_argument("image")
    p.add_argument("--config")
    p.add_argument("--key-file", required=True)
    p.add_argument("--mode", choices=MODES, default="edict")
    p.add_argument("--sidecar")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("evaluate", help="run a distortion x mode campaign")
    p.add_argument("config")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("dump-schedule", help="print the alpha-bar schedule")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump_schedule)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CodecError, DistortionError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except CliIOError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
