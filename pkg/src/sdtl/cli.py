"""``sdtl`` command line: synth-data, train, enhance, eval, gradcheck.

Exit codes: 0 success, 1 runtime or verification failure, 2 usage or
configuration error.
"""
import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from sdtl.config import RunConfig, parse_value
from sdtl.errors import ConfigError, SdtlError

log = logging.getLogger("sdtl")


def _rng(seed, *keys):
    return np.random.default_rng([seed, *keys])


def _map(fn, items, jobs):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- synth-data ----------------------------------------------------------

def cmd_synth_data(args):
    from sdtl.data import ImageBuf, list_images, load_image, save_image, synth_lowlight

    src = Path(args.src)
    if not src.is_dir():
        raise OSError(f"source directory {src} does not exist")
    files = list_images(src)
    if args.count is not None:
        files = files[:args.count]
    if not files:
        raise OSError(f"no readable images in {src}")
    out = Path(args.out)
    (out / "low").mkdir(parents=True, exist_ok=True)
    (out / "high").mkdir(parents=True, exist_ok=True)
    for i, path in enumerate(files):
        high = load_image(path)
        low = synth_lowlight(high, args.gamma, args.sigma, _rng(args.seed, i))
        name = path.stem + "." + args.format
        save_image(out / "high" / name, ImageBuf(high.pixels))
        save_image(out / "low" / name, low)
    print(f"wrote {len(files)} pairs to {out}")
    return 0


# -- train ---------------------------------------------------------------

def _load_config(args):
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        types = {f: t for f, t in RunConfig.__annotations__.items()}
        if key not in types:
            raise ConfigError(f"--set: unknown key {key!r}")
        try:
            overrides[key] = parse_value(types[key], value)
        except ValueError:
            raise ConfigError(f"--set: bad value {value!r} for {key!r}") from None
    for key in ("epochs", "seed"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    return cfg.replace(**overrides) if overrides else cfg


def cmd_train(args):
    from sdtl.data import PairedDataset
    from sdtl.pipeline import SdtlModel, subsystem_rngs, train_loop

    cfg = _load_config(args)
    dataset = PairedDataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    rngs = subsystem_rngs(cfg.seed)
    model = SdtlModel(cfg, rngs[0])
    held_out = dataset[0] if args.holdout else None
    log_path = out / "train_log.csv"
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,lr,loss,l_diff,l_hf\n")

        def on_epoch(rec):
            line = (f"epoch {rec['epoch']} lr={rec['lr']:.6g} loss={rec['loss']:.6f} "
                    f"l_diff={rec['l_diff']:.6f} l_hf={rec['l_hf']:.6f}")
            if "psnr" in rec:
                line += f" psnr={rec['psnr']:.3f} ssim={rec['ssim']:.4f}"
            print(line, flush=True)
            fh.write(f"{rec['epoch']},{rec['lr']!r},{rec['loss']!r},{rec['l_diff']!r},{rec['l_hf']!r}\n")

        result = train_loop(model, dataset, cfg, out_dir=out, held_out=held_out, rngs=rngs,
                            on_epoch=on_epoch)
    final = result.history[-1]
    print(f"final loss={final['loss']!r} steps={result.steps} checkpoint={result.checkpoints[-1]}")
    return 0


# -- enhance -------------------------------------------------------------

def cmd_enhance(args):
    from sdtl.data import ImageBuf, list_images, load_image, save_image
    from sdtl.pipeline import enhance, load_model

    cfg = RunConfig.from_file(args.config) if args.config else None
    model = load_model(args.ckpt, cfg)
    if args.steps > model.schedule.T:
        raise ConfigError(f"--steps {args.steps} exceeds T = {model.schedule.T}")
    files = list_images(args.inp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def run(item):
        i, path = item
        try:
            img = load_image(path)
            res = enhance(model, img.to_chw(), args.steps, _rng(args.seed, i))
            save_image(out / path.name, ImageBuf.from_chw(res))
            return None
        except (SdtlError, OSError) as exc:
            return f"{path.name}: {exc}"

    errors = [e for e in _map(run, list(enumerate(files)), args.jobs) if e]
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    print(f"enhanced {len(files) - len(errors)}/{len(files)} images into {out}")
    return 1 if errors else 0


# -- eval ----------------------------------------------------------------

def cmd_eval(args):
    from sdtl.data import list_images, load_image
    from sdtl.metrics import MetricReport, evaluate_pair

    preds = {p.stem: p for p in list_images(args.pred)}
    gts = {p.stem: p for p in list_images(args.gt)}
    common = sorted(set(preds) & set(gts))
    unmatched = sorted(set(preds) ^ set(gts))
    for stem in unmatched:
        side = "pred" if stem in preds else "gt"
        print(f"unmatched {side} file: {stem}", file=sys.stderr)
    if not common:
        print("error: no matching filenames between --pred and --gt", file=sys.stderr)
        return 1

    def run(stem):
        return (preds[stem].name,) + evaluate_pair(load_image(preds[stem]), load_image(gts[stem]))

    report = MetricReport()
    for name, p, s in _map(run, common, args.jobs):
        report.add(name, p, s)
    report.write_csv(args.out)
    print(f"MEAN,{report.mean_psnr:.6f},{report.mean_ssim:.6f}")
    return 1 if unmatched else 0


# -- gradcheck -----------------------------------------------------------

def cmd_gradcheck(args, checks=None):
    from sdtl.gradcheck import run_suite

    def report(row):
        name, kind, err, tol, ok = row
        print(f"{'PASS' if ok else 'FAIL'} {kind:9s} {name:20s} max_rel_err={err:.3e} tol={tol:.0e}",
              flush=True)

    rows = run_suite(seed=args.seed, seeds=args.seeds, checks=checks, report=report)
    failed = [r[0] for r in rows if not r[4]]
    if failed:
        print("failing ops: " + ", ".join(failed))
        return 1
    print(f"all {len(rows)} checks passed")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="sdtl", description="Structure-guided diffusion transformer for low-light enhancement")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="build a paired low/high dataset by synthetic darkening")
    s.add_argument("--src", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--gamma", type=float, default=3.0)
    s.add_argument("--sigma", type=float, default=0.03)
    s.add_argument("--count", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", choices=["ppm", "png"], default="ppm")
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config", default=None)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.add_argument("--holdout", action="store_true", help="log PSNR/SSIM on the first pair at checkpoints")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("enhance", help="enhance every image in a directory")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--config", default=None, help="defaults to <ckpt>.cfg")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("eval", help="PSNR/SSIM report for matching filenames")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference verification of every differentiable op")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--seeds", type=int, default=20)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (SdtlError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
