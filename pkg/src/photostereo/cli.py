"""Command-line entry point: ``photostereo <command> [flags]``.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import io as psio
from .baseline import DEFAULT_SHADOW_THRESHOLD, solve_map
from .core import NormalMap
from .evaluate import error_image, infer, score_many
from .nn import checkpoint
from .nn.network import Network, NetworkConfig
from .pipeline import AugmentConfig, TrainConfig, build_patches, PatchSource, train
from .render import SceneSpec, Specular, render_scene, sample_hemisphere_lights, smooth_albedo


class UsageError(Exception):
    """Bad flag values detected after parsing; reported with exit code 2."""


# -- key=value configuration files ----------------------------------------------

def read_config(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for num, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{num}: expected key = value")
        out[key.strip()] = value.strip()
    return out


def _parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _convert(value: str, annotation: str):
    """Convert a config string according to a dataclass field annotation such as ``'int | None'``."""
    if value.lower() == "none" and "None" in annotation:
        return None
    if annotation.startswith("bool"):
        if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {value!r}")
        return value.lower() in ("true", "1", "yes")
    if annotation.startswith("int"):
        return int(value)
    if annotation.startswith("float"):
        return float(value)
    return value


def build_configs(values: dict[str, str]):
    """Split flat keys across NetworkConfig, AugmentConfig and TrainConfig.

    ``seed`` sets the seed of both the augmentation and the training loop.
    """
    classes = (NetworkConfig, AugmentConfig, TrainConfig)
    kwargs = [{} for _ in classes]
    for key, raw in values.items():
        hit = False
        for cls, kw in zip(classes, kwargs):
            fields = {f.name: f for f in dataclasses.fields(cls)}
            if key in fields:
                try:
                    kw[key] = _convert(raw, str(fields[key].type))
                except ValueError as e:
                    raise UsageError(f"bad value for {key}: {raw!r}") from e
                hit = True
        if not hit:
            raise UsageError(f"unknown configuration key {key!r}")
    try:
        return tuple(cls(**kw) for cls, kw in zip(classes, kwargs))
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from e


def scene_from_config(values: dict[str, str], seed: int) -> SceneSpec:
    """SceneSpec from flat keys: surface, resolution (HxW), albedo (number or ``smooth``),
    specular_strength, specular_exponent, noise_std, num_bumps, bump_height."""
    v = dict(values)
    try:
        h, w = (int(t) for t in v.pop("resolution", "65x65").lower().split("x"))
        albedo_raw = v.pop("albedo", "1.0")
        albedo = smooth_albedo((h, w), seed) if albedo_raw == "smooth" else float(albedo_raw)
        strength = float(v.pop("specular_strength", "0"))
        exponent = float(v.pop("specular_exponent", "20"))
        spec = SceneSpec(
            surface=v.pop("surface", "sphere"),
            resolution=(h, w),
            albedo=albedo,
            specular=Specular(strength, exponent) if strength > 0 else None,
            noise_std=float(v.pop("noise_std", "0")),
            seed=seed,
            num_bumps=int(v.pop("num_bumps", "12")),
            bump_height=float(v.pop("bump_height", "1.0")),
        )
    except ValueError as e:
        raise UsageError(f"bad scene specification: {e}") from e
    if v:
        raise UsageError(f"unknown scene keys: {', '.join(sorted(v))}")
    return spec


# -- subcommands ------------------------------------------------------------------

def cmd_render(args) -> int:
    values = read_config(args.spec) if args.spec else {}
    spec = scene_from_config(values, args.seed)
    lights = sample_hemisphere_lights(args.lights, args.max_angle, seed=args.seed)
    sample = render_scene(spec, lights)
    psio.write_dataset(sample, args.out)
    print(f"wrote {sample.num_lights} images of {spec.resolution[0]}x{spec.resolution[1]} to {args.out}")
    return 0


def cmd_train(args) -> int:
    values = read_config(args.config) if args.config else {}
    values.update(_parse_overrides(args.set))
    if args.seed is not None:
        values["seed"] = str(args.seed)
    ncfg, acfg, tcfg = build_configs(values)
    dataset = [psio.read_dataset(d) for d in args.data]
    net = Network(ncfg, seed=tcfg.seed)
    log_path = args.log or str(args.out) + ".log.csv"
    res = train(dataset, acfg, tcfg, net, log_path=log_path,
                on_log=None if args.quiet else lambda r: print(_format_row(r), flush=True))
    net.load_params(res.best_params)
    checkpoint.save(net, args.out)
    print(f"steps={res.steps} samples={res.samples_seen} best_val_mae={res.best_val_mae:.3f}")
    return 0


def _format_row(r) -> str:
    loss = "" if r["loss"] is None else f" loss={r['loss']:.5f}"
    val = "" if r["val_mae"] is None else f" val_mae={r['val_mae']:.3f}"
    return f"step={r['step']} samples={r['samples_seen']} lr={r['learning_rate']:.6g}{loss}{val}"


def _pixels(mask: np.ndarray, stride: int):
    if stride <= 1:
        return None
    rows, cols = np.nonzero(mask)
    keep = (rows % stride == 0) & (cols % stride == 0)
    return np.stack([rows[keep], cols[keep]], axis=1)


def cmd_infer(args) -> int:
    net = checkpoint.load(args.ckpt)
    sample = psio.read_dataset(args.data)
    pred = infer(net, sample, k_test=args.ktest, pixels=_pixels(sample.mask, args.stride),
                 batch_size=args.batch_size, interpolation=args.interpolation)
    psio.write_normal_map(args.out, pred)
    print(f"predicted {int(pred.mask.sum())} pixels with K_test={args.ktest}")
    if sample.normals is not None and (pred.mask & sample.normals.mask).any():
        print(f"MAE {score_many([(sample.name, pred, sample.normals)]).mean:.3f} deg")
    return 0


def _load_normals(path) -> NormalMap:
    p = Path(path)
    if p.is_dir():
        sample = psio.read_dataset(p)
        if sample.normals is None:
            raise psio.DatasetError(f"{p} has no ground-truth normals")
        return sample.normals
    return psio.read_normal_map(p)


def cmd_eval(args) -> int:
    if len(args.pred) != len(args.gt):
        raise UsageError("--pred and --gt need the same number of entries")
    names = args.name or [Path(p).stem for p in args.pred]
    if len(names) != len(args.pred):
        raise UsageError("--name needs one entry per prediction")
    report = score_many((n, _load_normals(p), _load_normals(g)) for n, p, g in zip(names, args.pred, args.gt))
    table = report.table(args.method)
    print(table, end="")
    if args.report:
        Path(args.report).write_text(table)
    if args.error_image:
        from .io import write_image

        for name, err in report.error_maps.items():
            out = args.error_image if len(names) == 1 else f"{Path(args.error_image).with_suffix('')}_{name}.png"
            write_image(out, error_image(err) / 255.0, bits=8)
    return 0


def cmd_baseline(args) -> int:
    sample = psio.read_dataset(args.data, drop_first=args.drop_first)
    pred = solve_map(sample, shadow_threshold=args.threshold)
    psio.write_normal_map(args.out, pred)
    msg = f"baseline (shadow threshold {args.threshold:g}) on {int(pred.mask.sum())} pixels"
    if sample.normals is not None:
        msg += f": MAE {score_many([(sample.name, pred, sample.normals)]).mean:.3f} deg"
    print(msg)
    return 0


def cmd_gradcheck(args) -> int:
    from .nn.gradcheck import run_all

    results = run_all(args.seed)
    for r in results:
        print(r)
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_inspect(args) -> int:
    sample = psio.read_dataset(args.data)
    try:
        x, y = (int(t) for t in args.pixel.split(","))
    except ValueError as e:
        raise UsageError(f"--pixel expects X,Y integers, got {args.pixel!r}") from e
    h, w = sample.mask.shape
    if not (0 <= x < w and 0 <= y < h):
        raise UsageError(f"pixel ({x}, {y}) outside the {w}x{h} image")
    maps, _ = build_patches(PatchSource(sample, order=0), np.array([[y, x]]), args.map_size, 1, dtype=np.float64)
    m = maps[0, 0, 0, :, :, 0]
    # map[u, v] has u along +x and v along +y; show +y up
    img = m.T[::-1]
    top = img.max()
    img = img / top if top > 0 else img
    img = np.kron(img, np.ones((args.scale, args.scale)))
    psio.write_image(args.out, img, bits=8)
    print(f"observation map at x={x}, y={y}: {int(np.count_nonzero(m))} lit cells, max {top:.4g}")
    return 0


# -- parser -------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, seed_default=0):
    p.add_argument("--seed", type=int, default=seed_default, help="random seed")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (1 = deterministic)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="photostereo", description="Calibrated photometric stereo toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a synthetic scene into a dataset directory")
    p.add_argument("--spec", help="key=value scene file (surface, resolution, albedo, specular_*, ...)")
    p.add_argument("--lights", type=int, default=96)
    p.add_argument("--max-angle", type=float, default=90.0, help="maximum light inclination in degrees")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("train", help="train a network on dataset directories")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--config", help="key=value file of network, augmentation and training settings")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a configuration key")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="metrics log path (default: <out>.log.csv)")
    p.add_argument("--quiet", action="store_true")
    _common(p, seed_default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict a normal map with rotation averaging")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ktest", type=int, default=12)
    p.add_argument("--stride", type=int, default=1, help="predict every n-th row and column only")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--interpolation", choices=("nearest", "bilinear", "spline"), default="spline")
    p.add_argument("--out", required=True, help="output normal map (.pfm)")
    _common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="mean angular error of predicted normal maps")
    p.add_argument("--pred", nargs="+", required=True, help="normal map files")
    p.add_argument("--gt", nargs="+", required=True, help="normal map files or dataset directories")
    p.add_argument("--name", nargs="+", help="object names for the report")
    p.add_argument("--method", default="Ours")
    p.add_argument("--report", help="write the text table here")
    p.add_argument("--error-image", help="write the per-pixel error image here")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="least-squares Lambertian normals")
    p.add_argument("--data", required=True)
    p.add_argument("--threshold", type=float, default=DEFAULT_SHADOW_THRESHOLD,
                   help="discard observations below this fraction of the pixel maximum")
    p.add_argument("--drop-first", type=int, default=0)
    p.add_argument("--out", required=True, help="output normal map (.pfm)")
    _common(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("gradcheck", help="finite-difference and adjoint checks of the network")
    _common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="render one pixel's observation map as an image")
    p.add_argument("--data", required=True)
    p.add_argument("--pixel", required=True, help="X,Y with X the column and Y the row")
    p.add_argument("--map-size", type=int, default=48)
    p.add_argument("--scale", type=int, default=8, help="pixels per map cell in the output image")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_inspect)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad flags
    if args.threads < 1:
        parser.error("--threads must be positive")
    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - every runtime failure maps to exit code 1
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
