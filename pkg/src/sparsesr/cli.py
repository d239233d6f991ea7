"""Command-line front end: ``synth``, ``train``, ``enhance`` and ``eval``.

Each subcommand accepts ``--config FILE``: an INI-style file of flat
``key = value`` entries grouped in ``[synth]``, ``[train]``, ``[enhance]``
and ``[eval]`` sections (a ``[common]`` section applies to all). Keys use
the long flag names with dashes or underscores. Flags given on the
command line override file values.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .dictionary import DictionaryFormatError, TrainingDataError, load_dictionary
from .imaging import ImageFormatError, load_image, save_image
from .parallel import default_threads
from .pipeline import EnhanceRequest, TrainConfig, TrainSettings, enhance, format_report, train_pipeline
from .resample import RegistrationError, interpolate_to_hr
from .synthdata import SynthParams, read_meta, write_corpus

log = logging.getLogger("sparsesr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument parser whose errors use the same stderr prefix as runtime errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("usage", f"{self.prog}: {message}")
        sys.exit(2)


def _emit_error(kind: str, message: str) -> None:
    print(f"sparsesr: error[{kind}]: {message}", file=sys.stderr)


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _zoom(text):
    value = float(text)
    if not value > 1:
        raise argparse.ArgumentTypeError(f"zoom ratio must be > 1, got {text}")
    return value


def _float_list(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


def _scene_files(directory: Path, prefix: str) -> list[Path]:
    files = sorted(directory.glob(f"{prefix}_p*.png")) or sorted(directory.glob(f"{prefix}_p*.pgm"))
    return sorted(files, key=lambda p: int(p.stem.split("_p")[-1]))


def _scene_meta(directory: Path) -> dict:
    meta = directory / "meta.txt"
    return read_meta(meta) if meta.is_file() else {}


# ----------------------------------------------------------------- commands

def run_synth(args) -> int:
    params = SynthParams(seed=args.seed, image_size=args.size, feature_scale=args.feature_scale,
                         line_density=args.line_density, zoom_ratio=args.zoom,
                         noise_sigma=args.noise_sigma, blur_sigma=args.blur_sigma)
    dirs = write_corpus(args.out, params, args.count)
    print(format_report({"scenes": len(dirs), "output": args.out,
                         "noise_variance": repr(params.noise_variance)}), end="")
    return 0


def run_train(args) -> int:
    scenes = [Path(s) for s in args.scenes]
    if not scenes:
        raise TrainingDataError("no training duos given (pass scene directories)")
    lr_paths, hr_paths = None, None
    meta = {}
    for scene in scenes:
        if not scene.is_dir():
            raise FileNotFoundError(f"scene directory not found: {scene}")
        lrs, hrs = _scene_files(scene, "lr"), _scene_files(scene, "hr")
        if not lrs:
            raise TrainingDataError(f"{scene}: no lr_p*.png images")
        missing = [p.name.replace("lr_", "hr_") for p in lrs
                   if not (scene / p.name.replace("lr_", "hr_")).is_file()]
        if missing or len(hrs) != len(lrs):
            raise TrainingDataError(f"{scene}: missing HR twin(s) {missing or [h.name for h in hrs]}")
        if lr_paths is None:
            lr_paths = [[] for _ in lrs]
            hr_paths = [[] for _ in lrs]
            meta = _scene_meta(scene)
        if len(lrs) != len(lr_paths):
            raise TrainingDataError(f"{scene}: perspective count differs from other scenes")
        for p, (lr, hr) in enumerate(zip(lrs, hrs)):
            lr_paths[p].append(lr)
            hr_paths[p].append(hr)

    zoom = args.zoom if args.zoom is not None else float(meta.get("zoom_ratio", 0) or 0)
    if not zoom > 1:
        raise UsageError("zoom ratio unknown: pass --zoom (> 1)")
    sigma2 = args.noise_variance if args.noise_variance is not None else (
        [float(meta["noise_variance"])] if "noise_variance" in meta else None)
    if sigma2 is None:
        raise UsageError("noise variance unknown: pass --noise-variance")
    settings = TrainSettings(zoom_ratio=zoom, patch_side=args.patch_side, stride=args.stride,
                             atom_count=args.atoms, sample_count=args.samples, k0=args.k0,
                             epsilon=args.ksvd_epsilon, iterations=args.iterations, seed=args.seed,
                             noise_variance=tuple(sigma2) if len(sigma2) > 1 else sigma2[0])
    report = train_pipeline(TrainConfig(lr_paths, hr_paths, Path(args.out), settings),
                            threads=args.threads)
    text = format_report({"dictionary": args.out, **report.as_dict()})
    _write_report(text, args.report)
    return 0


def run_enhance(args) -> int:
    d = load_dictionary(args.dict)
    if args.scene:
        scene = Path(args.scene)
        lr_files = _scene_files(scene, "lr")
        out_dir = Path(args.out_dir) if args.out_dir else scene
    else:
        lr_files = [Path(p) for p in args.lr]
        if not args.out_dir:
            raise UsageError("--out-dir is required with --lr")
        out_dir = Path(args.out_dir)
    if not lr_files:
        raise UsageError("no LR images given (use --scene or --lr)")
    if len(lr_files) != d.perspective_count:
        raise UsageError(f"dictionary has {d.perspective_count} perspectives but "
                         f"{len(lr_files)} LR images were given")
    lrs = [load_image(p) for p in lr_files]
    request = EnhanceRequest(lrs, d, stride=args.stride,
                             noise_variance=args.noise_variance, k0=args.k0, epsilon=args.epsilon)
    result = enhance(request, threads=args.threads)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for p, img in enumerate(result.sr_images, start=1):
        path = out_dir / f"sr_p{p}.png"
        save_image(img, path)
        outputs.append(str(path))
        if args.save_interpolated:
            save_image(result.interpolated[p - 1], out_dir / f"interp_p{p}.png")
    h, w = result.sr_images[0].shape
    text = format_report({"outputs": ",".join(outputs), "width": w, "height": h, **result.report()})
    _write_report(text, args.report)
    return 0


def _eval_one(sr_files, lr_files, hr_files, R, csv_dir, cut_row, cut_cols, tag):
    srs = [load_image(p) for p in sr_files]
    hrs = [load_image(p) for p in hr_files]
    lrs = [interpolate_to_hr(load_image(p), R) for p in lr_files] if lr_files else srs
    rep = metrics.evaluate(srs, lrs, hrs, R)
    if csv_dir is not None:
        _write_csv(Path(csv_dir), tag, srs, lrs, hrs, R, cut_row, cut_cols)
    return rep


def _write_csv(out: Path, tag: str, srs, lrs, hrs, R, cut_row, cut_cols):
    out.mkdir(parents=True, exist_ok=True)
    for p, (sr, lr, hr) in enumerate(zip(srs, lrs, hrs), start=1):
        sr_c, lr_c, hr_c = metrics.common_crop(sr, lr, hr)
        row = cut_row if cut_row is not None else sr_c.shape[0] // 2
        cols = tuple(cut_cols) if cut_cols else (0, sr_c.shape[1])
        cuts = [metrics.line_cut(x, row, cols) for x in (lr_c, sr_c, hr_c)]
        specs = [metrics.cut_spectrum(c) for c in cuts]
        hists = [metrics.histogram(x) for x in (lr_c, sr_c, hr_c)]
        np.savetxt(out / f"{tag}p{p}_cut.csv", np.column_stack([np.arange(cols[0], cols[1]), *cuts]),
                   delimiter=",", header="col,lr,sr,hr", comments="")
        np.savetxt(out / f"{tag}p{p}_spectrum.csv", np.column_stack([np.arange(specs[0].size), *specs]),
                   delimiter=",", header=f"bin,lr,sr,hr  # cutoff={metrics.cutoff_index(len(cuts[0]), R)}",
                   comments="")
        edges = np.linspace(0, 1, metrics.HIST_BINS + 1)[:-1]
        np.savetxt(out / f"{tag}p{p}_histogram.csv", np.column_stack([edges, *hists]),
                   delimiter=",", header="bin_start,lr,sr,hr", comments="")


def run_eval(args) -> int:
    if args.scenes:
        reports = []
        lines = {}
        for i, scene in enumerate(Path(s) for s in args.scenes):
            meta = _scene_meta(scene)
            R = args.zoom if args.zoom is not None else float(meta.get("zoom_ratio", 0) or 0)
            if not R > 1:
                raise UsageError(f"{scene}: zoom ratio unknown: pass --zoom")
            sr_files = _scene_files(scene, "sr")
            hr_files = _scene_files(scene, "hr")
            lr_files = _scene_files(scene, "lr")
            if not sr_files or len(sr_files) != len(hr_files):
                raise UsageError(f"{scene}: need matching sr_p*/hr_p* images")
            rep = _eval_one(sr_files, lr_files, hr_files, R, args.csv, args.cut_row, args.cut_cols,
                            f"{scene.name}_")
            reports.append(rep)
            lines.update({f"{scene.name}.{k}": v for k, v in rep.as_dict().items()})
        lines.update({f"summary.{k}": v for k, v in metrics.summarize(reports).items()})
        _write_report(format_report(lines), args.report)
        return 0
    if not args.sr or not args.hr or len(args.sr) != len(args.hr):
        raise UsageError("pass --sr and --hr image lists of equal length (or --scenes)")
    if args.lr and len(args.lr) != len(args.sr):
        raise UsageError("--lr must list one image per perspective")
    if args.zoom is None:
        raise UsageError("--zoom is required")
    rep = _eval_one(args.sr, args.lr, args.hr, args.zoom, args.csv, args.cut_row, args.cut_cols, "")
    _write_report(format_report(rep.as_dict()), args.report)
    return 0


def _write_report(text: str, path) -> None:
    sys.stdout.write(text)
    if path:
        Path(path).write_text(text)


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparsesr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file with per-command sections")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: $SR_THREADS or all cores)")
        return p

    p = common(sub.add_parser("synth", help="write a synthetic multi-perspective corpus"))
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--count", type=int, default=15, help="number of scenes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=512, help="HR image side in pixels")
    p.add_argument("--zoom", type=_zoom, default=2.5, help="zoom ratio R (> 1)")
    p.add_argument("--noise-sigma", type=float, default=0.08)
    p.add_argument("--blur-sigma", type=float, default=1.0)
    p.add_argument("--feature-scale", type=_positive_float, default=8.0)
    p.add_argument("--line-density", type=float, default=3.0)
    p.set_defaults(func=run_synth)

    p = common(sub.add_parser("train", help="learn a joint LR/HR dictionary"))
    p.add_argument("scenes", nargs="*", help="scene directories holding lr_pK.png / hr_pK.png duos")
    p.add_argument("--out", required=True, help="dictionary file to write")
    p.add_argument("--zoom", type=_zoom, default=None, help="zoom ratio (default: from meta.txt)")
    p.add_argument("--noise-variance", type=_float_list, default=None,
                   help="background noise variance, one value or one per perspective")
    p.add_argument("--patch-side", type=int, default=23)
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--atoms", type=int, default=2048)
    p.add_argument("--samples", type=int, default=250_000)
    p.add_argument("--k0", type=int, default=None, help="default: floor(patch_side / 2)")
    p.add_argument("--ksvd-epsilon", type=float, default=0.0,
                   help="relative residual stop inside K-SVD coding (default: cardinality only)")
    p.add_argument("--iterations", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="also write the report to this file")
    p.set_defaults(func=run_train)

    p = common(sub.add_parser("enhance", help="super-resolve an LR perspective set"))
    p.add_argument("--dict", required=True, help="dictionary file")
    p.add_argument("--scene", help="scene directory with lr_pK.png inputs")
    p.add_argument("--lr", nargs="*", default=[], help="LR images, one per perspective")
    p.add_argument("--out-dir", help="output directory (default: the scene directory)")
    p.add_argument("--stride", type=int, default=None, help="default: training stride")
    p.add_argument("--noise-variance", type=_float_list, default=None,
                   help="default: the variance stored in the dictionary")
    p.add_argument("--k0", type=int, default=None)
    p.add_argument("--epsilon", type=float, default=0.3)
    p.add_argument("--save-interpolated", action="store_true")
    p.add_argument("--report", help="also write the report to this file")
    p.set_defaults(func=run_enhance)

    p = common(sub.add_parser("eval", help="PSNR and spectral evaluation against HR references"))
    p.add_argument("--scenes", nargs="*", default=[],
                   help="batch mode: scene directories with sr_pK, lr_pK and hr_pK images")
    p.add_argument("--sr", nargs="*", default=[])
    p.add_argument("--lr", nargs="*", default=[])
    p.add_argument("--hr", nargs="*", default=[])
    p.add_argument("--zoom", type=_zoom, default=None)
    p.add_argument("--csv", help="directory for cut / spectrum / histogram CSV files")
    p.add_argument("--cut-row", type=int, default=None)
    p.add_argument("--cut-cols", type=int, nargs=2, default=None, metavar=("START", "STOP"))
    p.add_argument("--report", help="also write the report to this file")
    p.set_defaults(func=run_eval)
    return parser


def _config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    # the file is read before parsing so it can satisfy required flags
    path = _config_path(argv)
    commands = parser._subparsers._group_actions[0].choices  # noqa: SLF001
    command = next((tok for tok in argv if tok in commands), None)
    if path is None or command is None:
        return parser.parse_args(argv)
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise UsageError(f"cannot read config file {path}")
    values = {}
    for section in ("common", command):
        if cp.has_section(section):
            values.update({k.replace("-", "_"): v for k, v in cp.items(section)})
    sub = commands[command]
    actions = {a.dest: a for a in sub._actions}  # noqa: SLF001
    defaults = {}
    for key, raw in values.items():
        if key not in actions:
            raise UsageError(f"unknown config key {key!r} in section [{command}]")
        action = actions[key]
        if action.nargs in ("*", "+") or (isinstance(action.nargs, int) and action.nargs > 1):
            items = raw.split()
            value = [action.type(v) if action.type else v for v in items]
        elif isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
            value = raw.strip().lower() in ("1", "true", "yes", "on")
        else:
            value = action.type(raw) if action.type else raw
        defaults[key] = value
    sub.set_defaults(**defaults)
    # required flags satisfied by the file must not be demanded again
    for action in sub._actions:  # noqa: SLF001
        if action.dest in defaults:
            action.required = False
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        _emit_error("usage", str(exc))
        return 2
    except (argparse.ArgumentTypeError, ValueError) as exc:
        _emit_error("config", str(exc))
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="sparsesr: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        if args.threads is None:
            args.threads = default_threads()
        return args.func(args)
    except UsageError as exc:
        _emit_error("usage", str(exc))
        return 2
    except RegistrationError as exc:
        _emit_error("registration", str(exc))
    except TrainingDataError as exc:
        _emit_error("training-data", str(exc))
    except DictionaryFormatError as exc:
        _emit_error("dictionary", str(exc))
    except ImageFormatError as exc:
        _emit_error("image", str(exc))
    except FileNotFoundError as exc:
        _emit_error("io", str(exc))
    except OSError as exc:
        _emit_error("io", str(exc))
    except ValueError as exc:
        _emit_error("value", str(exc))
    return 1


if __name__ == "__main__":
    sys.exit(main())
