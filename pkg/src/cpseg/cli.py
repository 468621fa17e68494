"""Command-line entry point: phantom, train, infer, eval and gradcheck."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from contextlib import ExitStack
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .data.nifti import NiftiError, read_volume, write_volume
from .data.phantom import gen_phantom, sample_spec
from .network.model import ModelConfig, Network, Supervision
from .network.params import CheckpointError, load_into, read_checkpoint
from .training.loop import Case, NonFiniteLossError, train_loop
from .training.optim import NonFiniteGradientError

log = logging.getLogger("cpseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST = "manifest.json"
SUFFIXES = ("_mask", "_label", "_pred", "_seg", "_image")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def case_key(path: Path) -> str:
    stem = path.name
    for ext in (".nii.gz", ".nii"):
        if stem.endswith(ext):
            stem = stem[: -len(ext)]
    for s in SUFFIXES:
        if stem.endswith(s):
            return stem[: -len(s)]
    return stem


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        cfg.override(key, yaml.safe_load(raw))
    cfg.sync()
    return cfg


def write_resolved(cfg: RunConfig, out: Path, command: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    (out / "run.json").write_text(json.dumps({"command": command, "seed": cfg.seed, "version": __version__}) + "\n")


# --- phantom ----------------------------------------------------------------------

def cmd_phantom(args, cfg: RunConfig) -> int:
    d = cfg.data
    if args.n_train is not None:
        d.n_train = args.n_train
    if args.n_test is not None:
        d.n_test = args.n_test
    out = Path(args.out)
    seeds = {"train": d.train_seeds(), "test": d.test_seeds()}
    all_seeds = seeds["train"] + seeds["test"]
    if len(set(all_seeds)) != len(all_seeds):
        raise ConfigError("train and test seed ranges overlap")
    cases = []
    try:
        for split, split_seeds in seeds.items():
            for i, seed in enumerate(split_seeds):
                spec = sample_spec(d.phantom, seed)
                image, label = gen_phantom(spec)
                name = f"{split}_{i:03d}"
                img_path, lab_path = f"{split}/{name}_image.nii", f"{split}/{name}_label.nii"
                write_volume(image, out / img_path)
                write_volume(label, out / lab_path)
                cases.append({"name": name, "split": split, "seed": seed, "image": img_path,
                              "label": lab_path, "spec": spec.to_dict()})
    except OSError as exc:
        raise DataError(f"cannot write dataset under {out}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"phantom ranges: {exc}") from exc
    manifest = {"format_version": 1, "cases": cases}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    write_resolved(cfg, out, "phantom")
    print(f"wrote {len(cases)} phantoms ({d.n_train} train, {d.n_test} test) to {out}")
    return EXIT_OK


def load_manifest(root) -> tuple[Path, dict]:
    root = Path(root)
    path = root / MANIFEST
    if not path.is_file():
        raise DataError(f"no dataset manifest at {path}")
    try:
        return root, json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc


def load_split(root, split: str):
    root, manifest = load_manifest(root)
    out = []
    for c in manifest["cases"]:
        if c["split"] == split:
            out.append((c["name"], read_volume(root / c["image"]), read_volume(root / c["label"])))
    if not out:
        raise DataError(f"dataset {root} has no {split!r} cases")
    return out


# --- train --------------------------------------------------------------------------

def cmd_train(args, cfg: RunConfig) -> int:
    if args.iters is not None:
        cfg.train.total_iters = args.iters
    if args.supervision is not None:
        cfg.model.supervision_strategy = Supervision.parse(args.supervision)
    if args.no_attention:
        cfg.model.attention_enabled = False
    try:
        # re-validate after the flag overrides
        cfg.model = ModelConfig.from_dict(cfg.model.to_dict())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    root = args.data or cfg.data.root
    if root is None:
        raise ConfigError("train needs --data or data.root")
    cases = [Case.from_volumes(img, lab) for _, img, lab in load_split(root, "train")]
    out = Path(args.out)
    write_resolved(cfg, out, "train")
    model = Network(cfg.model, seed=cfg.seed)
    log.info("training %d parameters for %d iterations", model.param_count(), cfg.train.total_iters)

    def progress(row):
        if row["iter"] % max(1, cfg.train.total_iters // 20) == 0:
            log.info("iter %d  lr %.1e  loss %.4f  final %.4f", row["iter"], row["lr"], row["total_loss"],
                     row["final"])

    result = train_loop(model, cases, cfg.train, out, run_config=cfg.to_dict(), progress=progress)
    from .plotting import loss_curves
    loss_curves(result.trace, out / "loss_curves.png")
    print(f"trained {cfg.train.total_iters} iterations in {result.seconds:.1f} s; "
          f"final loss {result.trace[-1]['total_loss']:.4f}; checkpoint {result.checkpoint}")
    return EXIT_OK


# --- infer --------------------------------------------------------------------------

def load_model(path) -> tuple[Network, dict]:
    try:
        manifest, params, buffers = read_checkpoint(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    except CheckpointError as exc:
        raise DataError(str(exc)) from exc
    run = manifest["config"]
    cfg = RunConfig.from_dict({**run, "preset": "full"})
    model = Network(cfg.model, seed=manifest["seed"])
    try:
        load_into(model.store, params, buffers)
    except CheckpointError as exc:
        raise DataError(str(exc)) from exc
    return model, run


def check_volume(name, vol, patch: int) -> None:
    sp = np.asarray(vol.spacing)
    if not np.allclose(sp, sp[0], rtol=0.05):
        log.warning("%s: anisotropic spacing %s; the network was built for isotropic voxels", name, vol.spacing)
    if min(vol.dims) < patch:
        log.warning("%s: dims %s smaller than the %d^3 patch; zero-padding", name, vol.dims, patch)


def cmd_infer(args, cfg: RunConfig) -> int:
    from .training.inference import predict_volume

    model, run = load_model(args.checkpoint)
    patch = model.config.patch_size
    stride = args.stride or run.get("data", {}).get("infer_stride") or patch // 2
    threshold = args.threshold if args.threshold is not None else run.get("data", {}).get("threshold", 0.5)
    inputs = []
    for p in args.input or []:
        p = Path(p)
        try:
            inputs.append((case_key(p), read_volume(p)))
        except (OSError, NiftiError) as exc:
            raise DataError(f"cannot read {p}: {exc}") from exc
    if args.data:
        inputs += [(name, img) for name, img, _ in load_split(args.data, args.split)]
    if not inputs:
        raise UsageError("infer needs --input files or --data")
    out = Path(args.out)
    write_resolved(cfg, out, "infer")
    rows = []
    for name, vol in inputs:
        check_volume(name, vol, patch)
        t0 = time.perf_counter()
        prob, mask = predict_volume(model, vol, patch, stride, threshold)
        secs = time.perf_counter() - t0
        write_volume(prob, out / f"{name}_prob.nii")
        write_volume(mask, out / f"{name}_mask.nii")
        rows.append({"case": name, "seconds": round(secs, 3), "voxels": int(mask.data.sum())})
        print(f"{name}: {secs:.2f} s, {rows[-1]['voxels']} foreground voxels")
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["case", "seconds", "voxels"])
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK


# --- eval ---------------------------------------------------------------------------

def index_dir(path) -> dict[str, Path]:
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"{path} is not a directory")
    files = sorted(path.glob("*.nii")) + sorted(path.rglob("*_label.nii"))
    out = {}
    for f in files:
        if f.name.endswith("_prob.nii") or f.name.endswith("_image.nii"):
            continue
        out.setdefault(case_key(f), f)
    return out


def evaluate_dirs(pred_dir, gt_dir, cfg: RunConfig, method: str, maps_dir: Path | None = None):
    from .metrics import MetricsReport, evaluate_case, surface_error_map
    from .metrics.surface import EmptySurfaceError

    preds, gts = index_dir(pred_dir), index_dir(gt_dir)
    matched = sorted(set(preds) & set(gts))
    for k in sorted(set(preds) - set(gts)):
        log.warning("prediction %s has no ground truth; skipped", k)
    if not matched:
        raise DataError(f"no matching cases between {pred_dir} and {gt_dir}")
    report = MetricsReport(method=method)
    for k in matched:
        try:
            pred, gt = read_volume(preds[k]), read_volume(gts[k])
            report.add(evaluate_case(k, pred, gt, cfg.metrics.symmetric_asd))
        except (OSError, NiftiError, ValueError) as exc:
            raise DataError(f"case {k}: {exc}") from exc
        if maps_dir is not None:
            try:
                emap = surface_error_map(pred, gt)
            except EmptySurfaceError:
                continue
            write_volume(emap, maps_dir / f"{k}_error.nii")
            from .plotting import error_map_slices
            error_map_slices(emap.data, gt.data, maps_dir / f"{k}_error.png")
    return report


def cmd_eval(args, cfg: RunConfig) -> int:
    from .plotting import metric_boxplots

    if args.error_maps:
        cfg.metrics.error_maps = True
    out = Path(args.out)
    write_resolved(cfg, out, "eval")
    maps = out / "error_maps" if cfg.metrics.error_maps else None
    report = evaluate_dirs(args.pred, args.gt, cfg, args.label or Path(args.pred).name, maps)
    report.to_csv(out / "metrics.csv")
    report.to_json(out / "metrics.json")
    reports = {report.method: report}
    agg = report.aggregate()
    for m, s in agg.items():
        mean = "n/a" if s["mean"] is None else f"{s['mean']:.4f}"
        std = "n/a" if s["std"] is None else f"{s['std']:.4f}"
        print(f"{m:<8} {mean} +/- {std} (n={s['n']})")
    if args.compare:
        other = evaluate_dirs(args.compare, args.gt, cfg, Path(args.compare).name)
        other.to_csv(out / "metrics_compare.csv")
        reports[other.method] = other
        tests = report.compare(other)
        with open(out / "ttest.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "t", "p", "n"])
            for m, r in tests.items():
                w.writerow([m, "" if r["t"] is None else repr(r["t"]), "" if r["p"] is None else repr(r["p"]), r["n"]])
                print(f"paired t-test {m}: p = {r['p']}")
    metric_boxplots(reports, out / "metrics_boxplot.png")
    return EXIT_OK


# --- gradcheck ----------------------------------------------------------------------

def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from .gradcheck import format_table, run_gradcheck

    try:
        results = run_gradcheck(args.only, seed=cfg.seed)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from exc
    print(format_table(results))
    if args.out:
        out = Path(args.out)
        write_resolved(cfg, out, "gradcheck")
        with open(out / "gradcheck.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["check", "kind", "coords", "max_rel_error", "passed"])
            for r in results:
                w.writerow([r.name, r.kind, r.n_checked, repr(r.max_rel_error), r.passed])
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all {len(results)} checks passed")
    return EXIT_OK


# --- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="run seed (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for FFT and BLAS")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = Parser(prog="cpseg", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    ph = sub.add_parser("phantom", parents=[common], help="generate a synthetic dataset")
    ph.add_argument("--out", required=True)
    ph.add_argument("--n-train", type=int)
    ph.add_argument("--n-test", type=int)
    ph.set_defaults(func=cmd_phantom)

    tr = sub.add_parser("train", parents=[common], help="train a model")
    tr.add_argument("--data", help="dataset directory (overrides data.root)")
    tr.add_argument("--out", required=True)
    tr.add_argument("--iters", type=int)
    tr.add_argument("--supervision", choices=[s.value for s in Supervision])
    tr.add_argument("--no-attention", action="store_true", help="train the variant without attention modules")
    tr.set_defaults(func=cmd_train)

    inf = sub.add_parser("infer", parents=[common], help="sliding-window segmentation of volumes")
    inf.add_argument("--checkpoint", required=True)
    inf.add_argument("--input", nargs="+", help="NIfTI volumes")
    inf.add_argument("--data", help="dataset directory; segments one split")
    inf.add_argument("--split", default="test")
    inf.add_argument("--stride", type=int)
    inf.add_argument("--threshold", type=float)
    inf.add_argument("--out", required=True)
    inf.set_defaults(func=cmd_infer)

    ev = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--compare", help="second prediction directory for paired t-tests")
    ev.add_argument("--label", help="method label for the report")
    ev.add_argument("--error-maps", action="store_true", help="write surface error maps")
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    gc.add_argument("--only", nargs="+", help="run only these checks")
    gc.add_argument("--out")
    gc.set_defaults(func=cmd_gradcheck)
    return p


def threads_limit(n: int) -> ExitStack:
    import scipy.fft
    from threadpoolctl import threadpool_limits

    stack = ExitStack()
    if n and n > 0:
        stack.enter_context(scipy.fft.set_workers(n))
        stack.enter_context(threadpool_limits(n))
    return stack


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        with threads_limit(args.threads):
            return args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, NiftiError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLossError, NonFiniteGradientError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
