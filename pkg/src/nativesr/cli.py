"""``nativesr`` command line."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from . import metrics as M
from .config import ConfigError, RunConfig, load_config
from .degrade import (
    DegradationSpec,
    InfeasibleError,
    _generate,
    default_protocol,
    degrade_volume,
    derive_seed,
    load_protocol,
    _sample_protocol,
)
from .enhance import IdentityEnhancer, SubprocessEnhancer, baseline_reference
from .harness import EvalGridSpec, build_eval_grid, evaluate, rows_to_csv
from .phantoms import smooth_phantom
from .report import aggregate, emit_report
from .resample import ResampleMethod, resample
from .routing import BinCoord, RoutingError, classify, curriculum, route
from .volume import VolumeError, descriptors, load_nifti, read_header, reorient_canonical, save_nifti

log = logging.getLogger("nativesr")


class CLIError(Exception):
    pass


def _sidecar_path(out: Path) -> Path:
    name = out.name
    for ext in (".nii.gz", ".nii"):
        if name.endswith(ext):
            return out.with_name(name[: -len(ext)] + ".json")
    return out.with_name(name + ".json")


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _provenance(cfg: Optional[RunConfig] = None) -> dict:
    d = {"tool": "nativesr", "version": __version__}
    if cfg is not None:
        d["config_hash"] = cfg.hash()
    return d


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("+inf" if x > 0 else "-inf")
    return x


def _is_one_mm(spacing) -> bool:
    return all(abs(r - 1.0) <= 1e-3 for r in spacing)


def _cell_of(triplet) -> Optional[BinCoord]:
    try:
        return classify(descriptors(triplet))
    except RoutingError:
        return None


# -- commands ---------------------------------------------------------------------


def cmd_reorient(args) -> int:
    v = load_nifti(args.input)
    out, reo = reorient_canonical(v)
    dst = Path(args.output)
    save_nifti(out, dst)
    _write_json(_sidecar_path(dst), {**_provenance(), "input": str(args.input),
                                     "reorientation": reo.to_dict(),
                                     "inverse": reo.inverse().to_dict()})
    return 0


def cmd_degrade(args, cfg: RunConfig) -> int:
    gt = load_nifti(args.input)
    if not _is_one_mm(gt.spacing):
        if not args.preprocess:
            raise CLIError(f"input spacing {gt.spacing} is not 1 mm isotropic (use --preprocess)")
        gt = resample(gt, (1.0, 1.0, 1.0), ResampleMethod.CUBIC_BSPLINE)
    seed = cfg.base_seed if args.seed is None else args.seed
    if args.protocol is not None:
        path = Path(args.protocol)
        dist = load_protocol(path) if path.exists() else default_protocol(args.protocol)
        triplet, pattern = _sample_protocol(dist, np.random.default_rng(seed))
        spec = DegradationSpec(triplet, (0, 1, 2), seed, _cell_of(triplet), f"protocol:{pattern.value}")
    else:
        if args.volume is None or args.aniso_bin is None:
            raise CLIError("give --volume and --aniso-bin, or --protocol")
        triplet, perm = _generate(args.volume, args.aniso_bin, np.random.default_rng(seed))
        spec = DegradationSpec(triplet, perm, seed, _cell_of(triplet), "generator")
    out = degrade_volume(gt, spec)
    dst = Path(args.output)
    save_nifti(out, dst)
    doc = {**_provenance(cfg), "input": str(args.input), "spec": spec.to_dict(),
           "expert": route(spec.triplet).expert_id}
    _write_json(_sidecar_path(dst), doc)
    return 0


def cmd_route(args) -> int:
    hdr = read_header(args.input)
    print(route(hdr).expert_id)
    return 0


def cmd_curriculum(args) -> int:
    plan = curriculum()
    sys.stdout.write(plan.to_json() if args.format == "json" else plan.to_dot())
    return 0


def cmd_metrics(args, cfg: RunConfig) -> int:
    a, b = load_nifti(args.a), load_nifti(args.b)
    if a.shape != b.shape:
        raise CLIError(f"shape mismatch: {a.shape} vs {b.shape}")
    out = {"metrics": {
        "psnr": M.psnr(a, b),
        "cc": M.pearson_cc(a, b),
        "mae": M.mae(a, b),
        "wmae": M.wmae(a, b, cfg.constants),
        "spectral": M.spectral_loss(a, b),
    }, "constants": cfg.constants.to_dict(), "psnr_peak": M.PSNR_PEAK}
    la = lb = None
    if args.labels_a or args.labels_b:
        if not (args.labels_a and args.labels_b):
            raise CLIError("--labels-a and --labels-b go together")
        la, lb = load_nifti(args.labels_a), load_nifti(args.labels_b)
        out["metrics"]["dice"] = M.dice(la, lb)
    loss = M.composite_loss(a, b, la, lb, cfg.constants)
    out["loss"] = loss.to_dict()
    out["metrics"] = {k: _jsonable(v) for k, v in out["metrics"].items()}
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


_METHOD_KEYS = {"name", "type", "command", "native_intensity", "timeout", "env"}


def _load_methods(path: Optional[str]):
    if path is None:
        return [baseline_reference()]
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError(f"cannot read methods manifest {path}: {exc}") from exc
    items = doc["methods"] if isinstance(doc, dict) else doc
    out = []
    for item in items:
        unknown = set(item) - _METHOD_KEYS
        if unknown:
            raise CLIError(f"unknown method keys: {sorted(unknown)}")
        kind = item.get("type", "subprocess")
        if kind == "reference":
            e = baseline_reference()
            if "name" in item:
                e.name = item["name"]
        elif kind == "identity":
            e = IdentityEnhancer(item.get("name", "Identity"))
        elif kind == "subprocess":
            if not item.get("command"):
                raise CLIError(f"subprocess method {item.get('name')!r} needs a command")
            cmd = item["command"]
            e = SubprocessEnhancer(cmd if isinstance(cmd, list) else [cmd],
                                   name=item.get("name", "external"),
                                   native_intensity=bool(item.get("native_intensity", True)),
                                   timeout=item.get("timeout"), env=item.get("env"))
        else:
            raise CLIError(f"unknown method type {kind!r}")
        out.append(e)
    return out


def _seed_volumes(directory: str):
    paths = sorted(p for p in Path(directory).iterdir()
                   if p.name.endswith(".nii") or p.name.endswith(".nii.gz"))
    if not paths:
        raise CLIError(f"no NIfTI seed volumes in {directory}")
    vols = {}
    for p in paths:
        subject = p.name[: -len(".nii.gz")] if p.name.endswith(".nii.gz") else p.stem
        v, _ = reorient_canonical(load_nifti(p))
        if not _is_one_mm(v.spacing):
            v = resample(v, (1.0, 1.0, 1.0), ResampleMethod.CUBIC_BSPLINE)
        vols[subject] = v
    return vols


def cmd_evaluate(args, cfg: RunConfig) -> int:
    out_dir = Path(args.out or cfg.output_dir or "")
    if not str(out_dir):
        raise CLIError("give --out or output_dir in the config")
    out_dir.mkdir(parents=True, exist_ok=True)
    vols = _seed_volumes(args.seeds)
    enhancers = _load_methods(args.methods)
    grid = EvalGridSpec(tuple(vols), cfg.realizations, None, cfg.base_seed)
    cases = build_eval_grid(grid)
    result = evaluate(cases, vols, enhancers, cfg.metrics, cfg.constants,
                      voxel_budget=cfg.voxel_budget, overlap=cfg.overlap, jobs=cfg.jobs)
    (out_dir / "raw.csv").write_text(rows_to_csv(result.rows))
    report = aggregate(result.rows, cfg.significance_level, [e.name for e in enhancers], cfg.metrics)
    for fmt, name in (("markdown", "report.md"), ("csv", "report.csv"), ("json", "report.json")):
        (out_dir / name).write_text(emit_report(report, fmt))
    manifest = {
        **_provenance(cfg),
        "seeds": list(vols),
        "cases": len(cases),
        "config": cfg.to_dict(),
        "methods": [{"name": e.name, "type": type(e).__name__,
                     "native_intensity": e.native_intensity} for e in enhancers],
        "bonferroni_family": report.meta["bonferroni_family"],
        "failures": [{"method": m, "case": c, "message": msg} for m, c, msg in result.failures],
    }
    _write_json(out_dir / "manifest.json", manifest)
    if result.failures:
        print(f"warning: {len(result.failures)} case/method evaluations failed; "
              f"see manifest.json", file=sys.stderr)
    return 0


def cmd_phantom(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        v = smooth_phantom((args.size,) * 3, seed=derive_seed(args.seed, "phantom", i) % 2**32)
        save_nifti(v, out_dir / f"phantom_{i:02d}.nii.gz")
    return 0


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nativesr", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("reorient", help="losslessly reorder a volume to RAS")
    s.add_argument("input", help="input NIfTI")
    s.add_argument("output", help="output NIfTI; a .json sidecar is written beside it")

    s = sub.add_parser("degrade", help="simulate a low-resolution acquisition of a 1 mm volume")
    s.add_argument("input", help="1 mm ground-truth NIfTI")
    s.add_argument("output", help="degraded NIfTI (1 mm grid); a .json sidecar is written beside it")
    s.add_argument("--volume", type=float, help="target voxel volume V in mm^3")
    s.add_argument("--aniso-bin", type=int, choices=(1, 2, 3), help="anisotropy bin (1 = thick slice)")
    s.add_argument("--protocol", help="protocol JSON path, or a bundled name (volbrain, biobank)")
    s.add_argument("--seed", type=int, help="random seed (default: base_seed from the config)")
    s.add_argument("--preprocess", action="store_true",
                   help="resample a non-1 mm input to 1 mm with cubic B-splines first")
    s.add_argument("--config", help="run config JSON (default: $NATIVESR_CONFIG)")

    s = sub.add_parser("route", help="print the expert id chosen from a NIfTI header")
    s.add_argument("input", help="NIfTI file (only the header is read)")

    s = sub.add_parser("curriculum", help="print the transfer-learning plan")
    s.add_argument("--format", default="json", help="json or dot")

    s = sub.add_parser("evaluate", help="run the structured evaluation grid")
    s.add_argument("--seeds", required=True, help="directory of ground-truth NIfTI volumes")
    s.add_argument("--methods", help="methods manifest JSON (default: reference arm only)")
    s.add_argument("--config", help="run config JSON (default: $NATIVESR_CONFIG)")
    s.add_argument("--out", help="output directory")
    s.add_argument("--jobs", type=int, help="parallel case workers (output is identical for any N)")
    s.add_argument("--realizations", type=int, help="realizations per cell")
    s.add_argument("--base-seed", type=int, help="base seed of the grid")
    s.add_argument("--voxel-budget", type=int, help="tile enhancers above this many voxels")

    s = sub.add_parser("metrics", help="compare two volumes and print metric JSON")
    s.add_argument("a", help="reference (ground truth) NIfTI")
    s.add_argument("b", help="test NIfTI")
    s.add_argument("--labels-a", help="label volume for a")
    s.add_argument("--labels-b", help="label volume for b")
    s.add_argument("--config", help="run config JSON (default: $NATIVESR_CONFIG)")

    s = sub.add_parser("phantom", help="write synthetic 1 mm phantom volumes")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--count", type=int, default=10, help="number of phantoms")
    s.add_argument("--size", type=int, default=32, help="cube edge in voxels")
    s.add_argument("--seed", type=int, default=0, help="base seed")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.ERROR, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "reorient":
            return cmd_reorient(args)
        if args.command == "route":
            return cmd_route(args)
        if args.command == "phantom":
            return cmd_phantom(args)
        if args.command == "curriculum":
            if args.format not in ("json", "dot"):
                raise CLIError(f"unknown format {args.format!r} (json or dot)")
            return cmd_curriculum(args)
        cfg = load_config(getattr(args, "config", None))
        if args.command == "degrade":
            return cmd_degrade(args, cfg)
        if args.command == "metrics":
            return cmd_metrics(args, cfg)
        if args.command == "evaluate":
            cfg = cfg.override(jobs=args.jobs, realizations=args.realizations,
                               base_seed=args.base_seed, voxel_budget=args.voxel_budget)
            return cmd_evaluate(args, cfg)
    except (CLIError, ConfigError, VolumeError, InfeasibleError, RoutingError, M.MetricError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2
