"""End-to-end workflows: training-pair preparation, inference and the two
evaluation cohorts (image quality and T2 agreement)."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .net import Network, forward, load_weights
from .patch import PatchSet, assemble_patches, extract_patches, patch_grid
from .quant import RoiMask, estimate_t2, roi_mean_t2
from .resample import degrade_slices, fourier_upsample, tricubic_upsample
from .volume import (
    _atomic_write,
    MultiEchoVolume,
    NormalizationRecord,
    denormalize,
    load_scan_params,
    load_volume,
    normalize,
    save_volume,
)

log = logging.getLogger(__name__)

UPSAMPLERS = {"tci": tricubic_upsample, "fourier": fourier_upsample}


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names which one."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def apply_record(vol: MultiEchoVolume, rec: NormalizationRecord) -> MultiEchoVolume:
    """Normalize ``vol`` with an existing record (values may leave [0, 1])."""
    lo = np.asarray(rec.vmin)[:, None, None, None]
    hi = np.asarray(rec.vmax)[:, None, None, None]
    return vol.with_data((vol.data.astype(np.float64) - lo) / (hi - lo))


def training_pair(truth: MultiEchoVolume, factor: int = 2):
    """Network input (degraded then tricubic-upsampled) and target, both
    scaled by the input's per-echo normalization record."""
    upsampled = tricubic_upsample(degrade_slices(truth, factor), factor)
    inp, rec = normalize(upsampled, "per-echo")
    return inp, apply_record(truth, rec), rec


def training_patches(truths, factor: int = 2, patch: int = 32, stride: int = 16, dtype=np.float32):
    """Aligned (input, target) patch sets pooled over several volumes."""
    xs, ys, origins = [], [], []
    grid = None
    for truth in truths:
        inp, tgt, _ = training_pair(truth, factor)
        grid = patch_grid(inp.dims, patch, stride)
        xs.append(extract_patches(inp, grid).blocks.astype(dtype))
        ys.append(extract_patches(tgt, grid).blocks.astype(dtype))
        origins.append(grid.origins)
    pooled = type(grid)(np.concatenate(origins), patch, stride, grid.dims)
    return PatchSet(pooled, np.concatenate(xs)), PatchSet(pooled, np.concatenate(ys))


def infer_volume(net: Network, vol01: MultiEchoVolume, patch: int = 32, stride: int = 16) -> MultiEchoVolume:
    """Run the network patch-wise over a normalized volume and average overlaps."""
    grid = patch_grid(vol01.dims, patch, stride)
    blocks = extract_patches(vol01, grid).blocks
    out = np.stack([forward(net, b) for b in blocks])
    return assemble_patches(PatchSet(grid, out), vol01.dims, vol01.spacing)


def super_resolve(net: Network, thick: MultiEchoVolume, factor: int = 2, patch: int = 32, stride: int = 16):
    """Tricubic upsampling followed by residual refinement, in input units."""
    upsampled = tricubic_upsample(thick, factor)
    inp, rec = normalize(upsampled, "per-echo")
    refined = infer_volume(net, inp, patch, stride)
    return denormalize(refined.with_data(refined.data.astype(np.float64)), rec)


def score(truth: MultiEchoVolume, test: MultiEchoVolume, per_slice: bool = False):
    """Quality metrics in the truth's per-echo [0, 1] range (test clipped)."""
    _, rec = normalize(truth, "per-echo")
    # both volumes take the same arithmetic path, so identical inputs score exactly
    truth01, test01 = (v.with_data(np.clip(apply_record(v, rec).data, 0.0, 1.0)) for v in (truth, test))
    return metrics.quality_report(truth01, test01, per_slice=per_slice)


@dataclass
class Cohort1Result:
    volumes: dict[str, MultiEchoVolume]
    reports: dict[str, list[metrics.QualityReport]]

    def to_json(self) -> dict:
        return {name: [r.to_json() for r in reps] for name, reps in self.reports.items()}


def cohort1(truth: MultiEchoVolume, net: Network, factor: int = 2, patch: int = 32, stride: int = 16,
            per_slice: bool = False) -> Cohort1Result:
    stage = "degrade"
    try:
        thick = degrade_slices(truth, factor)
        stage = "tci"
        vols = {"tci": tricubic_upsample(thick, factor)}
        stage = "fourier"
        vols["fi"] = fourier_upsample(thick, factor)
        stage = "network"
        vols["mrsr"] = super_resolve(net, thick, factor, patch, stride)
        stage = "evaluate"
        reports = {name: score(truth, v, per_slice) for name, v in vols.items()}
    except (ValueError, ArithmeticError) as exc:
        raise StageError(stage, exc) from exc
    vols["degraded"] = thick
    return Cohort1Result(vols, reports)


def run_cohort1(gt_path, weights_path, out_dir, factor: int = 2, per_slice: bool = False) -> dict:
    """File-level cohort-1 run; nothing is written unless every stage succeeds."""
    gt_path, weights_path, out_dir = Path(gt_path), Path(weights_path), Path(out_dir)
    for p in (gt_path, weights_path):
        if not p.is_file():
            raise FileNotFoundError(f"missing input {p}")
    truth = load_volume(gt_path)
    net = load_weights(weights_path)
    if net.in_channels != truth.echoes:
        raise ValueError(f"network has {net.in_channels} channels, volume has {truth.echoes} echoes")
    result = cohort1(truth, net, factor, per_slice=per_slice)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, vol in result.volumes.items():
        save_volume(vol, out_dir / f"{name}.mrsv")
    report = result.to_json()
    write_json(out_dir / "report.json", report)
    return report


@dataclass
class Subject:
    name: str
    truth: MultiEchoVolume
    roi: RoiMask
    methods: dict[str, MultiEchoVolume] = field(default_factory=dict)


def cohort2(subjects, params, t2_range=(0.0, 100.0), mode: str = "auto") -> dict:
    """ROI-mean T2 per subject and method, summarized against the truth."""
    if not subjects:
        raise ValueError("cohort needs at least one subject")
    names = list(subjects[0].methods)
    truth_t2, method_t2 = [], {m: [] for m in names}
    for subj in subjects:
        if list(subj.methods) != names:
            raise ValueError(f"subject {subj.name} has methods {list(subj.methods)}, expected {names}")
        try:
            truth_t2.append(roi_mean_t2(estimate_t2(subj.truth, params, t2_range), subj.roi))
            for m in names:
                method_t2[m].append(roi_mean_t2(estimate_t2(subj.methods[m], params, t2_range), subj.roi))
        except ValueError as exc:
            raise StageError(f"t2:{subj.name}", exc) from exc
    labels = [s.name for s in subjects]
    out = {}
    for m in names:
        pairs = list(zip(truth_t2, method_t2[m]))
        out[m] = metrics.agreement_report(pairs, labels, mode).to_json()
    return out


def run_cohort2(manifest_path, scan_path, report_path, t2_range=(0.0, 100.0)) -> dict:
    """``manifest`` JSON: ``{"subjects": [{"name", "truth", "roi", "methods": {name: path}}]}``.

    Relative paths resolve against the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    if not Path(scan_path).is_file():
        raise FileNotFoundError(f"missing scan parameters {scan_path}")
    params = load_scan_params(scan_path)
    base = manifest_path.parent
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    subjects = []
    for entry in manifest["subjects"]:
        subjects.append(
            Subject(
                name=str(entry["name"]),
                truth=load_volume(base / entry["truth"]),
                roi=RoiMask.from_volume(load_volume(base / entry["roi"])),
                methods={k: load_volume(base / v) for k, v in entry["methods"].items()},
            )
        )
    report = cohort2(subjects, params, t2_range)
    write_json(Path(report_path), report)
    return report


def read_pairs_csv(path):
    subjects, pairs = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"subject", "ground_truth_ms", "method_ms"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain {sorted(need)}")
        for row in reader:
            subjects.append(row["subject"])
            pairs.append((float(row["ground_truth_ms"]), float(row["method_ms"])))
    return subjects, pairs


def write_json(path: Path, obj) -> None:
    _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())
