"""Dataset ingestion, experiment orchestration, and result persistence.

The manifest is a JSON file listing trials (image paths, ground-truth box,
experiment tag, and for object arrays the six item centers).  Human
fixations arrive as a flat CSV; ingestion merges micro-fixations, drops the
initial center fixation, filters object-array fixations to the six items,
and applies the same found-on-first-fixation oracle the models use, so
human and model scanpaths are directly comparable.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import __version__
from .features import GrayImage, PrecomputedBackend, RandomConvBackend
from .metrics import PerformanceCurve, cumulative_performance
from .policies import (
    ExperimentConfig,
    Scanpath,
    SearchPolicy,
    Trial,
    base_attention_map,
    oracle_check,
    run_trial,
)
from .tensor import FeatureMap, PixelWindow, write_tensor


class ManifestError(ValueError):
    """The dataset manifest is malformed."""


def _atomic_write_bytes(path, payload: bytes) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def write_json_atomic(path, obj) -> None:
    _atomic_write_bytes(path, json.dumps(obj, indent=2, sort_keys=True).encode())


def load_gray_image(path, pixels_per_degree: float = 32.0) -> GrayImage:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return GrayImage(arr, pixels_per_degree)


def image_dims(path) -> tuple[int, int]:
    from PIL import Image

    with Image.open(path) as im:
        return im.size  # (width, height)


@dataclass
class ManifestEntry:
    id: str
    experiment: str
    target_image_path: str | None
    search_image_path: str | None
    bbox: tuple[int, int, int, int]
    search_dims: tuple[int, int]
    exp1_positions: list[tuple[int, int]] | None = None

    @property
    def target_image_id(self) -> str:
        return f"{self.id}__target"

    @property
    def search_image_id(self) -> str:
        return f"{self.id}__search"


@dataclass
class DatasetManifest:
    version: int
    trials: list[ManifestEntry]
    root: str = "."

    def entry(self, trial_id: str) -> ManifestEntry:
        for t in self.trials:
            if t.id == trial_id:
                return t
        raise KeyError(f"trial {trial_id!r} not in manifest")


def load_manifest(path) -> DatasetManifest:
    with open(path) as fh:
        raw = json.load(fh)
    root = os.path.dirname(os.path.abspath(path))
    trials = []
    seen = set()
    for i, t in enumerate(raw.get("trials", [])):
        try:
            tid = str(t["id"])
            if tid in seen:
                raise ManifestError(f"duplicate trial id {tid!r}")
            seen.add(tid)
            bbox = (int(t["bbox"]["x"]), int(t["bbox"]["y"]),
                    int(t["bbox"]["w"]), int(t["bbox"]["h"]))
            target_path = t.get("target_image_path")
            search_path = t.get("search_image_path")
            if "search_dims" in t:
                dims = (int(t["search_dims"][0]), int(t["search_dims"][1]))
            elif search_path:
                dims = image_dims(os.path.join(root, search_path))
            else:
                raise ManifestError(f"trial {tid}: need search_dims or a search image")
            positions = t.get("exp1_positions")
            if positions is not None:
                positions = [(int(p[0]), int(p[1])) for p in positions]
            entry = ManifestEntry(id=tid, experiment=str(t["experiment"]),
                                  target_image_path=target_path,
                                  search_image_path=search_path,
                                  bbox=bbox, search_dims=dims,
                                  exp1_positions=positions)
            # construct a Trial now to run the invariant checks early
            _ = build_trial(entry, load_images=False)
            trials.append(entry)
        except ManifestError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"manifest entry {i}: {exc}") from exc
    return DatasetManifest(version=int(raw.get("version", 1)), trials=trials, root=root)


def build_trial(entry: ManifestEntry, load_images: bool,
                pixels_per_degree: float = 32.0, root: str = ".") -> Trial:
    """Materialize a Trial; with load_images the pixel data is read from disk,
    otherwise images are referenced by id (for the precomputed backend)."""
    target = entry.target_image_id
    search = entry.search_image_id
    if load_images:
        if entry.target_image_path:
            target = load_gray_image(os.path.join(root, entry.target_image_path),
                                     pixels_per_degree)
        else:
            target = None
        if entry.search_image_path:
            search = load_gray_image(os.path.join(root, entry.search_image_path),
                                     pixels_per_degree)
        else:
            search = None
    return Trial(id=entry.id, experiment=entry.experiment, target_bbox=entry.bbox,
                 search_dims=entry.search_dims, target_image=target,
                 search_image=search, exp1_positions=entry.exp1_positions)


# ---------------------------------------------------------------------------
# Human fixation ingestion

FIXATION_COLUMNS = ("trial_id", "subject_id", "fixation_index", "x", "y",
                    "onset_ms", "duration_ms")


@dataclass
class IngestReport:
    rows_in: int = 0
    rows_used: int = 0
    rows_rejected: int = 0
    rows_merged_away: int = 0
    rejects: list[dict] = field(default_factory=list)

    def consistent(self) -> bool:
        return self.rows_in == self.rows_used + self.rows_rejected + self.rows_merged_away


@dataclass
class IngestResult:
    scanpaths: list[Scanpath]
    report: IngestReport


def _object_region_windows(entry: ManifestEntry, region_px: int) -> list[PixelWindow]:
    return [PixelWindow.square(px, py, region_px) for px, py in entry.exp1_positions or []]


def ingest_human_fixations(csv_path, manifest: DatasetManifest,
                           merge_box_px: int = 45,
                           center_radius_px: int = 32,
                           configs: dict[str, ExperimentConfig] | None = None) -> IngestResult:
    """Turn a fixation CSV into oracle-scored scanpaths.

    Consecutive fixations within a merge_box_px box collapse into one
    (duration-weighted position, summed duration); leading fixations near
    the display center are dropped; object-array fixations outside all six
    item regions are dropped; the per-experiment oracle sets found/found_at.
    """
    report = IngestReport()
    groups: dict[tuple[str, str], list[dict]] = {}
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in FIXATION_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{csv_path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            report.rows_in += 1
            try:
                entry = manifest.entry(str(row["trial_id"]))
            except KeyError:
                report.rows_rejected += 1
                report.rejects.append({"line": lineno, "reason": "unknown_trial",
                                       "trial_id": row.get("trial_id")})
                continue
            try:
                fx = float(row["x"])
                fy = float(row["y"])
                rec = {"line": lineno, "x": fx, "y": fy,
                       "index": int(row["fixation_index"]),
                       "duration": float(row["duration_ms"])}
            except (TypeError, ValueError):
                report.rows_rejected += 1
                report.rejects.append({"line": lineno, "reason": "malformed_row"})
                continue
            w, h = entry.search_dims
            if not (0 <= fx < w and 0 <= fy < h):
                report.rows_rejected += 1
                report.rejects.append({"line": lineno, "reason": "outside_image"})
                continue
            groups.setdefault((entry.id, str(row["subject_id"])), []).append(rec)

    scanpaths = []
    configs = configs or {}
    for (trial_id, subject_id), rows in sorted(groups.items()):
        entry = manifest.entry(trial_id)
        cfg = configs.get(entry.experiment) or ExperimentConfig.for_experiment(entry.experiment)
        rows.sort(key=lambda r: r["index"])
        w, h = entry.search_dims
        cx, cy = w / 2.0, h / 2.0

        kept = []
        at_start = True
        obj_windows = (_object_region_windows(entry, cfg.object_region_px)
                       if entry.experiment in ("Exp1", "Exp4") else None)
        for r in rows:
            if at_start and abs(r["x"] - cx) <= center_radius_px \
                    and abs(r["y"] - cy) <= center_radius_px:
                report.rows_rejected += 1
                report.rejects.append({"line": r["line"], "reason": "initial_center"})
                continue
            at_start = False
            if obj_windows is not None and not any(wdw.contains(r["x"], r["y"])
                                                   for wdw in obj_windows):
                report.rows_rejected += 1
                report.rejects.append({"line": r["line"], "reason": "outside_objects"})
                continue
            kept.append(r)

        merged: list[dict] = []
        half = merge_box_px // 2
        for r in kept:
            if merged:
                last = merged[-1]
                if abs(r["x"] - last["x"]) <= half and abs(r["y"] - last["y"]) <= half:
                    total = last["duration"] + r["duration"]
                    if total > 0:
                        last["x"] = (last["x"] * last["duration"] + r["x"] * r["duration"]) / total
                        last["y"] = (last["y"] * last["duration"] + r["y"] * r["duration"]) / total
                    last["duration"] = total
                    report.rows_merged_away += 1
                    continue
            merged.append(dict(r))
        report.rows_used += len(merged)

        if not merged:
            continue
        trial = build_trial(entry, load_images=False)
        fixations = [(int(round(r["x"])), int(round(r["y"]))) for r in merged]
        found_at = None
        for i, fix in enumerate(fixations, start=1):
            if oracle_check(fix, trial, cfg):
                found_at = i
                break
        scanpaths.append(Scanpath(trial_id=trial_id, fixations=fixations,
                                  found=found_at is not None, found_at=found_at,
                                  policy=f"human/{subject_id}", seed=0))
    return IngestResult(scanpaths, report)


# ---------------------------------------------------------------------------
# Scanpath CSV round-trip

SCANPATH_COLUMNS = ("trial_id", "policy", "seed", "fix_index", "x", "y", "found_here")


def scanpaths_to_csv(scanpaths: list[Scanpath]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCANPATH_COLUMNS)
    ordered = sorted(scanpaths, key=lambda p: (p.trial_id, p.policy, p.seed))
    for p in ordered:
        for i, (x, y) in enumerate(p.fixations, start=1):
            writer.writerow([p.trial_id, p.policy, p.seed, i, x, y,
                             int(p.found and p.found_at == i)])
    return buf.getvalue()


def write_scanpaths_csv(path, scanpaths: list[Scanpath]) -> None:
    _atomic_write_bytes(path, scanpaths_to_csv(scanpaths).encode())


def read_scanpaths_csv(path) -> list[Scanpath]:
    by_key: dict[tuple, list[dict]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["trial_id"], row["policy"], int(row["seed"]))
            by_key.setdefault(key, []).append(row)
    out = []
    for (trial_id, policy, seed), rows in sorted(by_key.items()):
        rows.sort(key=lambda r: int(r["fix_index"]))
        fixations = [(int(float(r["x"])), int(float(r["y"]))) for r in rows]
        found_at = next((int(r["fix_index"]) for r in rows if r["found_here"] == "1"), None)
        out.append(Scanpath(trial_id=trial_id, fixations=fixations,
                            found=found_at is not None, found_at=found_at,
                            policy=policy, seed=seed))
    return out


def write_curve_csv(path, curve: PerformanceCurve) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["fix_index", "cumulative", "stderr"])
    for i, (c, e) in enumerate(zip(curve.cumulative, curve.stderr), start=1):
        writer.writerow([i, f"{c:.6f}", f"{e:.6f}"])
    _atomic_write_bytes(path, buf.getvalue().encode())


# ---------------------------------------------------------------------------
# Experiment runner

@dataclass
class RunConfig:
    policies: list[str]
    out_dir: str
    seed: int = 0
    backend: str = "random"            # "random" or "precomputed"
    features_dir: str | None = None
    weight_seed: int = 0
    budget: int | None = None
    pixels_per_degree: float = 32.0
    chance_repetitions: int = 100
    ranweight_iterations: int = 30
    workers: int = 1
    dump_attention: bool = False
    # per-experiment ExperimentConfig field overrides,
    # e.g. {"Exp3": {"ior_window_px": 120}}
    experiment_overrides: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _stable_seed(base_seed: int, trial_id: str, policy: str, rep: int) -> int:
    key = f"{base_seed}:{trial_id}:{policy}:{rep}".encode()
    return zlib.crc32(key) ^ (base_seed & 0xFFFFFFFF)


def _policy_reps(policy: SearchPolicy, cfg: RunConfig) -> int:
    if policy.kind == "chance":
        return cfg.chance_repetitions
    if policy.kind == "ranweight":
        return cfg.ranweight_iterations
    return 1


@dataclass
class RunResult:
    scanpaths: list[Scanpath]
    summary: dict
    skipped: list[dict]

    @property
    def clean(self) -> bool:
        return not self.skipped


def run_experiment(config: RunConfig, manifest: DatasetManifest) -> RunResult:
    """Execute every (trial, policy, repetition), then persist results.

    Output: scanpaths.csv, one cumulative curve CSV per policy, and
    summary.json carrying per-policy statistics plus a provenance block.
    Trials whose inputs are missing are skipped and listed; the run is
    "clean" only when nothing was skipped.
    """
    os.makedirs(config.out_dir, exist_ok=True)
    policies = [SearchPolicy.parse(name) for name in config.policies]
    pixel_needed = any(not p.uses_features or config.backend == "random" for p in policies)

    shared_backend = None
    if config.backend == "precomputed":
        if not config.features_dir:
            raise ValueError("precomputed backend needs features_dir")
        shared_backend = PrecomputedBackend(config.features_dir)
    else:
        shared_backend = RandomConvBackend(weight_seed=config.weight_seed)

    jobs = []
    skipped = []
    for entry in manifest.trials:
        overrides = {"pixels_per_degree": config.pixels_per_degree}
        if config.budget is not None:
            overrides["max_fixations"] = config.budget
        overrides.update(config.experiment_overrides.get(entry.experiment, {}))
        exp_cfg = ExperimentConfig.for_experiment(entry.experiment, **overrides)
        load_images = config.backend == "random" or any(not p.uses_features for p in policies)
        try:
            trial = build_trial(entry, load_images=load_images,
                                pixels_per_degree=config.pixels_per_degree,
                                root=manifest.root)
        except (OSError, ValueError) as exc:
            for policy in policies:
                skipped.append({"trial": entry.id, "policy": policy.kind, "error": str(exc)})
            continue
        for policy in policies:
            for rep in range(_policy_reps(policy, config)):
                jobs.append((trial, policy, exp_cfg,
                             _stable_seed(config.seed, entry.id, policy.kind, rep), rep))
        if config.dump_attention:
            skipped.extend(_dump_attention_for_run(config, trial, policies, shared_backend))

    def _execute(job):
        trial, policy, exp_cfg, seed, rep = job
        backend = shared_backend
        if policy.kind == "ranweight":
            backend = RandomConvBackend(weight_seed=seed)
        try:
            return run_trial(trial, policy, exp_cfg, backend, seed=seed), None
        except Exception as exc:
            return None, {"trial": trial.id, "policy": policy.kind, "error": str(exc)}

    results = []
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_execute, jobs))
    else:
        outcomes = [_execute(j) for j in jobs]
    for path_or_none, problem in outcomes:
        if problem is not None:
            skipped.append(problem)
        else:
            results.append(path_or_none)

    results.sort(key=lambda p: (p.trial_id, p.policy, p.seed))
    write_scanpaths_csv(os.path.join(config.out_dir, "scanpaths.csv"), results)

    summary_policies = {}
    for policy in policies:
        mine = [p for p in results if p.policy == policy.kind]
        if not mine:
            continue
        found_counts = [p.found_at for p in mine if p.found]
        per_trial: dict[str, list[int]] = {}
        for p in mine:
            if p.found:
                per_trial.setdefault(p.trial_id, []).append(p.found_at)
        stats = {
            "n_runs": len(mine),
            "runs_per_trial": _policy_reps(policy, config),
            "mean_fixations": float(np.mean(found_counts)) if found_counts else None,
            "sd_fixations": float(np.std(found_counts)) if found_counts else None,
            "fraction_unfound": float(np.mean([not p.found for p in mine])),
            "per_trial_mean_fixations": {t: float(np.mean(v)) for t, v in sorted(per_trial.items())},
        }
        if policy.kind == "ranweight":
            per_seed: dict[int, list[int]] = {}
            for p in mine:
                if p.found:
                    per_seed.setdefault(p.seed, []).append(p.found_at)
            seed_means = {s: float(np.mean(v)) for s, v in sorted(per_seed.items())}
            stats["per_seed_mean_fixations"] = seed_means
            if seed_means:
                vals = list(seed_means.values())
                stats["across_seed_mean"] = float(np.mean(vals))
                stats["across_seed_sd"] = float(np.std(vals))
        summary_policies[policy.kind] = stats
        max_n = max((len(p.fixations) for p in mine), default=1)
        curve = cumulative_performance(mine, max_n=max_n)
        write_curve_csv(os.path.join(config.out_dir, f"curve_{policy.kind}.csv"), curve)

    config_json = json.dumps(config.to_dict(), sort_keys=True)
    summary = {
        "provenance": {
            "config": config.to_dict(),
            "config_hash": hashlib.sha256(config_json.encode()).hexdigest(),
            "package_version": __version__,
        },
        "policies": summary_policies,
        "skipped": skipped,
    }
    write_json_atomic(os.path.join(config.out_dir, "summary.json"), summary)
    return RunResult(results, summary, skipped)


def dump_attention_map(amap, stem) -> None:
    """Write an attention map for inspection: single-channel IVSNT1 tensor
    plus a grayscale PNG."""
    from PIL import Image

    write_tensor(f"{stem}.ivsnt", FeatureMap(amap.values[np.newaxis, :, :]))
    img = (np.clip(amap.values, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(img, mode="L").save(f"{stem}.png")


def _dump_attention_for_run(config: RunConfig, trial: Trial,
                            policies: list[SearchPolicy], backend) -> list[dict]:
    problems = []
    for policy in policies:
        if policy.kind in ("chance", "sliding_window", "ranweight"):
            continue
        try:
            amap = base_attention_map(trial, policy, backend)
        except Exception as exc:
            problems.append({"trial": trial.id, "policy": policy.kind,
                             "error": f"attention dump: {exc}"})
            continue
        stem = os.path.join(config.out_dir, f"attention_{trial.id}_{policy.kind}")
        dump_attention_map(amap, stem)
    return problems


# ---------------------------------------------------------------------------
# Rendering

def render_scanpath(trial: Trial, scanpath: Scanpath, out_path,
                    attention: np.ndarray | None = None) -> None:
    """Numbered fixations with arrows over the search image, bbox outlined.

    The emitted PNG has exactly the search image's pixel dimensions.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    w, h = trial.search_dims
    dpi = 100
    fig = plt.figure(figsize=(w / dpi, h / dpi), dpi=dpi)
    ax = fig.add_axes([0, 0, 1, 1])
    ax.set_axis_off()
    if isinstance(trial.search_image, GrayImage):
        ax.imshow(trial.search_image.intensities, cmap="gray", vmin=0, vmax=1,
                  extent=(0, w, h, 0), interpolation="nearest")
    else:
        ax.imshow(np.zeros((h, w)), cmap="gray", vmin=0, vmax=1,
                  extent=(0, w, h, 0), interpolation="nearest")
    if attention is not None:
        ax.imshow(attention, cmap="inferno", alpha=0.4, extent=(0, w, h, 0),
                  interpolation="nearest")
    x0, y0, bw, bh = trial.target_bbox
    ax.add_patch(plt.Rectangle((x0, y0), bw, bh, fill=False, edgecolor="lime", linewidth=2))
    pts = scanpath.fixations
    for i in range(len(pts) - 1):
        ax.annotate("", xy=pts[i + 1], xytext=pts[i],
                    arrowprops=dict(arrowstyle="->", color="yellow", lw=1.5))
    for i, (x, y) in enumerate(pts, start=1):
        final = scanpath.found and scanpath.found_at == i
        color = "red" if final else "deepskyblue"
        ax.plot(x, y, "o", color=color, markersize=10,
                markeredgecolor="white", zorder=3)
        ax.annotate(str(i), xy=(x, y), color="white", fontsize=8,
                    ha="center", va="center", zorder=4)
    ax.set_xlim(0, w)
    ax.set_ylim(h, 0)
    fig.savefig(out_path, dpi=dpi)
    plt.close(fig)


def render_curves(curves: list[tuple[str, PerformanceCurve]], out_path,
                  chance: PerformanceCurve | None = None) -> None:
    """Cumulative curves with error bars and an optional chance reference."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not curves:
        raise ValueError("no curves to render")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for label, curve in curves:
        xs = np.arange(1, len(curve.cumulative) + 1)
        ax.errorbar(xs, curve.cumulative, yerr=curve.stderr, label=label, capsize=2)
    if chance is not None:
        xs = np.arange(1, len(chance.cumulative) + 1)
        ax.plot(xs, chance.cumulative, "k--", label="chance")
    ax.set_xlabel("fixation number")
    ax.set_ylabel("cumulative performance")
    ax.set_ylim(0, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
