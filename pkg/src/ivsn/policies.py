"""Fixation-generating search policies and their stop rules.

Every policy turns a trial into a scanpath under the same outer loop: build
an attention map, pick the next fixation, test it against the stop rule
(an idealized oracle, or a feature-distance recognizer), and on a miss
suppress the fixated window before the next pick.  Object-array trials
(six items on a circle) restrict fixations to the six object centers, the
same space the human fixation analysis uses; full-scene trials fixate any
pixel.

Policies
  ivsn                feature-modulated attention, permanent suppression
  ivsn_recognition    same map, stop rule replaced by a feature recognizer
  ivsn_fior           finite memory: suppression fades, revisits possible
  ivsn_size           saccade length drawn from a gamma; map picks the spot
  ivsn_24_23 etc.     modulation moved to a lower layer pair
  chance              uniform random fixations, still never revisiting
  sliding_window      deterministic raster scan
  template_matching   pixel-level correlation with a 28x28 template
  ittikoch            pure bottom-up saliency
  ranweight           ivsn with random-weight features (multi-seed)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .attention import (
    MemoryFunction,
    ModulationConfig,
    SizeConstraint,
    compute_attention,
    memory_multipliers,
    size_constraint_field,
)
from .features import GrayImage, resize_gray, tile_image
from .saliency import ittikoch_saliency
from .tensor import (
    AttentionMap,
    FeatureMap,
    MapExhausted,
    PixelWindow,
    argmax_pixel,
    correlate_valid,
    normalize01,
    suppress_window,
    upsample_to_pixels,
)

EXPERIMENTS = ("Exp1", "Exp2", "Exp3", "Exp4")

POLICY_KINDS = (
    "ivsn", "ivsn_recognition", "ivsn_fior", "ivsn_size",
    "ivsn_24_23", "ivsn_17_16", "ivsn_10_9", "ivsn_5_4",
    "chance", "sliding_window", "template_matching", "ittikoch", "ranweight",
)

_LAYER_VARIANTS = {
    "ivsn_24_23": (24, 23), "ivsn_17_16": (17, 16),
    "ivsn_10_9": (10, 9), "ivsn_5_4": (5, 4),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Per-experiment geometry: window sizes, fixation budget, display scale."""

    ior_window_px: int
    recognition_window_px: int
    max_fixations: int
    pixels_per_degree: float = 32.0
    object_region_px: int = 156  # object-array item footprint

    def __post_init__(self):
        if self.ior_window_px < 1 or self.recognition_window_px < 1:
            raise ValueError("window sizes must be positive")
        if self.max_fixations < 1:
            raise ValueError("fixation budget must be at least 1")

    @classmethod
    def for_experiment(cls, experiment: str, **overrides) -> "ExperimentConfig":
        presets = {
            "Exp1": dict(ior_window_px=45, recognition_window_px=45, max_fixations=6),
            "Exp2": dict(ior_window_px=200, recognition_window_px=200, max_fixations=80),
            "Exp3": dict(ior_window_px=100, recognition_window_px=100, max_fixations=80),
            "Exp4": dict(ior_window_px=45, recognition_window_px=45, max_fixations=6),
        }
        if experiment not in presets:
            raise ValueError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")
        params = presets[experiment] | overrides
        return cls(**params)


@dataclass
class Trial:
    """One search problem: a target, a search scene, and ground truth."""

    id: str
    experiment: str
    target_bbox: tuple[int, int, int, int]  # x, y, w, h in search-image pixels
    search_dims: tuple[int, int]            # width, height in pixels
    target_image: GrayImage | str | None = None
    search_image: GrayImage | str | None = None
    exp1_positions: list[tuple[int, int]] | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        x, y, w, h = self.target_bbox
        iw, ih = self.search_dims
        if w < 1 or h < 1 or x < 0 or y < 0 or x + w > iw or y + h > ih:
            raise ValueError(f"trial {self.id}: bbox {self.target_bbox} not inside "
                             f"image {self.search_dims}")
        if self.experiment in ("Exp1", "Exp4"):
            if not self.exp1_positions or len(self.exp1_positions) != 6:
                raise ValueError(f"trial {self.id}: object-array trials need 6 positions")

    @property
    def bbox_center(self) -> tuple[int, int]:
        x, y, w, h = self.target_bbox
        return (x + w // 2, y + h // 2)

    def needs_object_restriction(self) -> bool:
        return self.experiment in ("Exp1", "Exp4")


@dataclass
class Scanpath:
    """Ordered fixations for one trial plus the stop-rule outcome."""

    trial_id: str
    fixations: list[tuple[int, int]]
    found: bool
    found_at: int | None  # 1-based fixation index
    policy: str
    seed: int = 0
    reason: str | None = None  # "budget" or "exhausted" when not found

    def __post_init__(self):
        if self.found and (self.found_at is None or not 1 <= self.found_at <= len(self.fixations)):
            raise ValueError(f"scanpath {self.trial_id}: found_at {self.found_at} "
                             f"inconsistent with {len(self.fixations)} fixations")


@dataclass(frozen=True)
class SearchPolicy:
    """A policy kind plus its knobs; parse() builds one from a CLI name."""

    kind: str
    modulation: ModulationConfig = ModulationConfig()
    memory: MemoryFunction = MemoryFunction.infinite()
    size: SizeConstraint = SizeConstraint()
    recognition_threshold: float = 0.9
    stride: int = 28
    template_size: int = 28
    iterations: int = 30      # ranweight weight seeds
    repetitions: int = 100    # chance repeats per trial

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy {self.kind!r}; expected one of {POLICY_KINDS}")
        if not 0 < self.recognition_threshold < math.sqrt(2) + 1e-9:
            raise ValueError("recognition threshold must lie in (0, sqrt(2)]")
        if self.stride < 1 or self.template_size < 1:
            raise ValueError("stride and template size must be positive")
        if self.iterations < 1 or self.repetitions < 1:
            raise ValueError("iteration and repetition counts must be positive")
        if self.kind in _LAYER_VARIANTS:
            object.__setattr__(self, "modulation", ModulationConfig(*_LAYER_VARIANTS[self.kind]))
        if self.kind == "ivsn_fior" and self.memory.kind == "infinite":
            object.__setattr__(self, "memory", MemoryFunction.finite(beta=0.9, tau=8.0))

    @classmethod
    def parse(cls, name: str, **overrides) -> "SearchPolicy":
        return cls(kind=name.strip().lower(), **overrides)

    @property
    def uses_features(self) -> bool:
        return self.kind.startswith("ivsn") or self.kind == "ranweight"

    @property
    def infinite_ior(self) -> bool:
        return self.kind != "ivsn_fior"


def oracle_check(fixation: tuple[float, float], trial: Trial, cfg: ExperimentConfig) -> bool:
    """True iff the fixation falls in the fixed-size window on the target center."""
    cx, cy = trial.bbox_center
    return PixelWindow.square(cx, cy, cfg.recognition_window_px).contains(*fixation)


def feature_distance(vec_a: np.ndarray, vec_b: np.ndarray) -> float:
    """Euclidean distance between L2-normalized feature vectors (0 .. sqrt 2)."""
    a = np.asarray(vec_a, dtype=np.float64)
    b = np.asarray(vec_b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na > 0:
        a = a / na
    if nb > 0:
        b = b / nb
    return float(np.linalg.norm(a - b))


def is_feature_match(vec_a: np.ndarray, vec_b: np.ndarray, threshold: float = 0.9) -> bool:
    """Recognition rule: match iff the normalized distance is strictly below threshold."""
    return feature_distance(vec_a, vec_b) < threshold


def recognition_check(fixation: tuple[int, int], trial: Trial, cfg: ExperimentConfig,
                      backend, threshold: float = 0.9) -> bool:
    """Compare top-layer features of the fixated crop against the target image."""
    if not isinstance(trial.search_image, GrayImage) or not isinstance(trial.target_image, GrayImage):
        raise ValueError(f"trial {trial.id}: recognition needs in-memory images")
    if not hasattr(backend, "top_feature_vector"):
        raise ValueError("recognition needs a backend that can embed arbitrary crops "
                         "(the precomputed-file backend cannot)")
    win = PixelWindow.square(int(fixation[0]), int(fixation[1]), cfg.recognition_window_px)
    sl = win.clipped_slices(trial.search_image.height, trial.search_image.width)
    if sl is None:
        return False
    crop = GrayImage(trial.search_image.intensities[sl], trial.search_image.pixels_per_degree)
    return is_feature_match(backend.top_feature_vector(crop),
                            backend.top_feature_vector(trial.target_image),
                            threshold)


def template_matching_attention(trial: Trial, template_size: int = 28) -> AttentionMap:
    """Correlate a zero-mean pixel template of the target over the scene."""
    if not isinstance(trial.search_image, GrayImage) or not isinstance(trial.target_image, GrayImage):
        raise ValueError(f"trial {trial.id}: template matching needs in-memory images")
    tmpl = resize_gray(trial.target_image, (template_size, template_size))
    kernel = FeatureMap((tmpl.intensities - tmpl.intensities.mean())[np.newaxis])
    scene = FeatureMap(trial.search_image.intensities[np.newaxis])
    grid = correlate_valid(scene, kernel)
    pix = upsample_to_pixels(grid, (template_size, template_size), scene.spatial_scale,
                             (scene.height, scene.width))
    return normalize01(AttentionMap(pix))


def _feature_attention(trial: Trial, policy: SearchPolicy, backend) -> AttentionMap:
    if backend is None:
        raise ValueError(f"policy {policy.kind} needs a feature backend")
    cfg = policy.modulation
    target_ref = trial.target_image
    search_ref = trial.search_image
    target = backend.target_features(target_ref, cfg.target_layer)
    tiles = backend.search_feature_tiles(search_ref, cfg.search_layer)
    w, h = trial.search_dims
    return compute_attention(target, tiles, cfg, (w, h))


def base_attention_map(trial: Trial, policy: SearchPolicy, backend=None) -> AttentionMap:
    """The policy's trial-constant attention map (before any suppression)."""
    if policy.uses_features:
        return _feature_attention(trial, policy, backend)
    if policy.kind == "template_matching":
        return template_matching_attention(trial, policy.template_size)
    if policy.kind == "ittikoch":
        if not isinstance(trial.search_image, GrayImage):
            raise ValueError(f"trial {trial.id}: saliency needs the search image pixels")
        return ittikoch_saliency(trial.search_image)
    raise ValueError(f"policy {policy.kind} does not use an attention map")


def _object_regions(trial: Trial, cfg: ExperimentConfig):
    """Clipped slices of each object's footprint in the search image."""
    w, h = trial.search_dims
    regions = []
    for (px, py) in trial.exp1_positions:
        win = PixelWindow.square(px, py, cfg.object_region_px)
        regions.append(win.clipped_slices(h, w))
    return regions


def _stop_rule(policy: SearchPolicy, fixation, trial, cfg, backend) -> bool:
    if policy.kind == "ivsn_recognition":
        return recognition_check(fixation, trial, cfg, backend, policy.recognition_threshold)
    return oracle_check(fixation, trial, cfg)


def _finish(trial, policy, seed, fixations, found, found_at, reason=None) -> Scanpath:
    return Scanpath(trial_id=trial.id, fixations=fixations, found=found,
                    found_at=found_at, policy=policy.kind, seed=seed, reason=reason)


def _run_object_array(trial: Trial, policy: SearchPolicy, cfg: ExperimentConfig,
                      backend, seed: int, rng) -> Scanpath:
    """Selection restricted to the six object centers, one visit per object
    (for finite memory, revisits are allowed at the memory-weighted value;
    the size-constrained variant reweights candidates by saccade distance)."""
    from scipy import stats

    regions = _object_regions(trial, cfg)
    centers = [tuple(map(int, p)) for p in trial.exp1_positions]
    base = base_attention_map(trial, policy, backend)
    raw_scores = np.array([base.values[r].max() if r is not None else 0.0 for r in regions])

    w_img, h_img = trial.search_dims
    anchor = (w_img // 2, h_img // 2)
    fixations: list[tuple[int, int]] = []
    visits: dict[int, list[int]] = {}
    found = False
    found_at = None
    reason = None
    for t in range(1, cfg.max_fixations + 1):
        scores = raw_scores.copy()
        if policy.kind == "ivsn_size":
            sc = policy.size
            dist_deg = np.array([math.hypot(cx - anchor[0], cy - anchor[1])
                                 for cx, cy in centers]) / cfg.pixels_per_degree
            g = stats.gamma.pdf(dist_deg, a=sc.gamma_shape, scale=sc.gamma_scale_deg)
            if g.max() > 0:
                g = g / g.max()
            scores = sc.weight * scores + (1.0 - sc.weight) * g
        if policy.memory.kind == "infinite":
            for i in visits:
                scores[i] = -np.inf
        else:
            for i, times in visits.items():
                mult = min(policy.memory.revisit_probability(t - v) for v in times)
                scores[i] = scores[i] * mult
        if not np.isfinite(scores).any():
            reason = "exhausted"
            break
        pick = int(np.argmax(scores))
        fixations.append(centers[pick])
        visits.setdefault(pick, []).append(t)
        if _stop_rule(policy, centers[pick], trial, cfg, backend):
            found, found_at = True, t
            break
        anchor = centers[pick]
    if not found and reason is None:
        reason = "budget"
    return _finish(trial, policy, seed, fixations, found, found_at, reason)


def _run_free_scene(trial: Trial, policy: SearchPolicy, cfg: ExperimentConfig,
                    backend, seed: int, rng) -> Scanpath:
    base = base_attention_map(trial, policy, backend)
    h, w = base.height, base.width
    work = base  # suppressed copy for the infinite-memory policies
    mask = np.ones((h, w))
    anchor = (w // 2, h // 2)  # gaze starts at the display center
    ys, xs = np.ogrid[0:h, 0:w]

    fixations: list[tuple[int, int]] = []
    found = False
    found_at = None
    reason = None
    for t in range(1, cfg.max_fixations + 1):
        try:
            if policy.kind == "ivsn_fior":
                mult = memory_multipliers((h, w), fixations, policy.memory,
                                          cfg.ior_window_px, next_index=t)
                fix = argmax_pixel(AttentionMap(base.values * mult))
            elif policy.kind == "ivsn_size":
                fix = _size_constrained_pick(base.values, mask, anchor, policy.size,
                                             cfg.pixels_per_degree, rng, xs, ys)
            else:
                fix = argmax_pixel(work)
        except MapExhausted:
            reason = "exhausted"
            break
        fixations.append(fix)
        if _stop_rule(policy, fix, trial, cfg, backend):
            found, found_at = True, t
            break
        win = PixelWindow.square(fix[0], fix[1], cfg.ior_window_px)
        if policy.kind == "ivsn_size":
            sl = win.clipped_slices(h, w)
            if sl is not None:
                mask[sl] = 0.0
        elif policy.kind != "ivsn_fior":
            work = suppress_window(work, win)
        anchor = fix
    if not found and reason is None:
        reason = "budget"
    return _finish(trial, policy, seed, fixations, found, found_at, reason)


def _size_constrained_pick(base_values, mask, anchor, sc: SizeConstraint,
                           ppd: float, rng, xs, ys) -> tuple[int, int]:
    """Draw a saccade length from the gamma, land where the blended map is
    highest within an annulus of that radius; widen the annulus if the whole
    ring is already suppressed."""
    fld = size_constraint_field(mask.shape, anchor, sc, ppd)
    combined = (sc.weight * base_values + (1.0 - sc.weight) * fld) * mask
    if not combined.any():
        raise MapExhausted("size-constrained map fully suppressed")
    length = rng.gamma(sc.gamma_shape, sc.gamma_scale_deg)
    dist = np.hypot(xs - anchor[0], ys - anchor[1]) / ppd
    halfwidth = sc.annulus_halfwidth_deg
    diag = math.hypot(mask.shape[0], mask.shape[1]) / ppd
    while halfwidth <= 2 * diag:
        ring = np.abs(dist - length) <= halfwidth
        ring_vals = np.where(ring, combined, 0.0)
        if ring_vals.any():
            return argmax_pixel(AttentionMap(ring_vals))
        halfwidth *= 2.0
    return argmax_pixel(AttentionMap(combined))


def _run_chance(trial: Trial, policy: SearchPolicy, cfg: ExperimentConfig,
                seed: int, rng) -> Scanpath:
    fixations: list[tuple[int, int]] = []
    found = False
    found_at = None
    reason = None
    if trial.needs_object_restriction():
        order = rng.permutation(len(trial.exp1_positions))
        for t, i in enumerate(order[:cfg.max_fixations], start=1):
            fix = tuple(map(int, trial.exp1_positions[i]))
            fixations.append(fix)
            if oracle_check(fix, trial, cfg):
                found, found_at = True, t
                break
    else:
        w, h = trial.search_dims
        mask = np.ones((h, w), dtype=bool)
        for t in range(1, cfg.max_fixations + 1):
            open_idx = np.flatnonzero(mask)
            if open_idx.size == 0:
                reason = "exhausted"
                break
            flat = int(open_idx[rng.integers(open_idx.size)])
            fy, fx = divmod(flat, w)
            fix = (fx, fy)
            fixations.append(fix)
            if oracle_check(fix, trial, cfg):
                found, found_at = True, t
                break
            sl = PixelWindow.square(fx, fy, cfg.ior_window_px).clipped_slices(h, w)
            if sl is not None:
                mask[sl] = False
    if not found and reason is None:
        reason = "budget"
    return _finish(trial, policy, seed, fixations, found, found_at, reason)


def sliding_window_path(trial: Trial, cfg: ExperimentConfig, stride: int = 28,
                        max_fixations: int | None = None) -> Scanpath:
    """Deterministic raster scan; object arrays step through the six objects."""
    policy = SearchPolicy("sliding_window", stride=stride)
    budget = max_fixations if max_fixations is not None else cfg.max_fixations
    fixations: list[tuple[int, int]] = []
    found = False
    found_at = None
    if trial.needs_object_restriction():
        centers = [tuple(map(int, p)) for p in trial.exp1_positions]
    else:
        w, h = trial.search_dims
        half = cfg.recognition_window_px // 2
        xs = list(range(half, max(w - half, half) + 1, stride))
        ys = list(range(half, max(h - half, half) + 1, stride))
        centers = [(x, y) for y in ys for x in xs]
    for t, fix in enumerate(centers[:budget], start=1):
        fixations.append(fix)
        if oracle_check(fix, trial, cfg):
            found, found_at = True, t
            break
    reason = None if found else "budget"
    return _finish(trial, policy, 0, fixations, found, found_at, reason)


def run_trial(trial: Trial, policy: SearchPolicy, cfg: ExperimentConfig,
              backend=None, seed: int = 0) -> Scanpath:
    """Generate one scanpath; reproducible for a fixed (trial, policy, seed)."""
    rng = np.random.default_rng(seed)
    if policy.kind == "chance":
        return _run_chance(trial, policy, cfg, seed, rng)
    if policy.kind == "sliding_window":
        path = sliding_window_path(trial, cfg, policy.stride)
        return replace(path, seed=seed)
    if trial.needs_object_restriction():
        return _run_object_array(trial, policy, cfg, backend, seed, rng)
    return _run_free_scene(trial, policy, cfg, backend, seed, rng)
