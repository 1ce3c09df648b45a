"""Evaluation mathematics for scanpaths.

Cumulative search performance, fixation-count consistency, scanpath
similarity (mean-shift clustering plus global sequence alignment),
saccade-size statistics, and distance-to-target profiles including the
closed-form expected distance between two uniform points in a rectangle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .policies import Scanpath


@dataclass
class PerformanceCurve:
    """How often the target is found within the first n fixations."""

    counts: np.ndarray       # counts[k] = trials first finding the target at k+1
    cumulative: np.ndarray   # fractions, monotone nondecreasing
    stderr: np.ndarray       # binomial standard error per point
    n_trials: int

    def mean_fixations_when_found(self) -> float:
        total = self.counts.sum()
        if total == 0:
            return math.nan
        return float((self.counts * np.arange(1, len(self.counts) + 1)).sum() / total)


def cumulative_performance(scanpaths: list[Scanpath], max_n: int | None = None) -> PerformanceCurve:
    """Fraction of trials finding the target within n fixations, n = 1..max_n.

    Trials that never find the target enlarge the denominator but add to no
    count, so the curve can saturate below 1.
    """
    if not scanpaths:
        raise ValueError("no scanpaths given")
    if max_n is None:
        max_n = max((len(p.fixations) for p in scanpaths), default=1)
        max_n = max(max_n, 1)
    counts = np.zeros(max_n, dtype=np.int64)
    for p in scanpaths:
        if p.found and p.found_at is not None and p.found_at <= max_n:
            counts[p.found_at - 1] += 1
    n = len(scanpaths)
    cumulative = np.cumsum(counts) / n
    stderr = np.sqrt(cumulative * (1.0 - cumulative) / n)
    return PerformanceCurve(counts, cumulative, stderr, n)


@dataclass
class FixationClustering:
    """Mean-shift modes over fixations; every fixation maps to one cluster."""

    centers: np.ndarray      # (k, 2) as x, y
    bandwidth: float
    assignment: list[int]    # cluster index per input fixation

    def label(self, idx: int) -> str:
        return chr(ord("A") + idx) if idx < 26 else f"C{idx}"

    def assign(self, points) -> list[int]:
        """Nearest-center assignment for arbitrary points (e.g. model fixations)."""
        pts = np.asarray(points, dtype=np.float64)
        d = np.linalg.norm(pts[:, None, :] - self.centers[None, :, :], axis=2)
        return [int(i) for i in np.argmin(d, axis=1)]


def meanshift_cluster(fixations, bandwidth: float, tol: float = 0.1,
                      max_iter: int = 500) -> FixationClustering:
    """Flat-kernel mean shift run to convergence (shift below tol pixels).

    Modes closer than bandwidth/2 merge; processing follows input order so
    the result is deterministic.
    """
    pts = np.asarray(fixations, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] != 2:
        raise ValueError("need at least one (x, y) fixation")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    modes = []
    for p in pts:
        m = p.copy()
        for _ in range(max_iter):
            d = np.linalg.norm(pts - m, axis=1)
            inside = pts[d <= bandwidth]
            nxt = inside.mean(axis=0)
            if np.linalg.norm(nxt - m) < tol:
                m = nxt
                break
            m = nxt
        modes.append(m)
    centers: list[np.ndarray] = []
    assignment: list[int] = []
    for m in modes:
        for i, c in enumerate(centers):
            if np.linalg.norm(m - c) < bandwidth / 2.0:
                assignment.append(i)
                break
        else:
            centers.append(m)
            assignment.append(len(centers) - 1)
    return FixationClustering(np.array(centers), float(bandwidth), assignment)


@dataclass
class ScanpathSimilarity:
    """Alignment-based similarity in [0,1]; 1 means identical sequences."""

    score: float
    aligned_length: int
    tokens_a: list[int]
    tokens_b: list[int]


def substitution_score(center_i, center_j, bandwidth: float) -> float:
    d = float(np.linalg.norm(np.asarray(center_i, float) - np.asarray(center_j, float)))
    return max(0.0, 1.0 - d / (2.0 * bandwidth))


def align_score(tokens_a, tokens_b, sub_matrix: np.ndarray) -> float:
    """Global alignment score with zero gap penalty (monotone best matching)."""
    m, n = len(tokens_a), len(tokens_b)
    dp = np.zeros((m + 1, n + 1))
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            dp[i, j] = max(dp[i - 1, j - 1] + sub_matrix[tokens_a[i - 1], tokens_b[j - 1]],
                           dp[i - 1, j], dp[i, j - 1])
    return float(dp[m, n])


def scanpath_score(a: Scanpath, b: Scanpath, clustering: FixationClustering,
                   prefix_len: int | None = None) -> ScanpathSimilarity:
    """Similarity of two scanpaths through the cluster alphabet.

    Fixations map to their nearest cluster; the alignment uses a
    substitution score that decays with inter-center distance and no gap
    penalty, normalized by the longer sequence's self-score so the result
    lies in [0,1] with score(a, a) = 1.
    """
    fa, fb = a.fixations, b.fixations
    if prefix_len is not None:
        if len(fa) < prefix_len or len(fb) < prefix_len:
            raise ValueError(f"both scanpaths need at least {prefix_len} fixations")
        fa, fb = fa[:prefix_len], fb[:prefix_len]
    if not fa or not fb:
        raise ValueError("cannot score an empty scanpath")
    ta = clustering.assign(fa)
    tb = clustering.assign(fb)
    k = len(clustering.centers)
    sub = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            sub[i, j] = substitution_score(clustering.centers[i], clustering.centers[j],
                                           clustering.bandwidth)
    raw = align_score(ta, tb, sub)
    longer = max(len(ta), len(tb))
    return ScanpathSimilarity(score=raw / longer, aligned_length=longer,
                              tokens_a=ta, tokens_b=tb)


def fixation_count_correlation(pairs) -> float | None:
    """Pearson correlation of fixation counts; None when undefined."""
    clean = [(a, b) for a, b in pairs if a is not None and b is not None]
    if len(clean) < 3:
        raise ValueError("need at least three complete pairs")
    xs = np.array([p[0] for p in clean], dtype=np.float64)
    ys = np.array([p[1] for p in clean], dtype=np.float64)
    if xs.std() == 0.0 or ys.std() == 0.0:
        return None
    return float(np.corrcoef(xs, ys)[0, 1])


def expected_random_distance(width_deg: float, height_deg: float) -> float:
    """Mean distance between two uniform points in a width x height rectangle."""
    lw, lh = float(width_deg), float(height_deg)
    if lw <= 0 or lh <= 0:
        raise ValueError("rectangle sides must be positive")
    d = math.hypot(lw, lh)
    return (1.0 / 15.0) * (
        lw ** 3 / lh ** 2
        + lh ** 3 / lw ** 2
        + d * (3.0 - lw ** 2 / lh ** 2 - lh ** 2 / lw ** 2)
        + 2.5 * (lh ** 2 / lw * math.log((lw + d) / lh)
                 + lw ** 2 / lh * math.log((lh + d) / lw))
    )


@dataclass
class SaccadeStats:
    sizes_deg: np.ndarray
    mean: float
    sd: float
    hist_counts: np.ndarray
    hist_edges: np.ndarray


def saccade_sizes_deg(path: Scanpath, pixels_per_degree: float) -> list[float]:
    f = path.fixations
    return [math.hypot(f[i + 1][0] - f[i][0], f[i + 1][1] - f[i][1]) / pixels_per_degree
            for i in range(len(f) - 1)]


def saccade_size_stats(scanpaths: list[Scanpath], pixels_per_degree: float = 32.0,
                       bins: int = 40) -> SaccadeStats:
    """Inter-fixation distances in degrees; single-fixation paths contribute nothing."""
    sizes = []
    for p in scanpaths:
        sizes.extend(saccade_sizes_deg(p, pixels_per_degree))
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.size == 0:
        return SaccadeStats(sizes, math.nan, math.nan, np.zeros(bins, dtype=int),
                            np.linspace(0, 1, bins + 1))
    counts, edges = np.histogram(sizes, bins=bins)
    return SaccadeStats(sizes, float(sizes.mean()), float(sizes.std()), counts, edges)


def distance_to_target_profile(scanpaths: list[Scanpath],
                               target_centers: dict[str, tuple[float, float]],
                               last_k: int = 6,
                               pixels_per_degree: float = 32.0) -> dict[int, np.ndarray]:
    """Distances to the target for the last fixations of found trials.

    Key j holds the distances for the fixation j steps before the finding
    one (j = 0 is the fixation that found the target).
    """
    out: dict[int, list[float]] = {j: [] for j in range(last_k)}
    for p in scanpaths:
        if not p.found or p.found_at is None:
            continue
        cx, cy = target_centers[p.trial_id]
        for j in range(last_k):
            idx = p.found_at - 1 - j
            if idx < 0:
                break
            fx, fy = p.fixations[idx]
            out[j].append(math.hypot(fx - cx, fy - cy) / pixels_per_degree)
    return {j: np.asarray(v) for j, v in out.items()}


def revisit_probability_by_lag(scanpaths: list[Scanpath], radius_deg: float = 3.0,
                               pixels_per_degree: float = 32.0,
                               max_lag: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Empirical probability that fixation i lands within radius_deg of the
    fixation made `lag` steps earlier; the input for fitting finite memory."""
    radius_px = radius_deg * pixels_per_degree
    hits: dict[int, int] = {}
    totals: dict[int, int] = {}
    for p in scanpaths:
        f = p.fixations
        for j in range(1, len(f)):
            for i in range(j):
                lag = j - i
                if max_lag is not None and lag > max_lag:
                    continue
                totals[lag] = totals.get(lag, 0) + 1
                if math.hypot(f[j][0] - f[i][0], f[j][1] - f[i][1]) <= radius_px:
                    hits[lag] = hits.get(lag, 0) + 1
    lags = np.array(sorted(totals))
    probs = np.array([hits.get(l, 0) / totals[l] for l in lags], dtype=np.float64)
    return lags, probs
