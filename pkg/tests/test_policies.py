"""Search policy tests: stop rules, fixation dynamics, baselines."""

import math

import numpy as np
import pytest

from conftest import StaticBackend, make_embedded_trial, make_exp1_trial, make_pixel_trial
from ivsn.attention import MemoryFunction, SizeConstraint
from ivsn.features import GrayImage, RandomConvBackend
from ivsn.policies import (
    ExperimentConfig,
    Scanpath,
    SearchPolicy,
    Trial,
    feature_distance,
    is_feature_match,
    oracle_check,
    recognition_check,
    run_trial,
    sliding_window_path,
    template_matching_attention,
)
from ivsn.tensor import FeatureMap, PixelWindow


CFG1 = ExperimentConfig.for_experiment("Exp1")
CFG2 = ExperimentConfig.for_experiment("Exp2")
CFG3 = ExperimentConfig.for_experiment("Exp3")


def vectors_at_distance(d):
    """Two unit vectors whose Euclidean distance is exactly d."""
    theta = 2.0 * math.asin(d / 2.0)
    return np.array([1.0, 0.0]), np.array([math.cos(theta), math.sin(theta)])


class TestOracle:
    def test_center_hit(self):
        trial = make_exp1_trial(0)
        assert oracle_check(trial.bbox_center, trial, CFG1)

    def test_just_outside_window_misses(self):
        trial = make_exp1_trial(0)
        cx, cy = trial.bbox_center
        half = CFG1.recognition_window_px // 2
        assert oracle_check((cx + half, cy), trial, CFG1)
        assert not oracle_check((cx + half + 1, cy), trial, CFG1)

    def test_hit_rate_matches_area_ratio(self):
        trial = Trial(id="mc", experiment="Exp2", target_bbox=(540, 412, 200, 200),
                      search_dims=(1280, 1024))
        rng = np.random.default_rng(0)
        n = 20000
        hits = sum(oracle_check((rng.uniform(0, 1280), rng.uniform(0, 1024)), trial, CFG2)
                   for _ in range(n))
        expected = (201 * 201) / (1280 * 1024)
        assert abs(hits / n - expected) < 3 * math.sqrt(expected * (1 - expected) / n)


class TestRecognitionGeometry:
    def test_identical_vectors_match(self):
        a, b = vectors_at_distance(0.0)
        assert feature_distance(a, b) == 0.0
        assert is_feature_match(a, b)

    def test_orthogonal_vectors_do_not_match(self):
        a, b = vectors_at_distance(math.sqrt(2.0))
        assert abs(feature_distance(a, b) - math.sqrt(2)) < 1e-12
        assert not is_feature_match(a, b)

    def test_strictly_below_threshold_rule(self):
        a, b = vectors_at_distance(0.89)
        assert is_feature_match(a, b, threshold=0.9)
        a, b = vectors_at_distance(0.91)
        assert not is_feature_match(a, b, threshold=0.9)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        v = rng.normal(size=16)
        assert feature_distance(v, 250.0 * v) < 1e-12

    def test_recognition_check_on_identical_crop(self):
        rng = np.random.default_rng(2)
        scene = rng.uniform(size=(96, 96))
        cfg = ExperimentConfig(ior_window_px=45, recognition_window_px=45, max_fixations=6)
        crop = scene[26:71, 26:71]  # window of 45 centered at (48, 48)
        trial = Trial(id="r", experiment="Exp2", target_bbox=(26, 26, 45, 45),
                      search_dims=(96, 96),
                      target_image=GrayImage(crop.copy()),
                      search_image=GrayImage(scene))
        backend = RandomConvBackend(weight_seed=0)
        assert recognition_check((48, 48), trial, cfg, backend)


class TestChance:
    def test_object_array_is_uniform_without_replacement(self):
        policy = SearchPolicy("chance")
        counts = np.zeros(7)
        for seed in range(3000):
            trial = make_exp1_trial(target_index=seed % 6)
            path = run_trial(trial, policy, CFG1, seed=seed)
            assert path.found
            counts[path.found_at] += 1
        cum = np.cumsum(counts[1:]) / 3000
        for k in range(6):
            p = (k + 1) / 6
            assert abs(cum[k] - p) < 4 * math.sqrt(p * (1 - p) / 3000) + 1e-9

    def test_free_scene_respects_suppression(self):
        trial = Trial(id="c", experiment="Exp3", target_bbox=(0, 0, 10, 10),
                      search_dims=(300, 260))
        cfg = ExperimentConfig(ior_window_px=60, recognition_window_px=20, max_fixations=15)
        path = run_trial(trial, SearchPolicy("chance"), cfg, seed=5)
        half = 60 // 2
        for i, a in enumerate(path.fixations):
            for b in path.fixations[i + 1:]:
                assert not PixelWindow.square(a[0], a[1], 60).contains(*b)

    def test_exhaustion_reported(self):
        trial = Trial(id="x", experiment="Exp3", target_bbox=(0, 0, 4, 4),
                      search_dims=(40, 40))
        cfg = ExperimentConfig(ior_window_px=200, recognition_window_px=2, max_fixations=50)
        path = run_trial(trial, SearchPolicy("chance"), cfg, seed=1)
        if not path.found:
            assert path.reason == "exhausted"
            assert len(path.fixations) <= 2


class TestSlidingWindow:
    def test_object_array_first_position(self):
        trial = make_exp1_trial(target_index=0)
        path = sliding_window_path(trial, CFG1)
        assert path.found and path.found_at == 1

    def test_object_array_mean_over_positions(self):
        total = 0
        for idx in range(6):
            path = sliding_window_path(make_exp1_trial(target_index=idx), CFG1)
            assert path.found and path.found_at == idx + 1
            total += path.found_at
        assert total / 6 == 3.5

    def test_raster_index_on_full_scene(self):
        trial = Trial(id="sw", experiment="Exp2", target_bbox=(540, 412, 200, 200),
                      search_dims=(1280, 1024))
        cfg = ExperimentConfig(ior_window_px=200, recognition_window_px=200,
                               max_fixations=5000)
        path = sliding_window_path(trial, cfg)
        half = 100
        xs = list(range(half, 1280 - half + 1, 28))
        ys = list(range(half, 1024 - half + 1, 28))
        centers = [(x, y) for y in ys for x in xs]
        want = next(i + 1 for i, c in enumerate(centers) if oracle_check(c, trial, cfg))
        assert path.found and path.found_at == want


class TestTemplateMatching:
    def test_exact_patch_found_first(self):
        rng = np.random.default_rng(3)
        scene = np.full((300, 360), 0.5)
        patch = rng.uniform(size=(28, 28))
        scene[130:158, 200:228] = patch
        trial = Trial(id="tm", experiment="Exp3", target_bbox=(200, 130, 28, 28),
                      search_dims=(360, 300),
                      target_image=GrayImage(patch.copy()),
                      search_image=GrayImage(scene))
        path = run_trial(trial, SearchPolicy("template_matching"), CFG3)
        assert path.found and path.found_at == 1

    def test_attention_peak_at_embedding(self):
        rng = np.random.default_rng(4)
        scene = np.zeros((200, 200))
        patch = rng.uniform(0.2, 1.0, size=(28, 28))
        scene[80:108, 40:68] = patch
        trial = Trial(id="tm2", experiment="Exp3", target_bbox=(40, 80, 28, 28),
                      search_dims=(200, 200),
                      target_image=GrayImage(patch.copy()),
                      search_image=GrayImage(scene))
        amap = template_matching_attention(trial)
        y, x = np.unravel_index(np.argmax(amap.values), amap.values.shape)
        assert abs(x - 53) <= 2 and abs(y - 93) <= 2  # embedding center, +/- alignment


class TestIvsn:
    def test_matched_filter_finds_target_first(self):
        for seed in range(20):
            trial, backend = make_embedded_trial(seed=seed)
            path = run_trial(trial, SearchPolicy("ivsn"), CFG2, backend, seed=seed)
            assert path.found and path.found_at == 1, f"seed {seed}: {path}"

    def test_no_revisit_inside_suppression_window(self):
        rng = np.random.default_rng(7)
        kernel = FeatureMap(rng.uniform(size=(2, 2, 2)), 8)
        search = FeatureMap(rng.uniform(size=(2, 30, 40)), 8)
        trial = Trial(id="ior", experiment="Exp2", target_bbox=(0, 0, 10, 10),
                      search_dims=(320, 240))
        cfg = ExperimentConfig(ior_window_px=45, recognition_window_px=10, max_fixations=40)
        backend = StaticBackend(kernel, [(search, (0, 0))])
        path = run_trial(trial, SearchPolicy("ivsn"), cfg, backend, seed=0)
        assert len(path.fixations) > 5
        for i, a in enumerate(path.fixations):
            for b in path.fixations[i + 1:]:
                assert not PixelWindow.square(a[0], a[1], cfg.ior_window_px).contains(*b)

    def test_reproducible_given_seed(self):
        trial, backend = make_embedded_trial(seed=42)
        p1 = run_trial(trial, SearchPolicy("ivsn_size"), CFG2, backend, seed=9)
        p2 = run_trial(trial, SearchPolicy("ivsn_size"), CFG2, backend, seed=9)
        assert p1 == p2

    def test_object_array_never_revisits_and_exhausts_in_six(self):
        rng = np.random.default_rng(8)
        trial = make_exp1_trial(target_index=3)
        kernel = FeatureMap(rng.uniform(size=(2, 2, 2)), 16)
        search = FeatureMap(rng.uniform(size=(2, 64, 80)), 16)
        backend = StaticBackend(kernel, [(search, (0, 0))])
        path = run_trial(trial, SearchPolicy("ivsn"), CFG1, backend, seed=0)
        assert path.found  # target always present, one object per fixation
        assert len(set(path.fixations)) == len(path.fixations)
        assert path.found_at <= 6

    def test_finite_memory_revisits_dominant_object(self):
        # one object towers over the rest; with fading suppression the model
        # returns to it even though it is not the target
        trial = make_exp1_trial(target_index=5)
        values = np.zeros((1, 64, 80))
        ox, oy = trial.exp1_positions[0]
        values[0, oy // 16, ox // 16] = 100.0
        for (px, py) in trial.exp1_positions[1:]:
            values[0, py // 16, px // 16] = 0.1
        backend = StaticBackend(FeatureMap(np.ones((1, 1, 1)), 16),
                                [(FeatureMap(values, 16), (0, 0))])
        policy = SearchPolicy("ivsn_fior", memory=MemoryFunction.finite(beta=0.9, tau=2.0))
        cfg = ExperimentConfig.for_experiment("Exp1", max_fixations=6)
        path = run_trial(trial, policy, cfg, backend, seed=0)
        first = tuple(trial.exp1_positions[0])
        assert path.fixations.count(first) >= 2

    def test_layer_variant_sets_modulation(self):
        policy = SearchPolicy("ivsn_24_23")
        assert (policy.modulation.target_layer, policy.modulation.search_layer) == (24, 23)


class TestRecognitionPolicy:
    def _setup(self):
        # static map peaks exactly at the patch; the stop rule sees a crop
        # identical to the target image
        rng = np.random.default_rng(11)
        scene = rng.uniform(0.1, 0.9, size=(160, 160))
        cx, cy = 80, 80
        crop = scene[cy - 22:cy + 23, cx - 22:cx + 23].copy()
        trial = Trial(id="rec", experiment="Exp2", target_bbox=(58, 58, 45, 45),
                      search_dims=(160, 160),
                      target_image=GrayImage(crop),
                      search_image=GrayImage(scene))
        values = np.zeros((1, 20, 20))
        values[0, cy // 8, cx // 8] = 1.0

        class HybridBackend(StaticBackend):
            def __init__(self, conv, *args):
                super().__init__(*args)
                self.conv = conv

            def top_feature_vector(self, image):
                return self.conv.top_feature_vector(image)

        backend = HybridBackend(RandomConvBackend(weight_seed=3),
                                FeatureMap(np.ones((1, 1, 1)), 8),
                                [(FeatureMap(values, 8), (0, 0))])
        cfg = ExperimentConfig(ior_window_px=45, recognition_window_px=45,
                               max_fixations=5)
        return trial, backend, cfg

    def test_identical_crop_stops_search(self):
        trial, backend, cfg = self._setup()
        path = run_trial(trial, SearchPolicy("ivsn_recognition"), cfg, backend, seed=0)
        assert path.found and path.found_at == 1
        fx, fy = path.fixations[0]
        assert abs(fx - 80) <= 8 and abs(fy - 80) <= 8

    def test_rejected_fixations_continue_search(self):
        # map peaks away from the target patch: every crop differs from the
        # target, the tight threshold rejects them all, search runs on
        trial, backend, cfg = self._setup()
        off_values = np.zeros((1, 20, 20))
        off_values[0, 3, 3] = 1.0
        off_values[0, 16, 4] = 0.9
        backend._tiles = [(FeatureMap(off_values, 8), (0, 0))]
        policy = SearchPolicy("ivsn_recognition", recognition_threshold=1e-6)
        path = run_trial(trial, policy, cfg, backend, seed=0)
        assert not path.found
        assert path.reason in ("budget", "exhausted")
        assert len(path.fixations) >= 2


class TestSizeConstrainedSearch:
    def test_saccades_track_gamma_scale(self):
        sc = SizeConstraint(weight=0.2346, gamma_shape=2.0, gamma_scale_deg=3.0)
        trial = Trial(id="sz", experiment="Exp2", target_bbox=(0, 0, 8, 8),
                      search_dims=(200, 160))
        cfg = ExperimentConfig(ior_window_px=31, recognition_window_px=8,
                               max_fixations=60, pixels_per_degree=5.0)
        kernel = FeatureMap(np.ones((1, 1, 1)), 1)
        flat = FeatureMap(np.ones((1, 160, 200)), 1)
        backend = StaticBackend(kernel, [(flat, (0, 0))])
        sizes = []
        for seed in range(12):
            path = run_trial(trial, SearchPolicy("ivsn_size", size=sc), cfg, backend, seed=seed)
            f = path.fixations
            sizes += [math.hypot(f[i + 1][0] - f[i][0], f[i + 1][1] - f[i][1]) / 5.0
                      for i in range(len(f) - 1)]
        assert len(sizes) > 300
        mean = float(np.mean(sizes))
        assert 0.6 * sc.mean_deg < mean < 1.4 * sc.mean_deg

    def test_object_array_walks_to_adjacent_items(self):
        # flat features: the gamma term favors the shortest available saccade,
        # so after the first pick the model steps around the ring
        trial = make_exp1_trial(target_index=4)
        backend = StaticBackend(FeatureMap(np.ones((1, 1, 1)), 16),
                                [(FeatureMap(np.ones((1, 64, 80)), 16), (0, 0))])
        path = run_trial(trial, SearchPolicy("ivsn_size"), CFG1, backend, seed=0)
        ring = 2 * 336 * math.sin(math.pi / 6)  # adjacent spacing on the circle
        for a, b in zip(path.fixations, path.fixations[1:]):
            assert math.hypot(b[0] - a[0], b[1] - a[1]) <= ring + 2

    def test_infinite_ior_still_enforced(self):
        trial = Trial(id="szi", experiment="Exp2", target_bbox=(0, 0, 8, 8),
                      search_dims=(160, 128))
        cfg = ExperimentConfig(ior_window_px=25, recognition_window_px=8,
                               max_fixations=30, pixels_per_degree=5.0)
        backend = StaticBackend(FeatureMap(np.ones((1, 1, 1)), 1),
                                [(FeatureMap(np.ones((1, 128, 160)), 1), (0, 0))])
        path = run_trial(trial, SearchPolicy("ivsn_size"), cfg, backend, seed=3)
        for i, a in enumerate(path.fixations):
            for b in path.fixations[i + 1:]:
                assert not PixelWindow.square(a[0], a[1], cfg.ior_window_px).contains(*b)


class TestPolicyParsing:
    def test_all_kinds_parse(self):
        for kind in ("ivsn", "chance", "ranweight", "ittikoch", "ivsn_5_4"):
            assert SearchPolicy.parse(kind).kind == kind

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            SearchPolicy.parse("warp_drive")

    def test_fior_gets_finite_memory_default(self):
        assert SearchPolicy("ivsn_fior").memory.kind == "finite"
