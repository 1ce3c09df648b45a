"""Shared builders: synthetic trials and a fixed-features backend."""

import numpy as np
import pytest

from ivsn.features import GrayImage
from ivsn.policies import Trial
from ivsn.tensor import FeatureMap


class StaticBackend:
    """Backend that hands out pre-built feature maps, for controlled tests."""

    def __init__(self, target_fm: FeatureMap, search_tiles):
        self._target = target_fm
        self._tiles = search_tiles

    def target_features(self, ref, layer=31):
        return self._target

    def search_feature_tiles(self, ref, layer=30):
        return self._tiles


def exp1_positions(width=1280, height=1024, radius_px=336):
    cx, cy = width // 2, height // 2
    pos = []
    for k in range(6):
        ang = np.pi / 2 + k * np.pi / 3
        pos.append((int(round(cx + radius_px * np.cos(ang))),
                    int(round(cy + radius_px * np.sin(ang)))))
    return pos


def make_exp1_trial(target_index=0, trial_id="t0", width=1280, height=1024):
    pos = exp1_positions(width, height)
    tx, ty = pos[target_index]
    return Trial(id=trial_id, experiment="Exp1",
                 target_bbox=(tx - 78, ty - 78, 156, 156),
                 search_dims=(width, height), exp1_positions=pos)


def make_embedded_trial(seed=0, trial_id="m0", channels=4, ksize=3,
                        feat_h=12, feat_w=14, scale=16):
    """Search features are zero except an exact copy of the target kernel."""
    rng = np.random.default_rng(seed)
    kernel = FeatureMap(rng.uniform(0.2, 1.0, size=(channels, ksize, ksize)), scale)
    r0 = int(rng.integers(0, feat_h - ksize + 1))
    c0 = int(rng.integers(0, feat_w - ksize + 1))
    search = np.zeros((channels, feat_h, feat_w))
    search[:, r0:r0 + ksize, c0:c0 + ksize] = kernel.data
    off = (ksize - 1) // 2
    peak_x = (c0 + off) * scale + scale // 2
    peak_y = (r0 + off) * scale + scale // 2
    width, height = feat_w * scale, feat_h * scale
    bx = min(max(peak_x - 20, 0), width - 41)
    by = min(max(peak_y - 20, 0), height - 41)
    trial = Trial(id=trial_id, experiment="Exp2", target_bbox=(bx, by, 41, 41),
                  search_dims=(width, height))
    backend = StaticBackend(kernel, [(FeatureMap(search, scale), (0, 0))])
    return trial, backend


def write_synthetic_dataset(root, n_trials=2, width=320, height=256, seed=0):
    """Small on-disk dataset: noise scenes with a pasted patch target."""
    import json

    from PIL import Image

    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    trials = []
    for i in range(n_trials):
        patch = (rng.uniform(0.6, 1.0, size=(28, 28)) * 255).astype(np.uint8)
        scene = (rng.uniform(0.2, 0.4, size=(height, width)) * 255).astype(np.uint8)
        tx = int(rng.integers(0, width - 28))
        ty = int(rng.integers(0, height - 28))
        scene[ty:ty + 28, tx:tx + 28] = patch
        Image.fromarray(patch, mode="L").save(root / f"target_{i}.png")
        Image.fromarray(scene, mode="L").save(root / f"search_{i}.png")
        trials.append({
            "id": f"trial{i}",
            "experiment": "Exp3",
            "target_image_path": f"target_{i}.png",
            "search_image_path": f"search_{i}.png",
            "bbox": {"x": tx, "y": ty, "w": 28, "h": 28},
            "search_dims": [width, height],
        })
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps({"version": 1, "trials": trials}, indent=1))
    return manifest_path


def make_pixel_trial(seed=0, trial_id="p0", width=320, height=256, experiment="Exp3"):
    """Trial with in-memory images: a distinctive patch pasted onto noise."""
    rng = np.random.default_rng(seed)
    scene = rng.uniform(0.3, 0.5, size=(height, width))
    patch = np.zeros((28, 28))
    patch[6:22, 6:22] = 1.0
    patch[10:18, 10:18] = 0.0
    ty = int(rng.integers(0, height - 28))
    tx = int(rng.integers(0, width - 28))
    scene[ty:ty + 28, tx:tx + 28] = patch
    return Trial(id=trial_id, experiment=experiment, target_bbox=(tx, ty, 28, 28),
                 search_dims=(width, height),
                 target_image=GrayImage(patch),
                 search_image=GrayImage(scene))
