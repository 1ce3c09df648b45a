"""Build a small self-contained demo dataset (no external assets).

Two kinds of trials land in the manifest:
  * object arrays: six textured items on a circle, one of which is a
    rotated rendering of the cued target (Exp1 geometry);
  * cluttered scenes: a textured patch pasted into background noise at a
    random location (Exp3 geometry, sized to the --scene-size flag).

Usage:
  python3 scripts/make_synthetic_dataset.py --out demo_data [--n-arrays 4] [--n-scenes 4]
"""

import argparse
import json
import os
import sys

import numpy as np
from PIL import Image
from scipy import ndimage


def save_gray(path, arr):
    Image.fromarray((np.clip(arr, 0, 1) * 255).astype(np.uint8), mode="L").save(path)


def texture(rng, size, smooth):
    """Band-limited random texture; different smoothing = different 'category'."""
    t = ndimage.gaussian_filter(rng.normal(size=(size, size)), smooth)
    t = (t - t.min()) / (t.max() - t.min() + 1e-12)
    mask = np.hypot(*np.mgrid[-1:1:size * 1j, -1:1:size * 1j]) < 0.95
    return t * mask


def rotated(obj, angle_deg):
    out = ndimage.rotate(obj, angle_deg, reshape=False, order=1, mode="constant")
    return np.clip(out, 0.0, 1.0)


def make_object_array_trial(rng, idx, width=1280, height=1024, obj_px=156,
                            radius_px=336):
    target_cat = int(rng.integers(0, 6))
    smoothings = [1.5, 2.5, 4.0, 6.0, 9.0, 13.0]
    objects = [texture(rng, obj_px, smoothings[c]) for c in range(6)]
    cue = rotated(objects[target_cat], float(rng.uniform(0, 360)))
    scene = np.full((height, width), 0.5)
    positions = []
    cx, cy = width // 2, height // 2
    order = rng.permutation(6)
    target_slot = int(rng.integers(0, 6))
    half = obj_px // 2
    for slot in range(6):
        ang = np.pi / 2 + slot * np.pi / 3
        px = int(round(cx + radius_px * np.cos(ang)))
        py = int(round(cy + radius_px * np.sin(ang)))
        positions.append([px, py])
        cat = target_cat if slot == target_slot else int(order[slot])
        if slot != target_slot and cat == target_cat:
            cat = (cat + 1) % 6
        obj = rotated(objects[cat], float(rng.uniform(0, 360)))
        region = scene[py - half:py + half, px - half:px + half]
        region[:] = np.where(obj > 0, obj, region)
    tx, ty = positions[target_slot]
    return {
        "id": f"array{idx}",
        "experiment": "Exp1",
        "target_image_path": f"array{idx}_target.png",
        "search_image_path": f"array{idx}_search.png",
        "bbox": {"x": tx - half, "y": ty - half, "w": obj_px, "h": obj_px},
        "search_dims": [width, height],
        "exp1_positions": positions,
    }, cue, scene


def make_scene_trial(rng, idx, width, height, patch_px=48):
    scene = ndimage.gaussian_filter(rng.uniform(0.2, 0.7, size=(height, width)), 2.0)
    patch = texture(rng, patch_px, 1.2)
    tx = int(rng.integers(0, width - patch_px))
    ty = int(rng.integers(0, height - patch_px))
    scene[ty:ty + patch_px, tx:tx + patch_px] = patch
    cue = rotated(patch, float(rng.uniform(-30, 30)))
    return {
        "id": f"scene{idx}",
        "experiment": "Exp3",
        "target_image_path": f"scene{idx}_target.png",
        "search_image_path": f"scene{idx}_search.png",
        "bbox": {"x": tx, "y": ty, "w": patch_px, "h": patch_px},
        "search_dims": [width, height],
    }, cue, scene


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--n-arrays", type=int, default=4)
    parser.add_argument("--n-scenes", type=int, default=4)
    parser.add_argument("--scene-size", type=int, nargs=2, default=(448, 448),
                        metavar=("W", "H"))
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    os.makedirs(args.out, exist_ok=True)
    trials = []
    for i in range(args.n_arrays):
        entry, cue, scene = make_object_array_trial(rng, i)
        save_gray(os.path.join(args.out, entry["target_image_path"]), cue)
        save_gray(os.path.join(args.out, entry["search_image_path"]), scene)
        trials.append(entry)
    for i in range(args.n_scenes):
        entry, cue, scene = make_scene_trial(rng, i, *args.scene_size)
        save_gray(os.path.join(args.out, entry["target_image_path"]), cue)
        save_gray(os.path.join(args.out, entry["search_image_path"]), scene)
        trials.append(entry)
    manifest = {"version": 1, "trials": trials}
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)
    print(f"{len(trials)} trials -> {args.out}/manifest.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
