"""Batch activation export from the 16-layer convolutional classifier.

Layer ids count rectifier and pooling stages: ids 5/10/17/24/31 are the
pooled block outputs and 4/9/16/23/30 the rectified maps feeding those
pools, so id L corresponds to torchvision `vgg16().features[L-1]`.  Target
images are resized to the network's 224 px reference input; search images
are either exported whole or partitioned into 224 px tiles (remainders
kept at natural size).  Grayscale experiment images are replicated across
the three input channels and standard per-channel input normalization is
applied.  Everything runs in eval mode with no gradients, so re-running
over the same inputs produces byte-identical files.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

log = logging.getLogger("ivsn_exporter")

TILE_SIZE = 224
SUPPORTED_LAYERS = (4, 5, 9, 10, 16, 17, 23, 24, 30, 31)
LAYER_SCALES = {4: 1, 5: 2, 9: 2, 10: 4, 16: 4, 17: 8, 23: 8, 24: 16, 30: 16, 31: 32}

LAYER_CONVENTION = {
    str(layer): (f"features[{layer - 1}] "
                 + ("pooled block output" if layer in (5, 10, 17, 24, 31)
                    else "rectified conv output")
                 + f", {LAYER_SCALES[layer]} px per cell")
    for layer in SUPPORTED_LAYERS
}

INPUT_MEAN = (0.485, 0.456, 0.406)
INPUT_SD = (0.229, 0.224, 0.225)


class WeightsUnavailable(RuntimeError):
    """Pretrained weights could not be loaded; the message says what to do."""


@dataclass
class ExportJob:
    manifest_path: str
    layers: list[int]
    output_dir: str
    tile: bool = False
    weights_path: str | None = None

    def __post_init__(self):
        bad = [l for l in self.layers if l not in SUPPORTED_LAYERS]
        if bad:
            raise ValueError(f"unsupported layers {bad}; supported: {SUPPORTED_LAYERS}")
        if not self.layers:
            raise ValueError("no layers requested")


def load_feature_stack(weights_path: str | None):
    """The classifier's convolutional trunk with weights loaded locally.

    weights_path may hold a full-model state dict or a features-only one;
    without it the torchvision pretrained checkpoint is used, which
    requires a primed download cache.
    """
    import torch
    from torchvision.models import vgg16

    if weights_path is not None:
        if not os.path.exists(weights_path):
            raise WeightsUnavailable(
                f"weights file {weights_path!r} does not exist; export needs a local "
                "state dict (full model or features-only)")
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model = vgg16(weights=None)
        if any(k.startswith("features.") for k in state):
            state = {k[len("features."):]: v for k, v in state.items()
                     if k.startswith("features.")}
        model.features.load_state_dict(state)
    else:
        try:
            from torchvision.models import VGG16_Weights
            model = vgg16(weights=VGG16_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise WeightsUnavailable(
                "could not load the pretrained checkpoint (offline?); pass "
                "--weights PATH pointing at a locally saved state dict") from exc
    features = model.features
    features.eval()
    for p in features.parameters():
        p.requires_grad_(False)
    return features


def _load_gray(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float32) / 255.0


def _resize(gray: np.ndarray, size: int) -> np.ndarray:
    from PIL import Image

    im = Image.fromarray((gray * 255.0).astype(np.uint8), mode="L")
    out = im.resize((size, size), Image.BILINEAR)
    return np.asarray(out, dtype=np.float32) / 255.0


def _to_input(gray: np.ndarray):
    import torch

    rgb = np.repeat(gray[np.newaxis, :, :], 3, axis=0)
    mean = np.asarray(INPUT_MEAN, dtype=np.float32).reshape(3, 1, 1)
    sd = np.asarray(INPUT_SD, dtype=np.float32).reshape(3, 1, 1)
    return torch.from_numpy((rgb - mean) / sd).unsqueeze(0)


def extract_layers(features, gray: np.ndarray, layers: list[int]) -> dict[int, np.ndarray]:
    """Activations (float32, chw) at the requested layer ids for one image."""
    import torch

    wanted = {l - 1 for l in layers}
    out: dict[int, np.ndarray] = {}
    with torch.no_grad():
        x = _to_input(gray)
        for idx, module in enumerate(features):
            x = module(x)
            if idx in wanted:
                out[idx + 1] = x.squeeze(0).numpy().astype(np.float32)
            if idx >= max(wanted):
                break
    return out


def _tiles(gray: np.ndarray):
    h, w = gray.shape
    for oy in range(0, h, TILE_SIZE):
        for ox in range(0, w, TILE_SIZE):
            yield gray[oy:oy + TILE_SIZE, ox:ox + TILE_SIZE], (ox, oy)


def export_features(job: ExportJob) -> int:
    """Write one IVSNT1 file per (image or tile, layer); returns the file count.

    Unreadable images are skipped and logged; the caller should exit
    nonzero when skips remain (the CLI does).  The JSON index maps image
    ids to files with pixel offsets and records the layer convention.
    """
    from .tensorfile import write_ivsnt

    with open(job.manifest_path) as fh:
        manifest = json.load(fh)
    root = os.path.dirname(os.path.abspath(job.manifest_path))
    os.makedirs(job.output_dir, exist_ok=True)

    features = load_feature_stack(job.weights_path)
    layers = sorted(set(job.layers))
    index = {"layer_convention": LAYER_CONVENTION, "images": {}}
    written = 0
    skipped: list[str] = []

    for trial in manifest.get("trials", []):
        trial_id = str(trial["id"])
        for role, key in (("target", "target_image_path"), ("search", "search_image_path")):
            rel = trial.get(key)
            if not rel:
                continue
            image_id = f"{trial_id}__{role}"
            path = os.path.join(root, rel)
            try:
                gray = _load_gray(path)
            except Exception as exc:
                log.error("skipping %s (%s): %s", image_id, path, exc)
                skipped.append(image_id)
                continue
            if role == "target":
                gray = _resize(gray, TILE_SIZE)
                pieces = [(gray, (0, 0), None)]
            elif job.tile and max(gray.shape) > TILE_SIZE:
                pieces = [(patch, off, i) for i, (patch, off) in enumerate(_tiles(gray))]
            else:
                pieces = [(gray, (0, 0), None)]

            per_layer: dict[str, list[dict]] = {str(l): [] for l in layers}
            failed = False
            for patch, (ox, oy), tile_idx in pieces:
                try:
                    acts = extract_layers(features, patch, layers)
                except Exception as exc:
                    log.error("skipping %s tile at (%d,%d) (%dx%d): %s", image_id,
                              ox, oy, patch.shape[0], patch.shape[1], exc)
                    failed = True
                    continue
                for layer in layers:
                    suffix = f"_tile{tile_idx}" if tile_idx is not None else ""
                    filename = f"{image_id}{suffix}_layer{layer}.ivsnt"
                    write_ivsnt(os.path.join(job.output_dir, filename),
                                acts[layer], Fraction(LAYER_SCALES[layer]))
                    per_layer[str(layer)].append({
                        "file": filename,
                        "offset": [ox, oy],
                        "height_px": int(patch.shape[0]),
                        "width_px": int(patch.shape[1]),
                    })
                    written += 1
            if failed and not any(per_layer.values()):
                skipped.append(image_id)
                continue
            index["images"][image_id] = {"source": rel, "role": role, "layers": per_layer}

    index["skipped"] = sorted(skipped)
    tmp = os.path.join(job.output_dir, "features_index.json.tmp")
    with open(tmp, "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
    os.replace(tmp, os.path.join(job.output_dir, "features_index.json"))
    return written
