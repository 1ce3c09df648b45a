"""Fixtures: a seeded local checkpoint and a tiny manifest with images."""

import json

import numpy as np
import pytest


@pytest.fixture(scope="session")
def weights_path(tmp_path_factory):
    """Features-only state dict with seeded random init (no network needed)."""
    import torch
    from torchvision.models import vgg16

    torch.manual_seed(1234)
    model = vgg16(weights=None)
    path = tmp_path_factory.mktemp("weights") / "features.pt"
    torch.save(model.features.state_dict(), path)
    return str(path)


def save_gray(path, arr):
    from PIL import Image

    Image.fromarray((np.clip(arr, 0, 1) * 255).astype(np.uint8), mode="L").save(path)


@pytest.fixture
def dataset(tmp_path):
    rng = np.random.default_rng(0)
    save_gray(tmp_path / "target.png", rng.uniform(size=(224, 224)))
    save_gray(tmp_path / "search.png", rng.uniform(size=(224, 448)))
    manifest = {"version": 1, "trials": [{
        "id": "t0",
        "experiment": "Exp2",
        "target_image_path": "target.png",
        "search_image_path": "search.png",
        "bbox": {"x": 10, "y": 10, "w": 40, "h": 40},
        "search_dims": [448, 224],
    }]}
    mpath = tmp_path / "manifest.json"
    mpath.write_text(json.dumps(manifest))
    return mpath
