"""Regenerate the natural-image fixtures under crates/core/tests/data.

Sources are the public sample images bundled with scikit-image and
scikit-learn. Test images are 128x128 RGB crops; corpus sources are
downscaled so that the short side is 288 pixels.
"""
import os

import numpy as np
from PIL import Image
from skimage import data as skd
from sklearn.datasets import load_sample_images

ROOT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "tests", "data")


def down2(img):
    return np.asarray(
        Image.fromarray(img).resize((img.shape[1] // 2, img.shape[0] // 2), Image.BOX)
    )


def save(img, path):
    Image.fromarray(img).save(path, optimize=True)


def test_images():
    out = os.path.join(ROOT, "test")
    os.makedirs(out, exist_ok=True)
    picks = {
        "astronaut": (skd.astronaut(), 10, 50),
        "chelsea": (skd.chelsea(), 11, 90),
        "coffee": (skd.coffee(), 40, 80),
        "rocket": (skd.rocket(), 60, 100),
        "motorcycle": (skd.stereo_motorcycle()[0], 60, 120),
        "hubble": (skd.hubble_deep_field(), 200, 200),
    }
    for name, (img, r, c) in picks.items():
        small = down2(img)
        save(small[r : r + 128, c : c + 128], os.path.join(out, f"{name}.png"))


def corpus_sources():
    out = os.path.join(ROOT, "corpus_src")
    os.makedirs(out, exist_ok=True)
    srcs = {
        "china": load_sample_images().images[0],
        "flower": load_sample_images().images[1],
        "retina": skd.retina(),
        "ihc": skd.immunohistochemistry(),
        "camera": skd.camera(),
        "coins": skd.coins(),
        "moon": skd.moon(),
        "brick": skd.brick(),
        "grass": skd.grass(),
        "gravel": skd.gravel(),
        "cell": skd.cell(),
        "clock": skd.clock(),
    }
    for name, img in srcs.items():
        h, w = img.shape[:2]
        s = 288 / min(h, w)
        im = Image.fromarray(img).resize((round(w * s), round(h * s)), Image.BOX)
        save(np.asarray(im), os.path.join(out, f"{name}.png"))


if __name__ == "__main__":
    test_images()
    corpus_sources()
