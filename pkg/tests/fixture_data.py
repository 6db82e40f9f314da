"""Small natural-image corpus shared by the distortion and acceptance tests."""

import cv2
import numpy as np
from skimage import data

from disque.pixelcore import Image

_NAMES = ("astronaut", "chelsea", "coffee", "rocket", "immunohistochemistry", "retina",
          "hubble_deep_field", "colorwheel")


def _as_rgb(a):
    a = np.asarray(a)
    if a.ndim == 2:
        a = np.repeat(a[..., None], 3, axis=2)
    return a[..., :3].astype(np.float64) / 255.0


def natural_corpus(size: int = 128) -> list[Image]:
    """Eight resized scikit-image samples plus two full-resolution crops."""
    out = []
    for name in _NAMES:
        px = _as_rgb(getattr(data, name)())
        out.append(Image(cv2.resize(px, (size, size), interpolation=cv2.INTER_AREA)))
    out.append(Image(_as_rgb(data.astronaut())[100:100 + size, 150:150 + size]))
    out.append(Image(_as_rgb(data.coffee())[150:150 + size, 200:200 + size]))
    return out
