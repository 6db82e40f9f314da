"""Procedurally generated colourful images for desk-scale experiments."""

from __future__ import annotations

import cv2
import numpy as np

from .pixelcore import Image, write_png


def colorful_image(seed, size: int = 128) -> Image:
    """A two-colour gradient with random soft-edged shapes and a low-frequency texture."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    angle = rng.uniform(0, 2 * np.pi)
    t = (np.cos(angle) * xx + np.sin(angle) * yy)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    c0, c1 = rng.uniform(0.15, 0.85, size=(2, 3))
    img = (1 - t)[..., None] * c0 + t[..., None] * c1
    for _ in range(int(rng.integers(3, 8))):
        color = tuple(float(v) for v in rng.uniform(0.1, 0.9, size=3))
        center = tuple(int(v) for v in rng.integers(0, size, size=2))
        if rng.uniform() < 0.5:
            axes = tuple(int(v) for v in rng.integers(size // 10, size // 3, size=2))
            cv2.ellipse(img, center, axes, float(rng.uniform(0, 180)), 0, 360, color, -1,
                        lineType=cv2.LINE_AA)
        else:
            half = rng.integers(size // 10, size // 4, size=2)
            p0 = (int(center[0] - half[0]), int(center[1] - half[1]))
            p1 = (int(center[0] + half[0]), int(center[1] + half[1]))
            cv2.rectangle(img, p0, p1, color, -1, lineType=cv2.LINE_AA)
    freq = rng.uniform(1, 5, size=2)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    texture = np.sin(2 * np.pi * freq[0] * xx + phase[0]) * np.sin(2 * np.pi * freq[1] * yy + phase[1])
    img = img + rng.uniform(0.02, 0.08) * texture[..., None]
    img = cv2.GaussianBlur(img, (0, 0), rng.uniform(1.0, 2.0))
    return Image(np.clip(img, 0, 1))


def colorful_corpus(n: int, seed: int = 0, size: int = 128) -> list[Image]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [colorful_image(c, size) for c in children]


def write_corpus(directory, n: int, seed: int = 0, size: int = 128) -> list:
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(colorful_corpus(n, seed, size)):
        p = directory / f"synth_{i:04d}.png"
        write_png(img, p)
        paths.append(p)
    return paths
