"""Synthetic sharp scenes on the render grid (grey levels 0..255)."""
from __future__ import annotations

import numpy as np
from scipy import ndimage as ndi

DARK, BRIGHT = 20.0, 235.0


def checkerboard(size: int = 192, square: int = 12) -> np.ndarray:
    y, x = np.mgrid[:size, :size]
    return np.where((x // square + y // square) % 2, BRIGHT, DARK)


def random_blocks(size: int = 192, block: int = 6, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = -(-size // block)
    cells = rng.random((n, n))
    return (DARK + (BRIGHT - DARK) * np.kron(cells, np.ones((block, block))))[:size, :size]


def siemens_star(size: int = 192, spokes: int = 16) -> np.ndarray:
    y, x = np.mgrid[:size, :size] - (size - 1) / 2.0
    return np.where(np.sin(spokes * np.arctan2(y, x)) > 0, BRIGHT, DARK)


def bright_dots(size: int = 192, count: int = 40, seed: int = 0, background: float = 30.0,
                radius: tuple = (2, 7)) -> np.ndarray:
    """Sparse bright discs on a dark background (a star-field-like target)."""
    rng = np.random.default_rng(seed)
    img = np.full((size, size), background)
    y, x = np.mgrid[:size, :size]
    for _ in range(count):
        cx, cy = rng.integers(0, size, 2)
        r = rng.integers(radius[0], radius[1] + 1)
        img[(x - cx) ** 2 + (y - cy) ** 2 < r * r] = 220.0
    return img


def noise_texture(size: int = 192, blur: float = 1.0, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    a = ndi.gaussian_filter(rng.random((size, size)), blur)
    a = (a - a.min()) / (a.max() - a.min())
    return DARK + (BRIGHT - DARK) * a


def bars(size: int = 192, period: int = 16, angle_deg: float = 30.0) -> np.ndarray:
    y, x = np.mgrid[:size, :size]
    th = np.deg2rad(angle_deg)
    u = x * np.cos(th) + y * np.sin(th)
    return np.where((u // (period / 2)) % 2, BRIGHT, DARK)


def constant(size: int = 192, value: float = 128.0) -> np.ndarray:
    return np.full((size, size), float(value))


SCENES = {
    "checker": lambda size=192, seed=0: checkerboard(size),
    "blocks": lambda size=192, seed=0: random_blocks(size, seed=seed),
    "star": lambda size=192, seed=0: siemens_star(size),
    "dots": lambda size=192, seed=0: bright_dots(size, seed=seed),
    "texture": lambda size=192, seed=0: noise_texture(size, seed=seed),
    "bars": lambda size=192, seed=0: bars(size),
}


def make_scene(name: str, size: int = 192, seed: int = 0) -> np.ndarray:
    return SCENES[name](size=size, seed=seed)
