"""Synthetic crater scenes and Canny edge extraction.

Scenes pair a shaded grayscale image with an exact obstacle mask (crater
interiors), giving the image pipeline ground truth that photographs cannot.
The edge channel comes from a classic Canny detector: Gaussian smoothing,
gradient magnitude, non-maximum suppression, double threshold, hysteresis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .gridworld import GenerationError, GridMap, expert_distances, UNREACHABLE

MAX_SCENE_RETRIES = 100
MIN_FREE_FRACTION = 0.20


@dataclass(frozen=True)
class TerrainScene:
    """Rendered crater field with ground-truth occupancy.

    image and edges are H x W float arrays in [0, 1]; edges is binary.
    mask carries the obstacle grid and the goal.
    """

    image: np.ndarray
    edges: np.ndarray
    mask: GridMap


def render_crater_scene(
    seed: int,
    height: int,
    width: int,
    n_craters: int,
    radius_range: tuple[float, float] = (3.0, 8.0),
) -> TerrainScene:
    """Render a random crater field with known obstacle interiors.

    Craters are disks: darkened floors, brightened rims, on a noisy mid-gray
    plain. The obstacle mask is exactly the union of disk interiors. Scenes
    whose free space drops below MIN_FREE_FRACTION, or whose goal ends up
    isolated, are resampled on derived sub-seeds.
    """
    rmin, rmax = radius_range
    if not 0 < rmin <= rmax:
        raise ValueError("radius_range must satisfy 0 < min <= max")
    if rmax >= min(height, width) / 2:
        raise ValueError("max radius must be below half the smaller image side")
    yy, xx = np.mgrid[0:height, 0:width]
    for attempt in range(MAX_SCENE_RETRIES):
        rng = np.random.default_rng([seed, attempt, 0xC8A7E8])
        image = 0.5 + 0.03 * rng.standard_normal((height, width))
        mask = np.zeros((height, width), dtype=np.uint8)
        for _ in range(n_craters):
            cy = rng.uniform(0, height)
            cx = rng.uniform(0, width)
            rad = rng.uniform(rmin, rmax)
            r2 = (yy - cy) ** 2 + (xx - cx) ** 2
            dist = np.sqrt(r2)
            inside = dist <= rad
            mask[inside] = 1
            # bowl-shaped floor darkening, raised ring just outside the rim
            image[inside] -= 0.25 * (1.0 - (dist[inside] / rad) ** 2)
            ring = (dist > rad) & (dist <= rad + 2.0)
            image[ring] += 0.2 * (1.0 - (dist[ring] - rad) / 2.0)
        image = np.clip(image, 0.0, 1.0)
        free = np.argwhere(mask == 0)
        if len(free) < max(2, int(MIN_FREE_FRACTION * height * width)):
            continue
        goal = tuple(int(v) for v in free[rng.integers(len(free))])
        gmap = GridMap(cells=mask, goal=goal)
        if (expert_distances(gmap).dist != UNREACHABLE).sum() < 2:
            continue
        edges = canny_edges(image)
        return TerrainScene(image=image.astype(np.float32), edges=edges, mask=gmap)
    raise GenerationError(
        f"no viable crater scene after {MAX_SCENE_RETRIES} attempts "
        f"(seed={seed}, n_craters={n_craters})"
    )


def _gaussian_kernel_1d(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def canny_edges(
    image: np.ndarray,
    sigma: float = 1.4,
    low: float = 0.1,
    high: float = 0.3,
) -> np.ndarray:
    """Binary Canny edge map with thresholds as fractions of the peak gradient.

    Smoothing uses a 5x5 Gaussian kernel built from sigma. Non-maximum
    suppression quantizes gradient orientation to 4 directions and keeps a
    pixel only when it beats one directional neighbour and at least ties the
    other, so an ideal step edge yields a single response column. Hysteresis
    keeps weak pixels 8-connected to strong ones.
    """
    if not 0.0 < low < high <= 1.0:
        raise ValueError("thresholds must satisfy 0 < low < high <= 1")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {img.shape}")
    k1 = _gaussian_kernel_1d(sigma, radius=2)  # 5-tap, separable 5x5
    smooth = ndimage.convolve1d(img, k1, axis=0, mode="nearest")
    smooth = ndimage.convolve1d(smooth, k1, axis=1, mode="nearest")
    gy, gx = np.gradient(smooth)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 0.0:
        return np.zeros_like(img, dtype=np.float32)

    # orientation quantized to 4 bins; rows grow southward, so a 45 degree
    # gradient (gx>0, gy>0) steps toward (r+1, c+1)
    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    bins = ((angle + 22.5) // 45).astype(np.int64) % 4
    pad = np.pad(mag, 1, mode="constant")
    h, w = mag.shape
    center = pad[1 : 1 + h, 1 : 1 + w]
    offsets = {
        0: ((0, 1), (0, -1)),
        1: ((1, 1), (-1, -1)),
        2: ((1, 0), (-1, 0)),
        3: ((1, -1), (-1, 1)),
    }
    keep = np.zeros((h, w), dtype=bool)
    for b, ((r1, c1), (r2, c2)) in offsets.items():
        n1 = pad[1 + r1 : 1 + r1 + h, 1 + c1 : 1 + c1 + w]
        n2 = pad[1 + r2 : 1 + r2 + h, 1 + c2 : 1 + c2 + w]
        # strict on the first neighbour, ties allowed on the second: a
        # two-pixel plateau keeps exactly one side
        keep |= (bins == b) & (center > n1) & (center >= n2)

    strong = keep & (mag >= high * peak)
    weak = keep & (mag >= low * peak)
    linked = ndimage.binary_propagation(strong, structure=np.ones((3, 3)), mask=weak)
    return linked.astype(np.float32)
