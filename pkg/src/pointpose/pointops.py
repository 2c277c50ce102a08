"""Pooling kernels and peak extraction.

Center pooling adds each cell's row maximum and column maximum. Cascade
corner pooling runs two cascaded scans per cell: find the boundary maximum
along one direction, then take the maximum along the perpendicular
direction from the boundary maximum's location, and sum both cascades.

Each fast kernel has a brute-force reference (``*_reference``) kept free of
the precomputation tricks; the two must agree bitwise.
"""
from __future__ import annotations

import enum

import numpy as np

from .grid import Grid, Point


class PoolKind(enum.Enum):
    CENTER = "center"
    CASCADE_TOP_LEFT = "cascade_top_left"
    CASCADE_BOTTOM_RIGHT = "cascade_bottom_right"


def center_pool(g: Grid) -> Grid:
    """out(y,x) = max over row y + max over column x, per channel. O(H*W)."""
    data = g.data
    row_max = data.max(axis=1, keepdims=True)  # (H, 1, C)
    col_max = data.max(axis=0, keepdims=True)  # (1, W, C)
    return Grid(row_max + col_max)


def center_pool_reference(g: Grid) -> Grid:
    """Brute-force center pooling, O(H*W*(H+W)) per channel."""
    data = g.data
    h, w, c = data.shape
    out = np.empty_like(data)
    for ch in range(c):
        for y in range(h):
            for x in range(w):
                out[y, x, ch] = data[y, :, ch].max() + data[:, x, ch].max()
    return Grid(out)


def _suffix_max(plane: np.ndarray, axis: int) -> np.ndarray:
    """max over positions >= i along axis."""
    rev = plane[::-1] if axis == 0 else plane[:, ::-1]
    acc = np.maximum.accumulate(rev, axis=axis)
    return acc[::-1] if axis == 0 else acc[:, ::-1]


def _suffix_argmax_2d(plane: np.ndarray, sufmax: np.ndarray, axis: int) -> np.ndarray:
    """Index of the max over positions >= i along axis, smallest index on ties."""
    n = plane.shape[axis]
    idx_shape = (n, 1) if axis == 0 else (1, n)
    idx = np.arange(n, dtype=np.int32).reshape(idx_shape)
    # cells equal to their own suffix max are "records seen from the end";
    # the smallest record index at or after i is the tie-broken argmax
    candidate = np.where(plane == sufmax, idx, np.int32(n))
    rev = candidate[::-1] if axis == 0 else candidate[:, ::-1]
    best = np.minimum.accumulate(rev, axis=axis)
    return best[::-1] if axis == 0 else best[:, ::-1]


def cascade_corner_pool(g: Grid, kind: PoolKind) -> Grid:
    """Fast cascade corner pooling, O(H*W) per channel.

    Top-left variant, per cell (y, x):
      horizontal cascade: k* = argmax_{k>=x} g(y,k), value g(y,k*) + max_{m>=y} g(m,k*)
      vertical cascade:   m* = argmax_{m>=y} g(m,x), value g(m*,x) + max_{k>=x} g(m*,k)
      out = horizontal + vertical
    Ties break to the smallest index. The bottom-right variant mirrors the
    scans (k<=x, m<=y, ties to the largest index).
    """
    if kind not in (PoolKind.CASCADE_TOP_LEFT, PoolKind.CASCADE_BOTTOM_RIGHT):
        raise ValueError(f"cascade_corner_pool does not accept {kind}")
    data = g.data
    out = np.empty_like(data)
    for ch in range(data.shape[2]):
        plane = np.ascontiguousarray(data[:, :, ch])
        if kind == PoolKind.CASCADE_TOP_LEFT:
            out[:, :, ch] = _cascade_plane(plane)
        else:
            # mirror symmetry: bottom-right scans are top-left scans on the
            # 180-degree rotated plane
            out[:, :, ch] = _cascade_plane(plane[::-1, ::-1])[::-1, ::-1]
    return Grid(out)


def _cascade_plane(plane: np.ndarray) -> np.ndarray:
    row_suf = _suffix_max(plane, axis=1)   # max_{k>=x} g(y,k)
    col_suf = _suffix_max(plane, axis=0)   # max_{m>=y} g(m,x)
    row_arg = _suffix_argmax_2d(plane, row_suf, axis=1)  # k*(y,x)
    col_arg = _suffix_argmax_2d(plane, col_suf, axis=0)  # m*(y,x)

    # boundary max values are the suffix maxima themselves; only the internal
    # scan needs a gather
    cascade_h = row_suf + np.take_along_axis(col_suf, row_arg, axis=1)
    cascade_v = col_suf + np.take_along_axis(row_suf, col_arg, axis=0)
    return cascade_h + cascade_v


def cascade_corner_pool_reference(g: Grid, kind: PoolKind) -> Grid:
    """Brute-force double-scan cascade pooling; the oracle for the fast path."""
    if kind == PoolKind.CENTER:
        raise ValueError(f"cascade_corner_pool does not accept {kind}")
    data = g.data
    h, w, c = data.shape
    out = np.empty_like(data)
    forward = kind == PoolKind.CASCADE_TOP_LEFT
    for ch in range(c):
        plane = data[:, :, ch]
        for y in range(h):
            for x in range(w):
                if forward:
                    ks = range(x, w)
                    ms = range(y, h)
                    kstar = max(ks, key=lambda k: (plane[y, k], -k))
                    mstar = max(ms, key=lambda m: (plane[m, x], -m))
                    ch_val = plane[y, kstar] + plane[y:, kstar].max()
                    cv_val = plane[mstar, x] + plane[mstar, x:].max()
                else:
                    ks = range(0, x + 1)
                    ms = range(0, y + 1)
                    kstar = max(ks, key=lambda k: (plane[y, k], k))
                    mstar = max(ms, key=lambda m: (plane[m, x], m))
                    ch_val = plane[y, kstar] + plane[: y + 1, kstar].max()
                    cv_val = plane[mstar, x] + plane[mstar, : x + 1].max()
                out[y, x, ch] = ch_val + cv_val
    return Grid(out)


def local_peaks(g: Grid, threshold: float) -> list[Point]:
    """Cells that are >= threshold and equal the max of their 3x3 neighborhood.

    The neighborhood is edge-clamped, so every cell of a plateau qualifies.
    Deduplication of plateaus is left to callers.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0,1], got {threshold}")
    data = g.data
    padded = np.pad(data, ((1, 1), (1, 1), (0, 0)), mode="edge")
    nei = data.copy()
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            np.maximum(
                nei,
                padded[dy : dy + data.shape[0], dx : dx + data.shape[1], :],
                out=nei,
            )
    mask = (data >= threshold) & (data == nei)
    points = []
    for y, x, ch in np.argwhere(mask):
        points.append(
            Point(x=float(x), y=float(y), score=float(data[y, x, ch]), channel=int(ch))
        )
    return points


def threshold_points(g: Grid, threshold: float) -> list[Point]:
    """Every cell >= threshold, without the 3x3 local-max test."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0,1], got {threshold}")
    data = g.data
    points = []
    for y, x, ch in np.argwhere(data >= threshold):
        points.append(
            Point(x=float(x), y=float(y), score=float(data[y, x, ch]), channel=int(ch))
        )
    return points


def top_n_points(points: list[Point], n: int) -> list[Point]:
    """The n best points by score; ties break by (y, x, channel)."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    return sorted(points, key=Point.sort_key)[:n]
