"""Dense H x W x C float32 grids: the carrier type for every heatmap.

Conventions used throughout the package:
  * storage is row-major, channel-last, 32-bit IEEE floats
  * cell (i, j) of a grid sits at continuous coordinates (x=j+0.5, y=i+0.5)
    for resampling purposes (resize, ROI extraction)
  * Gaussian bumps are evaluated on the integer lattice, so a bump whose
    center has integral coordinates peaks at exactly 1.0

The on-disk format ("SPLG v1", little-endian) is:

    offset  size  field
    0       4     magic bytes 53 50 4C 47 ("SPLG")
    4       2     u16 version, must be 1
    6       1     u8 dtype, 0 = f32le
    7       1     u8 rank, must be 3
    8       12    three u32 dims: height, width, channels
    20      ...   height*width*channels f32 values, row-major channel-last

Round-trips are bit-exact.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPLG_MAGIC = b"SPLG"
SPLG_VERSION = 1
SPLG_DTYPE_F32 = 0
SPLG_RANK = 3
_HEADER = struct.Struct("<4sHBBIII")

# refuse to allocate grids beyond this many cells when decoding a stream
MAX_DECODE_CELLS = 1 << 31


class GridFormatError(ValueError):
    """Malformed SPLG stream."""


class BadMagicError(GridFormatError):
    """Stream does not start with the SPLG magic bytes."""


class TruncatedPayloadError(GridFormatError):
    """Declared dims do not match the number of payload bytes present."""


class DimsOverflowError(GridFormatError):
    """Declared dims are zero or their product exceeds the decode limit."""


class Grid:
    """Immutable dense scalar field of shape (height, width, channels)."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"grid data must be HxWxC, got shape {arr.shape}")
        h, w, c = arr.shape
        if h < 1 or w < 1 or c < 1:
            raise ValueError(f"grid dims must be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("grid contains non-finite values")
        arr = np.ascontiguousarray(arr).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Grid is immutable")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def zeros(cls, height: int, width: int, channels: int = 1) -> "Grid":
        return cls(np.zeros((height, width, channels), dtype=np.float32))

    def channel(self, c: int) -> np.ndarray:
        if not 0 <= c < self.channels:
            raise IndexError(f"channel {c} out of range [0, {self.channels})")
        return self.data[:, :, c]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Grid):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            (self.data.view(np.uint32) == other.data.view(np.uint32)).all()
        )

    def __hash__(self):
        raise TypeError("Grid is not hashable")

    def __repr__(self) -> str:
        return f"Grid({self.height}x{self.width}x{self.channels})"


@dataclass(frozen=True)
class Point:
    """A scored location on a grid, in cell coordinates."""

    x: float
    y: float
    score: float
    channel: int = 0

    def sort_key(self):
        # descending score, then (y, x, channel) for deterministic ties
        return (-self.score, self.y, self.x, self.channel)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with corner coordinates, x1 < x2 and y1 < y2."""

    x1: float
    y1: float
    x2: float
    y2: float
    score: float = 0.0

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(
                f"degenerate box ({self.x1},{self.y1},{self.x2},{self.y2})"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def contains(self, x: float, y: float) -> bool:
        """Boundary-inclusive containment test."""
        return self.x1 <= x <= self.x2 and self.y1 <= y <= self.y2

    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))


def render_gaussian(
    grid: Grid, channel: int, cx: float, cy: float, sigma: float
) -> Grid:
    """Max-compose a unit-peak Gaussian bump onto one channel.

    The bump is evaluated on the integer lattice:
    value(i, j) = exp(-((j-cx)^2 + (i-cy)^2) / (2 sigma^2)),
    truncated beyond ~4 sigma. Composition with the existing channel is by
    elementwise max, so repeated rendering is idempotent and values stay in
    [0, 1].
    """
    if not 0 <= channel < grid.channels:
        raise IndexError(f"channel {channel} out of range [0, {grid.channels})")
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if not (0 <= cx < grid.width and 0 <= cy < grid.height):
        raise ValueError(
            f"center ({cx},{cy}) outside {grid.height}x{grid.width} grid"
        )
    radius = int(np.ceil(4.0 * sigma))
    x0 = max(0, int(np.floor(cx)) - radius)
    x1 = min(grid.width - 1, int(np.ceil(cx)) + radius)
    y0 = max(0, int(np.floor(cy)) - radius)
    y1 = min(grid.height - 1, int(np.ceil(cy)) + radius)
    xs = np.arange(x0, x1 + 1, dtype=np.float64)
    ys = np.arange(y0, y1 + 1, dtype=np.float64)
    d2 = (xs[None, :] - cx) ** 2 + (ys[:, None] - cy) ** 2
    bump = np.exp(-d2 / (2.0 * sigma * sigma)).astype(np.float32)

    out = grid.data.copy()
    window = out[y0 : y1 + 1, x0 : x1 + 1, channel]
    out[y0 : y1 + 1, x0 : x1 + 1, channel] = np.maximum(window, bump)
    return Grid(out)


def bilinear_resize(g: Grid, out_h: int, out_w: int) -> Grid:
    """Per-channel bilinear resize with half-pixel centers and edge clamping."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output dims must be >= 1, got {out_h}x{out_w}")
    if out_h == g.height and out_w == g.width:
        return Grid(g.data)

    src = g.data.astype(np.float64)
    fy = (np.arange(out_h, dtype=np.float64) + 0.5) * (g.height / out_h) - 0.5
    fx = (np.arange(out_w, dtype=np.float64) + 0.5) * (g.width / out_w) - 0.5
    y0 = np.floor(fy).astype(np.int64)
    x0 = np.floor(fx).astype(np.int64)
    ty = fy - y0
    tx = fx - x0
    y0c = np.clip(y0, 0, g.height - 1)
    y1c = np.clip(y0 + 1, 0, g.height - 1)
    x0c = np.clip(x0, 0, g.width - 1)
    x1c = np.clip(x0 + 1, 0, g.width - 1)

    ty = ty[:, None, None]
    tx = tx[None, :, None]
    top = src[y0c][:, x0c] * (1 - tx) + src[y0c][:, x1c] * tx
    bot = src[y1c][:, x0c] * (1 - tx) + src[y1c][:, x1c] * tx
    out = top * (1 - ty) + bot * ty
    return Grid(out.astype(np.float32))


def collapse_channels(g: Grid) -> Grid:
    """Collapse a multi-channel grid to one channel by per-cell max."""
    return Grid(g.data.max(axis=2, keepdims=True))


def write_grid(g: Grid, sink) -> None:
    """Serialize a grid to a path or binary stream in SPLG v1 format."""
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as fh:
            write_grid(g, fh)
        return
    header = _HEADER.pack(
        SPLG_MAGIC, SPLG_VERSION, SPLG_DTYPE_F32, SPLG_RANK,
        g.height, g.width, g.channels,
    )
    sink.write(header)
    sink.write(np.ascontiguousarray(g.data, dtype="<f4").tobytes())


def grid_to_bytes(g: Grid) -> bytes:
    buf = io.BytesIO()
    write_grid(g, buf)
    return buf.getvalue()


def read_grid(source, exact: bool = False) -> Grid:
    """Parse a grid from a path, bytes, or binary stream.

    With ``exact`` (implied for paths and bytes) trailing bytes after the
    payload are an error; for streams the default leaves the cursor right
    after the payload so grids can be concatenated.
    """
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            return read_grid(fh, exact=True)
    if isinstance(source, (bytes, bytearray)):
        return read_grid(io.BytesIO(source), exact=True)

    header = source.read(_HEADER.size)
    if len(header) >= 4 and header[:4] != SPLG_MAGIC:
        raise BadMagicError(f"bad magic {header[:4]!r}")
    if len(header) < _HEADER.size:
        raise TruncatedPayloadError(
            f"header truncated: {len(header)} of {_HEADER.size} bytes"
        )
    magic, version, dtype, rank, h, w, c = _HEADER.unpack(header)
    if version != SPLG_VERSION:
        raise GridFormatError(f"unsupported version {version}")
    if dtype != SPLG_DTYPE_F32:
        raise GridFormatError(f"unsupported dtype code {dtype}")
    if rank != SPLG_RANK:
        raise GridFormatError(f"unsupported rank {rank}")
    if h == 0 or w == 0 or c == 0:
        raise DimsOverflowError(f"zero dimension in {h}x{w}x{c}")
    n_cells = h * w * c
    if n_cells > MAX_DECODE_CELLS:
        raise DimsOverflowError(f"dims product {n_cells} exceeds decode limit")

    payload = source.read(4 * n_cells)
    if len(payload) != 4 * n_cells:
        raise TruncatedPayloadError(
            f"payload truncated: {len(payload)} of {4 * n_cells} bytes"
        )
    if exact:
        trailing = source.read(1)
        if trailing:
            raise TruncatedPayloadError("trailing bytes after payload")
    arr = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    arr = arr.astype(np.float32)
    if not np.isfinite(arr).all():
        raise GridFormatError("payload contains non-finite values")
    return Grid(arr)
