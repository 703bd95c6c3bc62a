"""Ternary occupancy grids: coordinate transforms, crops, resizing, image codec.

A grid cell is exactly one of free / occupied / unknown. Grids carry a metric
resolution (meters per cell) and the world coordinates of the corner of cell
(0, 0). All operations here are pure; grids are immutable values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import IoError, LengthMismatch, OutOfBounds

# Canonical pixel values: white = free, black = occupied, gray = unknown.
PIXEL_FREE = 255
PIXEL_OCCUPIED = 0
PIXEL_UNKNOWN = 127

# Banded decode thresholds: tolerate lossy intermediaries and network outputs.
BAND_OCCUPIED_BELOW = 64
BAND_FREE_FROM = 192


class Cell(IntEnum):
    FREE = 0
    OCCUPIED = 1
    UNKNOWN = 2


_CELL_TO_PIXEL = np.array([PIXEL_FREE, PIXEL_OCCUPIED, PIXEL_UNKNOWN], dtype=np.uint8)


def round_half_away(x: float) -> int:
    """Round with halves away from zero (so 1.10x of 100 cells is 110, always)."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return math.pi - (math.pi - theta) % (2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class OccGrid:
    """Row-major ternary grid; ``cells[j, i]`` is column i (x), row j (y)."""

    width: int
    height: int
    resolution: float
    origin: tuple[float, float]
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid dimensions must be >= 1, got {self.width}x{self.height}")
        if self.resolution <= 0:
            raise ValueError(f"resolution must be > 0, got {self.resolution}")
        if self.cells.shape != (self.height, self.width):
            raise ValueError(
                f"cells shape {self.cells.shape} != (height, width) = "
                f"({self.height}, {self.width})"
            )
        if self.cells.dtype != np.uint8:
            object.__setattr__(self, "cells", self.cells.astype(np.uint8))
        self.cells.flags.writeable = False

    @classmethod
    def full(cls, width: int, height: int, resolution: float,
             origin: tuple[float, float] = (0.0, 0.0),
             fill: Cell = Cell.UNKNOWN) -> "OccGrid":
        cells = np.full((height, width), int(fill), dtype=np.uint8)
        return cls(width, height, resolution, origin, cells)

    def __eq__(self, other) -> bool:
        if not isinstance(other, OccGrid):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.resolution == other.resolution
            and self.origin == other.origin
            and np.array_equal(self.cells, other.cells)
        )

    __hash__ = None

    def get(self, i: int, j: int) -> Cell:
        return Cell(self.cells[j, i])

    def with_cells(self, cells: np.ndarray) -> "OccGrid":
        return OccGrid(self.width, self.height, self.resolution, self.origin, cells)

    def contains_point(self, p: tuple[float, float]) -> bool:
        i = math.floor((p[0] - self.origin[0]) / self.resolution)
        j = math.floor((p[1] - self.origin[1]) / self.resolution)
        return 0 <= i < self.width and 0 <= j < self.height


def world_to_cell(grid: OccGrid, p: tuple[float, float]) -> tuple[int, int]:
    """Map a world point to its (i, j) cell index; raises OutOfBounds outside."""
    i = math.floor((p[0] - grid.origin[0]) / grid.resolution)
    j = math.floor((p[1] - grid.origin[1]) / grid.resolution)
    if not 0 <= i < grid.width:
        raise OutOfBounds(f"x = {p[0]} maps to column {i}, outside [0, {grid.width})")
    if not 0 <= j < grid.height:
        raise OutOfBounds(f"y = {p[1]} maps to row {j}, outside [0, {grid.height})")
    return i, j


def cell_to_world(grid: OccGrid, i: int, j: int) -> tuple[float, float]:
    """World coordinates of the center of cell (i, j)."""
    return (
        grid.origin[0] + (i + 0.5) * grid.resolution,
        grid.origin[1] + (j + 0.5) * grid.resolution,
    )


@dataclass(frozen=True)
class CropWindow:
    """Axis-aligned square window: ``side`` meters centered on ``center``."""

    center: tuple[float, float]
    side: float
    expansion: float = 1.0

    def __post_init__(self):
        if self.side <= 0:
            raise ValueError(f"window side must be > 0, got {self.side}")
        if not 1.0 <= self.expansion <= 2.0:
            raise ValueError(f"expansion must be in [1.0, 2.0], got {self.expansion}")

    @classmethod
    def expanded(cls, center: tuple[float, float], base_side: float,
                 expansion: float) -> "CropWindow":
        return cls(center=center, side=base_side * expansion, expansion=expansion)

    def cells_per_side(self, resolution: float) -> int:
        return round_half_away(self.side / resolution)


def crop_centered(grid: OccGrid, window: CropWindow) -> OccGrid:
    """Square crop around ``window.center``; cells outside the source are Unknown.

    Each crop cell takes the value of the source cell containing its center
    point, so interior crops reproduce source cells exactly.
    """
    res = grid.resolution
    n = window.cells_per_side(res)
    half = n * res / 2.0
    ox = window.center[0] - half
    oy = window.center[1] - half
    xs = ox + (np.arange(n) + 0.5) * res
    ys = oy + (np.arange(n) + 0.5) * res
    ci = np.floor((xs - grid.origin[0]) / res).astype(np.int64)
    cj = np.floor((ys - grid.origin[1]) / res).astype(np.int64)
    ok_i = (ci >= 0) & (ci < grid.width)
    ok_j = (cj >= 0) & (cj < grid.height)
    out = np.full((n, n), int(Cell.UNKNOWN), dtype=np.uint8)
    src = grid.cells[np.ix_(np.clip(cj, 0, grid.height - 1),
                            np.clip(ci, 0, grid.width - 1))]
    mask = np.outer(ok_j, ok_i)
    out[mask] = src[mask]
    return OccGrid(n, n, res, (ox, oy), out)


def resize_nearest(grid: OccGrid, target_cells: int) -> OccGrid:
    """Nearest-neighbor resample to target_cells per side; alphabet preserved."""
    if target_cells < 1:
        raise ValueError(f"target_cells must be >= 1, got {target_cells}")
    t = target_cells
    # Integer index map: src = floor((dst + 0.5) * n / t), exact in integers.
    si = ((2 * np.arange(t, dtype=np.int64) + 1) * grid.width) // (2 * t)
    sj = ((2 * np.arange(t, dtype=np.int64) + 1) * grid.height) // (2 * t)
    cells = grid.cells[np.ix_(sj, si)]
    return OccGrid(t, t, grid.resolution * grid.width / t, grid.origin,
                   np.ascontiguousarray(cells))


def encode_image(grid: OccGrid) -> bytes:
    """Row-major 8-bit pixels: free 255, occupied 0, unknown 127."""
    return _CELL_TO_PIXEL[grid.cells].tobytes()


def pixels_to_cells(pixels: np.ndarray) -> np.ndarray:
    """Banded ternarization of 8-bit pixel values."""
    cells = np.full(pixels.shape, int(Cell.UNKNOWN), dtype=np.uint8)
    cells[pixels < BAND_OCCUPIED_BELOW] = int(Cell.OCCUPIED)
    cells[pixels >= BAND_FREE_FROM] = int(Cell.FREE)
    return cells


def decode_image(data: bytes, width: int, height: int, resolution: float = 1.0,
                 origin: tuple[float, float] = (0.0, 0.0)) -> OccGrid:
    """Inverse of encode_image with banded thresholds (< 64 occupied, >= 192 free)."""
    if len(data) != width * height:
        raise LengthMismatch(
            f"{len(data)} bytes cannot fill a {width}x{height} grid"
        )
    pixels = np.frombuffer(data, dtype=np.uint8).reshape(height, width)
    return OccGrid(width, height, resolution, origin, pixels_to_cells(pixels))


# --- PGM (P5) + sidecar metadata -------------------------------------------


def meta_path(path: Path) -> Path:
    return Path(path).with_suffix(".meta")


def write_pgm(grid: OccGrid, path: Path) -> None:
    """Binary PGM (P5, maxval 255) plus a key=value sidecar with the geometry."""
    path = Path(path)
    header = f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii")
    path.write_bytes(header + encode_image(grid))
    meta = (
        f"resolution={grid.resolution!r}\n"
        f"origin_x={grid.origin[0]!r}\n"
        f"origin_y={grid.origin[1]!r}\n"
    )
    meta_path(path).write_text(meta, encoding="ascii")


def _read_pgm_tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    # PGM header tokens are whitespace separated; '#' starts a comment line.
    tokens = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(raw):
            raise IoError("truncated PGM header")
        c = raw[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            nl = raw.find(b"\n", pos)
            pos = len(raw) if nl < 0 else nl + 1
        else:
            end = pos
            while end < len(raw) and not raw[end:end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    return tokens, pos + 1  # single whitespace separates header from raster


def read_pgm(path: Path, require_meta: bool = True) -> OccGrid:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    tokens, start = _read_pgm_tokens(raw, 4)
    if tokens[0] != b"P5":
        raise IoError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise IoError(f"{path}: unsupported maxval {maxval}")
    data = raw[start:start + width * height]
    resolution, origin = 1.0, (0.0, 0.0)
    mp = meta_path(path)
    if mp.exists():
        kv = {}
        for line in mp.read_text(encoding="ascii").splitlines():
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
        try:
            resolution = float(kv["resolution"])
            origin = (float(kv["origin_x"]), float(kv["origin_y"]))
        except (KeyError, ValueError) as e:
            raise IoError(f"{mp}: bad metadata: {e}") from e
    elif require_meta:
        raise IoError(f"missing sidecar metadata {mp}")
    return decode_image(data, width, height, resolution, origin)
