"""Procedural corridor maps: free interiors, occupied wall bands, unknown
exterior, plus centerline waypoints for driving episodes.

Corridors are capsule-shaped bands around polyline segments on a coarse
lattice; the lattice spacing keeps non-adjacent corridors from overlapping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBlueprint
from .grid import Cell, OccGrid, round_half_away

WIDTH_MIN = 3.5
WIDTH_MAX = 10.0


@dataclass(frozen=True)
class Segment:
    a: tuple[float, float]
    b: tuple[float, float]
    width: float


@dataclass(frozen=True)
class MapBlueprint:
    """Corridor network plus the centerline polyline an episode drives."""

    segments: tuple[Segment, ...]
    path: tuple[tuple[float, float], ...]
    extent: float
    resolution: float
    seed: int
    wall_cells: int = 3


@dataclass(frozen=True)
class MapgenConfig:
    extent: float = 48.0
    lattice: float = 12.0
    main_steps: int = 2
    branch_prob: float = 0.6
    max_branches: int = 2
    width_range: tuple[float, float] = (WIDTH_MIN, WIDTH_MAX)
    resolution: float = 0.05
    wall_cells: int = 3


def _validate(bp: MapBlueprint) -> None:
    if not bp.segments:
        raise DegenerateBlueprint("blueprint has no segments")
    wall_m = bp.wall_cells * bp.resolution
    for seg in bp.segments:
        if not WIDTH_MIN <= seg.width <= WIDTH_MAX:
            raise DegenerateBlueprint(
                f"corridor width {seg.width} outside [{WIDTH_MIN}, {WIDTH_MAX}]"
            )
        if math.hypot(seg.b[0] - seg.a[0], seg.b[1] - seg.a[1]) <= 0.0:
            raise DegenerateBlueprint(f"zero-length segment at {seg.a}")
        reach = seg.width / 2.0 + wall_m
        for p in (seg.a, seg.b):
            if (p[0] - reach < 0 or p[0] + reach > bp.extent
                    or p[1] - reach < 0 or p[1] + reach > bp.extent):
                raise DegenerateBlueprint(
                    f"corridor at {p} (width {seg.width}) does not fit the "
                    f"{bp.extent} m extent"
                )
    if len(bp.path) < 1:
        raise DegenerateBlueprint("blueprint has an empty drive path")


def generate_map(bp: MapBlueprint) -> tuple[OccGrid, list[tuple[float, float]]]:
    """Rasterize the blueprint; returns the grid and centerline waypoints."""
    _validate(bp)
    res = bp.resolution
    n = round_half_away(bp.extent / res)
    xs = (np.arange(n) + 0.5) * res
    ys = (np.arange(n) + 0.5) * res
    gx = xs[None, :]
    gy = ys[:, None]
    free = np.zeros((n, n), dtype=bool)
    band = np.zeros((n, n), dtype=bool)
    wall_m = bp.wall_cells * res
    for seg in bp.segments:
        ax, ay = seg.a
        bx, by = seg.b
        abx, aby = bx - ax, by - ay
        denom = abx * abx + aby * aby
        t = np.clip(((gx - ax) * abx + (gy - ay) * aby) / denom, 0.0, 1.0)
        d2 = (gx - (ax + t * abx)) ** 2 + (gy - (ay + t * aby)) ** 2
        free |= d2 <= (seg.width / 2.0) ** 2
        band |= d2 <= (seg.width / 2.0 + wall_m) ** 2
    cells = np.full((n, n), int(Cell.UNKNOWN), dtype=np.uint8)
    cells[band & ~free] = int(Cell.OCCUPIED)
    cells[free] = int(Cell.FREE)
    grid = OccGrid(n, n, res, (0.0, 0.0), cells)
    return grid, [tuple(p) for p in bp.path]


def random_blueprint(seed: int, config: MapgenConfig = MapgenConfig()) -> MapBlueprint:
    """Seeded corridor network: a self-avoiding lattice walk for the main
    path, with perpendicular branch stubs forming T-intersections."""
    rng = np.random.default_rng(seed)
    step = config.lattice
    margin = step / 2.0
    per_side = int((config.extent - 2 * margin) // step) + 1
    if per_side < 2:
        raise DegenerateBlueprint(
            f"extent {config.extent} too small for lattice {step}"
        )

    def node_xy(node):
        return (margin + node[0] * step, margin + node[1] * step)

    dirs = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    # Retry whole walks until one reaches the requested length; each retry
    # consumes fresh draws, so the result is still a pure function of seed.
    for _ in range(64):
        start = (int(rng.integers(per_side)), int(rng.integers(per_side)))
        chain = [start]
        visited = {start}
        for _ in range(config.main_steps):
            options = []
            for d in rng.permutation(len(dirs)):
                dx, dy = dirs[d]
                nxt = (chain[-1][0] + dx, chain[-1][1] + dy)
                if (0 <= nxt[0] < per_side and 0 <= nxt[1] < per_side
                        and nxt not in visited):
                    options.append(nxt)
            if not options:
                break
            chain.append(options[0])
            visited.add(chain[-1])
        if len(chain) == config.main_steps + 1:
            break
    else:
        raise DegenerateBlueprint("could not place a self-avoiding main path")

    widths = rng.uniform(*config.width_range, size=len(chain) - 1)
    segments = [
        Segment(node_xy(chain[k]), node_xy(chain[k + 1]), float(widths[k]))
        for k in range(len(chain) - 1)
    ]

    # Branches leave interior vertices perpendicular to the incoming leg.
    n_branches = 0
    for k in range(1, len(chain) - 1):
        if n_branches >= config.max_branches:
            break
        if rng.random() >= config.branch_prob:
            continue
        into = (chain[k][0] - chain[k - 1][0], chain[k][1] - chain[k - 1][1])
        sides = [(-into[1], into[0]), (into[1], -into[0])]
        for s in rng.permutation(2):
            dx, dy = sides[s]
            nxt = (chain[k][0] + dx, chain[k][1] + dy)
            if (0 <= nxt[0] < per_side and 0 <= nxt[1] < per_side
                    and nxt not in visited):
                visited.add(nxt)
                segments.append(Segment(
                    node_xy(chain[k]), node_xy(nxt),
                    float(rng.uniform(*config.width_range)),
                ))
                n_branches += 1
                break

    return MapBlueprint(
        segments=tuple(segments),
        path=tuple(node_xy(c) for c in chain),
        extent=config.extent,
        resolution=config.resolution,
        seed=seed,
        wall_cells=config.wall_cells,
    )


def straight_blueprint(length: float, width: float, resolution: float = 0.05,
                       wall_cells: int = 3) -> MapBlueprint:
    """Single straight corridor centered in a snug map; handy for tests."""
    reach = width / 2.0 + wall_cells * resolution
    extent = length + 2 * (reach + resolution)
    y = extent / 2.0
    a = (reach + resolution, y)
    b = (reach + resolution + length, y)
    return MapBlueprint(
        segments=(Segment(a, b, width),),
        path=(a, b),
        extent=extent,
        resolution=resolution,
        seed=0,
        wall_cells=wall_cells,
    )
