"""Corner graphs of subdivision schedules.

The level pair (n, m) names the graph obtained by subdividing the unit
square with the rules of levels m+1..n and wiring, for every cell, the
4-cycle on its corner points.  Corners shared between cells are identified
by their exact grid coordinates; a side shared by two cells contributes its
edge twice, and the parallel copies are merged into one conductance-2 edge.

Vertices sit on the integer grid {0..3^(n-m)}^2 (coordinate p/3^(n-m) - 1/2).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .hierarchy import CHILD_OFFSET, Schedule
from .resnet import LevelGraph

__all__ = ["CornerGraph", "corner_graph", "corner_vertices_at_level"]

VERTEX_CAP = 4_000_000
DEPTH_CAP = 7


@dataclass
class CornerGraph:
    """Levels (n, m), the identified corner vertices, and the cell incidence."""

    n: int
    m: int
    graph: LevelGraph
    grid: np.ndarray        # (n_vertices, 2) int64 grid coordinates
    cell_corners: np.ndarray  # (n_cells, 4) vertex ids, ccw from lower-left
    cells_ix: np.ndarray
    cells_iy: np.ndarray
    _index: Optional[Dict[Tuple[int, int], int]] = None

    @property
    def span(self) -> int:
        return 3 ** (self.n - self.m)

    def vertex_index(self) -> Dict[Tuple[int, int], int]:
        if self._index is None:
            self._index = {(int(x), int(y)): i for i, (x, y) in enumerate(self.grid)}
        return self._index

    def vertex_at(self, gx: int, gy: int) -> int:
        idx = self.vertex_index().get((int(gx), int(gy)))
        if idx is None:
            raise KeyError(f"no corner vertex at grid ({gx}, {gy})")
        return idx

    def corner_vertices(self) -> Tuple[int, int, int, int]:
        """p1, p3, p5, p7 (the four corners of the unit square)."""
        s = self.span
        return (self.vertex_at(s, s), self.vertex_at(0, s),
                self.vertex_at(0, 0), self.vertex_at(s, 0))

    def side_vertices(self, side: str) -> List[int]:
        s = self.span
        if side == "top":
            sel = self.grid[:, 1] == s
        elif side == "bottom":
            sel = self.grid[:, 1] == 0
        elif side == "left":
            sel = self.grid[:, 0] == 0
        elif side == "right":
            sel = self.grid[:, 0] == s
        else:
            raise ValueError(f"unknown side {side!r}")
        return [int(v) for v in np.where(sel)[0]]

    def coords_float(self) -> np.ndarray:
        return self.grid / self.span - 0.5


def corner_graph(schedule: Schedule, n: int, m: int = 0,
                 vertex_cap: int = VERTEX_CAP) -> CornerGraph:
    """Build the (n, m) corner graph of `schedule`.

    Refuses above the depth cap; the pair (n, n) is the plain 4-cycle.
    """
    if not 0 <= m <= n:
        raise ValueError("need 0 <= m <= n")
    if n - m > DEPTH_CAP:
        raise ValueError(f"corner graph depth {n - m} above the cap {DEPTH_CAP}")

    # Cells of the relative hierarchy driven by levels m+1..n.
    depth = n - m
    cells = [(0, 0)]
    for lvl in range(1, depth + 1):
        rule = schedule.rule_at(m + lvl)
        offs = [CHILD_OFFSET[d] for d in rule.digits]
        cells = [(3 * ix + dx, 3 * iy + dy) for ix, iy in cells for dx, dy in offs]
    cells_ix = np.array([c[0] for c in cells], dtype=np.int64)
    cells_iy = np.array([c[1] for c in cells], dtype=np.int64)

    if 4 * len(cells) > vertex_cap:
        raise ValueError(f"about {4 * len(cells)} corner vertices, above the cap {vertex_cap}")

    vid: Dict[Tuple[int, int], int] = {}
    grid: List[Tuple[int, int]] = []

    def vertex(gx: int, gy: int) -> int:
        key = (gx, gy)
        i = vid.get(key)
        if i is None:
            i = len(grid)
            vid[key] = i
            grid.append(key)
        return i

    edge_mult: Dict[Tuple[int, int], int] = {}
    cell_corners = np.empty((len(cells), 4), dtype=np.int64)
    for ci, (ix, iy) in enumerate(cells):
        c5 = vertex(ix, iy)
        c7 = vertex(ix + 1, iy)
        c1 = vertex(ix + 1, iy + 1)
        c3 = vertex(ix, iy + 1)
        cell_corners[ci] = (c5, c7, c1, c3)
        for a, b in ((c5, c7), (c7, c1), (c1, c3), (c3, c5)):
            key = (a, b) if a < b else (b, a)
            edge_mult[key] = edge_mult.get(key, 0) + 1

    edges = [(u, v, float(mult)) for (u, v), mult in edge_mult.items()]
    grid_arr = np.array(grid, dtype=np.int64)
    span = 3 ** depth
    coords = grid_arr / span - 0.5
    g = LevelGraph(len(grid), edges, coords=coords)
    return CornerGraph(n, m, g, grid_arr, cell_corners, cells_ix, cells_iy)


def corner_vertices_at_level(cg: CornerGraph, level: int) -> List[int]:
    """Vertex ids of the coarser level-`level` corner set inside cg (m = 0).

    Valid because both rules keep all four corner children, so coarse corner
    points persist at every finer level.
    """
    if cg.m != 0:
        raise ValueError("level embedding assumes m = 0")
    if not 0 <= level <= cg.n:
        raise ValueError("level out of range")
    f = 3 ** (cg.n - level)
    idx = cg.vertex_index()
    out = []
    missing = []
    for gx in range(0, 3 ** level + 1):
        for gy in range(0, 3 ** level + 1):
            v = idx.get((gx * f, gy * f))
            if v is not None:
                out.append(v)
            else:
                missing.append((gx, gy))
    # grid positions inside holes simply do not exist; that is expected
    return out
