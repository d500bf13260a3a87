"""Partition hierarchies for square-based subdivision schedules.

Cells live on the exact 3-adic grid of the unit square Q = [-1/2, 1/2]^2:
a level-n cell is an integer box (ix, iy) with 0 <= ix, iy < 3**n standing
for [-1/2 + ix*3^-n, -1/2 + (ix+1)*3^-n] x [-1/2 + iy*3^-n, -1/2 + (iy+1)*3^-n].
All intersection and containment tests are integer or Fraction arithmetic,
so adjacency and point location carry no tolerances.

Two subdivision rules are supported per level: the eight-cell carpet rule
(child digits 1..8, the center ninth removed) and the five-cell plus-sign
rule (digits 0,1,3,5,7).  A Schedule assigns one rule to each level; the
mixed schedule switches rule by the predicate k^2(k-1) < n <= k^3.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "SC_DIGITS",
    "VICSEK_DIGITS",
    "CHILD_OFFSET",
    "SubdivisionRule",
    "RULE_SC",
    "RULE_VICSEK",
    "Schedule",
    "Address",
    "AdjacencyGraph",
    "FrameworkParams",
    "PartitionHierarchy",
    "build_hierarchy",
    "adjacency",
    "delta_level",
    "validate_framework",
    "nstar_estimate",
]

# Digit -> offset of the child box inside the 3x3 refinement of its parent.
# Digits follow the boundary-point numbering: 1 top-right corner, then
# counterclockwise; 0 is the center.
CHILD_OFFSET: Dict[int, Tuple[int, int]] = {
    0: (1, 1),
    1: (2, 2),
    2: (1, 2),
    3: (0, 2),
    4: (0, 1),
    5: (0, 0),
    6: (1, 0),
    7: (2, 0),
    8: (2, 1),
}

SC_DIGITS: Tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
VICSEK_DIGITS: Tuple[int, ...] = (0, 1, 3, 5, 7)

# Fixed points p_j of the similitudes, as exact fractions of the unit square.
FIXED_POINTS: Dict[int, Tuple[Fraction, Fraction]] = {
    0: (Fraction(0), Fraction(0)),
    1: (Fraction(1, 2), Fraction(1, 2)),
    2: (Fraction(0), Fraction(1, 2)),
    3: (Fraction(-1, 2), Fraction(1, 2)),
    4: (Fraction(-1, 2), Fraction(0)),
    5: (Fraction(-1, 2), Fraction(-1, 2)),
    6: (Fraction(0), Fraction(-1, 2)),
    7: (Fraction(1, 2), Fraction(-1, 2)),
    8: (Fraction(1, 2), Fraction(0)),
}


@dataclass(frozen=True)
class SubdivisionRule:
    """One level's subdivision: a named set of child digits, ratio 1/3."""

    name: str
    digits: Tuple[int, ...]

    @property
    def branching(self) -> int:
        return len(self.digits)

    def similitude(self, digit: int):
        """Return the exact map z -> p_d + (z - p_d)/3 on Fraction pairs."""
        if digit not in self.digits:
            raise ValueError(f"digit {digit} not in rule {self.name}")
        px, py = FIXED_POINTS[digit]

        def phi(z: Tuple[Fraction, Fraction]) -> Tuple[Fraction, Fraction]:
            return (px + (z[0] - px) / 3, py + (z[1] - py) / 3)

        return phi


RULE_SC = SubdivisionRule("SC", SC_DIGITS)
RULE_VICSEK = SubdivisionRule("Vicsek", VICSEK_DIGITS)

_RULES = {"SC": RULE_SC, "sc": RULE_SC, "Vicsek": RULE_VICSEK, "vicsek": RULE_VICSEK, "VS": RULE_VICSEK}


def mixed_indicator(n: int) -> int:
    """1 iff k^2(k-1) < n <= k^3 for some positive integer k."""
    if n < 1:
        raise ValueError("schedule index must be >= 1")
    k = 1
    while k * k * k < n:
        k += 1
    return 1 if k * k * (k - 1) < n <= k ** 3 else 0


class Schedule:
    """level -> subdivision rule; levels are 1-based.

    The indicator F(n) selects the rule: F(n) = 1 means the carpet rule,
    F(n) = 0 the plus-sign rule.  Formula-backed schedules extend to any
    level; table-backed ones carry a finite horizon.
    """

    def __init__(self, indicator: Callable[[int], int], name: str, horizon: Optional[int] = None):
        self._indicator = indicator
        self.name = name
        self.horizon = horizon  # None = unbounded

    @classmethod
    def pure_sc(cls) -> "Schedule":
        return cls(lambda n: 1, "sc")

    @classmethod
    def pure_vicsek(cls) -> "Schedule":
        return cls(lambda n: 0, "vicsek")

    @classmethod
    def mixed(cls) -> "Schedule":
        return cls(mixed_indicator, "mixed")

    @classmethod
    def from_table(cls, bits: Sequence[int], name: str = "custom") -> "Schedule":
        bits = tuple(int(b) for b in bits)
        if any(b not in (0, 1) for b in bits):
            raise ValueError("schedule table entries must be 0 or 1")

        def indicator(n: int) -> int:
            if not 1 <= n <= len(bits):
                raise ValueError(f"custom schedule defined only for 1..{len(bits)}")
            return bits[n - 1]

        return cls(indicator, name, horizon=len(bits))

    @classmethod
    def by_name(cls, name: str) -> "Schedule":
        key = name.lower()
        if key == "sc":
            return cls.pure_sc()
        if key in ("vicsek", "vs"):
            return cls.pure_vicsek()
        if key == "mixed":
            return cls.mixed()
        raise ValueError(f"unknown structure {name!r} (expected sc, vicsek or mixed)")

    def F(self, n: int) -> int:
        if n < 1:
            raise ValueError("schedule index must be >= 1")
        if self.horizon is not None and n > self.horizon:
            raise ValueError(f"schedule {self.name} defined only up to level {self.horizon}")
        val = int(self._indicator(n))
        if val not in (0, 1):
            raise ValueError(f"indicator returned {val}, expected 0/1")
        return val

    def rule_at(self, n: int) -> SubdivisionRule:
        return RULE_SC if self.F(n) == 1 else RULE_VICSEK

    def branching(self, n: int) -> int:
        return self.rule_at(n).branching


Address = Tuple[int, ...]


@dataclass
class _Level:
    """Cells of one level, in lexicographic address order."""

    n: int
    ix: np.ndarray          # int64, grid x of the box
    iy: np.ndarray          # int64
    parent: np.ndarray      # index into previous level (-1 at level 0)
    digit: np.ndarray       # child digit (-1 at level 0)
    index: Dict[Tuple[int, int], int] = field(repr=False, default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.ix)


@dataclass
class AdjacencyGraph:
    """Same-level cell adjacency: edge iff closed cells intersect."""

    level: int
    count: int
    edges: np.ndarray  # (m, 2) int64, i < j
    _nbrs: Optional[List[List[int]]] = field(default=None, repr=False)

    @property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.count, dtype=np.int64)
        if len(self.edges):
            np.add.at(deg, self.edges[:, 0], 1)
            np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def neighbor_lists(self) -> List[List[int]]:
        if self._nbrs is None:
            out: List[List[int]] = [[] for _ in range(self.count)]
            for i, j in self.edges:
                out[int(i)].append(int(j))
                out[int(j)].append(int(i))
            self._nbrs = out
        return self._nbrs


@dataclass
class FrameworkParams:
    zeta: Fraction
    xi: Fraction
    m_star: int
    l_star: int
    n_star: float
    diam_ratio: float
    b3_band: Tuple[float, float]
    b3_band_ratio: float
    b3_samples: int
    violations: List[str] = field(default_factory=list)


class PartitionHierarchy:
    """Materialized cells of a schedule down to a fixed depth.

    Immutable after construction; every query is a pure read.
    """

    DEFAULT_CELL_CAP = 5_000_000

    def __init__(self, schedule: Schedule, depth: int, cell_cap: int = DEFAULT_CELL_CAP):
        if depth < 0:
            raise ValueError("depth must be >= 0")
        if schedule.horizon is not None and depth > schedule.horizon:
            raise ValueError("depth exceeds schedule horizon")
        self.schedule = schedule
        self.depth = depth
        self.levels: List[_Level] = []
        self._adjacency_cache: Dict[int, AdjacencyGraph] = {}
        self._marker_rel_cache: Dict[int, Fraction] = {}

        total = 1
        lvl = _Level(0, np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64),
                     np.full(1, -1, dtype=np.int64), np.full(1, -1, dtype=np.int64))
        lvl.index[(0, 0)] = 0
        self.levels.append(lvl)
        for n in range(1, depth + 1):
            rule = schedule.rule_at(n)
            prev = self.levels[-1]
            total *= rule.branching
            if total > cell_cap:
                raise ValueError(
                    f"level {n} would hold {total} cells, above the cap {cell_cap}"
                )
            b = rule.branching
            m = prev.count * b
            ix = np.empty(m, dtype=np.int64)
            iy = np.empty(m, dtype=np.int64)
            parent = np.repeat(np.arange(prev.count, dtype=np.int64), b)
            digit = np.tile(np.array(rule.digits, dtype=np.int64), prev.count)
            offs = np.array([CHILD_OFFSET[d] for d in rule.digits], dtype=np.int64)
            ix = (3 * prev.ix[:, None] + offs[None, :, 0]).reshape(-1)
            iy = (3 * prev.iy[:, None] + offs[None, :, 1]).reshape(-1)
            lvl = _Level(n, ix, iy, parent, digit)
            lvl.index = {(int(a), int(b_)): i for i, (a, b_) in enumerate(zip(ix, iy))}
            self.levels.append(lvl)

    # -- addresses ---------------------------------------------------------

    def address(self, n: int, i: int) -> Address:
        """Digit word of cell i at level n (empty word at the root)."""
        digits: List[int] = []
        for m in range(n, 0, -1):
            digits.append(int(self.levels[m].digit[i]))
            i = int(self.levels[m].parent[i])
        return tuple(reversed(digits))

    def index_of(self, word: Address) -> int:
        i = 0
        for n, d in enumerate(word, start=1):
            if n > self.depth:
                raise ValueError("address deeper than built depth")
            lvl = self.levels[n]
            pix, piy = int(self.levels[n - 1].ix[i]), int(self.levels[n - 1].iy[i])
            dx, dy = CHILD_OFFSET[d]
            key = (3 * pix + dx, 3 * piy + dy)
            if key not in lvl.index:
                raise ValueError(f"address {word} not in the hierarchy")
            j = lvl.index[key]
            if int(lvl.parent[j]) != i or int(lvl.digit[j]) != d:
                raise ValueError(f"address {word} not in the hierarchy")
            i = j
        return i

    def ancestor(self, n: int, i: int, k: int) -> int:
        """Index at level n-k of the k-th ancestor of cell i at level n."""
        for m in range(n, n - k, -1):
            i = int(self.levels[m].parent[i])
        return i

    def cell_box(self, n: int, i: int) -> Tuple[int, int, int]:
        """(ix, iy, scale) with scale = 3**n; cell = box/scale shifted to Q."""
        lvl = self.levels[n]
        return int(lvl.ix[i]), int(lvl.iy[i]), 3 ** n

    def cell_corners(self, n: int, i: int) -> List[Tuple[Fraction, Fraction]]:
        ix, iy, s = self.cell_box(n, i)
        xs = (Fraction(ix, s) - Fraction(1, 2), Fraction(ix + 1, s) - Fraction(1, 2))
        ys = (Fraction(iy, s) - Fraction(1, 2), Fraction(iy + 1, s) - Fraction(1, 2))
        return [(xs[0], ys[0]), (xs[1], ys[0]), (xs[1], ys[1]), (xs[0], ys[1])]

    def branching_profile(self) -> List[int]:
        return [self.schedule.branching(n) for n in range(1, self.depth + 1)]

    # -- markers -----------------------------------------------------------

    def _descent_digit(self, level: int) -> int:
        """Global nested-point descent: center child on plus-sign levels,
        alternating edge-mid children (2/6 by carpet-level parity) elsewhere."""
        if self.schedule.F(level) == 0:
            return 0
        parity = sum(self.schedule.F(j) for j in range(1, level + 1)) % 2
        return 2 if parity == 1 else 6

    def _marker_rel_y(self, n: int, tail: int = 40) -> Fraction:
        """Relative y of the marker inside a level-n cell (x is centered).

        Exact limit of the descent chain, truncated `tail` levels below the
        built depth; the truncation sits inside the chain cell so nesting
        across built levels is exact.
        """
        if n in self._marker_rel_cache:
            return self._marker_rel_cache[n]
        stop = self.depth + tail
        if self.schedule.horizon is not None:
            stop = min(stop, self.schedule.horizon)
        acc = Fraction(0)
        scale = Fraction(1)
        for j in range(n + 1, stop + 1):
            d = self._descent_digit(j)
            py = FIXED_POINTS[d][1]
            acc += Fraction(2, 3) * py * scale
            scale /= 3
        self._marker_rel_cache[n] = acc
        return acc

    def marker(self, n: int, i: int) -> Tuple[Fraction, Fraction]:
        """Nested interior point x_w of cell i at level n (exact)."""
        ix, iy, s = self.cell_box(n, i)
        rel_y = self._marker_rel_y(n)
        mx = Fraction(2 * ix + 1, 2 * s) - Fraction(1, 2)
        my = Fraction(iy, s) + (Fraction(1, 2) + rel_y) / s - Fraction(1, 2)
        return (mx, my)

    def markers(self, n: int) -> List[Tuple[Fraction, Fraction]]:
        return [self.marker(n, i) for i in range(self.levels[n].count)]

    # -- point location ----------------------------------------------------

    def cells_containing(self, n: int, x: Fraction, y: Fraction) -> List[int]:
        """Indices of the level-n cells whose closed square contains (x, y)."""
        s = 3 ** n
        out = []
        for ix in _grid_slots(x, s):
            for iy in _grid_slots(y, s):
                j = self.levels[n].index.get((ix, iy))
                if j is not None:
                    out.append(j)
        return out

    # -- exports -----------------------------------------------------------

    def cells_json(self, n: int) -> dict:
        lvl = self.levels[n]
        s = 3 ** n
        cells = []
        for i in range(lvl.count):
            ix, iy = int(lvl.ix[i]), int(lvl.iy[i])
            cells.append({
                "address": "".join(str(d) for d in self.address(n, i)),
                "x_min": _frac_str(Fraction(2 * ix - s, 2 * s)),
                "y_min": _frac_str(Fraction(2 * iy - s, 2 * s)),
                "x_max": _frac_str(Fraction(2 * (ix + 1) - s, 2 * s)),
                "y_max": _frac_str(Fraction(2 * (iy + 1) - s, 2 * s)),
            })
        return {"level": n, "count": lvl.count, "cells": cells}

    def export_cells(self, path: str, n: int) -> None:
        with open(path, "w") as fh:
            json.dump(self.cells_json(n), fh, indent=1)

    def export_edges_csv(self, path: str, levels: Iterable[int]) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["level", "w", "v"])
            for n in levels:
                g = adjacency(self, n)
                for i, j in g.edges:
                    wi = "".join(str(d) for d in self.address(n, int(i)))
                    wj = "".join(str(d) for d in self.address(n, int(j)))
                    writer.writerow([n, wi, wj])


def _grid_slots(coord: Fraction, scale: int) -> List[int]:
    """Grid indices ix with ix <= (coord + 1/2)*scale <= ix + 1, clipped."""
    u = (coord + Fraction(1, 2)) * scale
    if u < 0 or u > scale:
        return []
    if u.denominator == 1:
        v = int(u)
        return [ix for ix in (v - 1, v) if 0 <= ix < scale]
    v = u.numerator // u.denominator
    return [v] if 0 <= v < scale else []


def _frac_str(q: Fraction) -> str:
    return f"{q.numerator}/{q.denominator}"


def build_hierarchy(schedule: Schedule, depth: int,
                    cell_cap: int = PartitionHierarchy.DEFAULT_CELL_CAP) -> PartitionHierarchy:
    """Materialize all cells of `schedule` down to `depth`."""
    return PartitionHierarchy(schedule, depth, cell_cap=cell_cap)


def adjacency(h: PartitionHierarchy, n: int) -> AdjacencyGraph:
    """Level-n cell graph: (w, v) iff the closed cells intersect, w != v.

    On the 3-adic grid two same-level closed boxes intersect exactly when
    their integer coordinates differ by at most 1 in each axis.
    """
    if n > h.depth:
        raise ValueError(f"level {n} not built (depth {h.depth})")
    if n in h._adjacency_cache:
        return h._adjacency_cache[n]
    lvl = h.levels[n]
    pairs: List[Tuple[int, int]] = []
    for i in range(lvl.count):
        ix, iy = int(lvl.ix[i]), int(lvl.iy[i])
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                j = lvl.index.get((ix + dx, iy + dy))
                if j is not None and j > i:
                    pairs.append((i, j))
    edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    g = AdjacencyGraph(n, lvl.count, edges)
    h._adjacency_cache[n] = g
    return g


def _set_distance_within(g: AdjacencyGraph, sources: Sequence[int],
                         targets: Sequence[int], cap: int) -> Optional[int]:
    """Graph distance from `sources` to `targets`, or None if > cap."""
    targets_set = set(targets)
    if targets_set.intersection(sources):
        return 0
    nbrs = g.neighbor_lists()
    seen = set(sources)
    frontier = deque((s, 0) for s in sources)
    while frontier:
        v, d = frontier.popleft()
        if d == cap:
            continue
        for u in nbrs[v]:
            if u in seen:
                continue
            if u in targets_set:
                return d + 1
            seen.add(u)
            frontier.append((u, d + 1))
    return None


def delta_level(h: PartitionHierarchy, x: Tuple[Fraction, Fraction],
                y: Tuple[Fraction, Fraction], m: int) -> Tuple[int, bool]:
    """Largest built n admitting cells w ∋ x, v ∋ y with l_n(w, v) <= m.

    Returns (delta, clipped); clipped means the condition still held at the
    built depth, so the true value may exceed it.
    """
    x = (Fraction(x[0]), Fraction(x[1]))
    y = (Fraction(y[0]), Fraction(y[1]))
    if x == y:
        raise ValueError("delta_level needs two distinct points")
    for p in (x, y):
        if not (abs(p[0]) <= Fraction(1, 2) and abs(p[1]) <= Fraction(1, 2)):
            raise ValueError("point outside the root cell")
    best: Optional[int] = None
    for n in range(h.depth + 1):
        wx = h.cells_containing(n, *x)
        wy = h.cells_containing(n, *y)
        if not wx or not wy:
            continue
        d = _set_distance_within(adjacency(h, n), wx, wy, m)
        if d is not None and d <= m:
            best = n
    if best is None:
        raise ValueError("no level satisfies the chain condition (points separated at level 0?)")
    return best, best == h.depth


def nstar_estimate(h: PartitionHierarchy, kmax: int, horizon: int = 64) -> dict:
    """Window sups (sup_w #children^k)^(1/k) for k <= kmax and their inf.

    For formula schedules the window start ranges over all levels up to
    `horizon`; table schedules are clipped to their own horizon.
    """
    if kmax < 1:
        raise ValueError("kmax must be >= 1")
    sched = h.schedule
    top = horizon if sched.horizon is None else min(horizon, sched.horizon)
    if top < kmax:
        raise ValueError("horizon shorter than kmax")
    branch = [sched.branching(j) for j in range(1, top + 1)]
    sups: List[int] = []
    seq: List[float] = []
    for k in range(1, kmax + 1):
        best = 0
        for start in range(0, top - k + 1):
            prod = 1
            for j in range(start, start + k):
                prod *= branch[j]
            best = max(best, prod)
        sups.append(best)
        seq.append(best ** (1.0 / k))
    return {
        "k": list(range(1, kmax + 1)),
        "sup_counts": sups,
        "roots": seq,
        "n_star": min(seq),
        "horizon": top,
    }


def validate_framework(h: PartitionHierarchy, depth: Optional[int] = None,
                       m_star: int = 1, pair_samples: int = 1200,
                       seed: int = 0) -> FrameworkParams:
    """Check the per-level framework constants and the chain comparison.

    diam ratio is exact (every cell is a square of side 3^-n); the inner
    ball witness is the nested marker with xi = 1/6; the chain comparison
    band is sampled over corner-point pairs at the finest level.
    """
    if depth is None:
        depth = h.depth
    depth = min(depth, h.depth)
    violations: List[str] = []
    if depth == 0:
        return FrameworkParams(Fraction(1, 3), Fraction(1, 6), m_star, 0,
                               float(h.schedule.branching(1)) if h.depth else 0.0,
                               float(np.sqrt(2.0)), (0.0, 0.0), 0.0, 0,
                               violations)

    # (B1): every cell is a square of side 3^-n, so diam/zeta^n = sqrt(2).
    diam_ratio = float(np.sqrt(2.0))

    # (B2) with xi = 1/6: the marker's L-inf depth inside its own square.
    xi = Fraction(1, 6)
    for n in range(depth + 1):
        rel = h._marker_rel_y(n)
        depth_rel = Fraction(1, 2) - abs(rel)
        if depth_rel < xi:
            violations.append(f"inner-ball failure at level {n}: depth {depth_rel} < {xi}")

    # Marker nesting across built levels.
    for n in range(depth):
        coarse = {h.marker(n, i) for i in range(h.levels[n].count)}
        fine = {h.marker(n + 1, i) for i in range(h.levels[n + 1].count)}
        if not coarse.issubset(fine):
            violations.append(f"marker nesting fails {n} -> {n + 1}")
            break

    # (B4) degree bound.
    l_star = 0
    for n in range(1, depth + 1):
        g = adjacency(h, n)
        if g.count > 1:
            l_star = max(l_star, int(g.degrees.max()))

    # (B3) band over sampled corner pairs at the finest level.
    rng = np.random.default_rng(seed)
    lvl = h.levels[depth]
    s = 3 ** depth
    ratios: List[float] = []
    used = 0
    attempts = 0
    while used < pair_samples and attempts < 20 * pair_samples:
        attempts += 1
        i, j = rng.integers(0, lvl.count, size=2)
        cx = rng.integers(0, 2, size=4)
        px = Fraction(int(lvl.ix[i]) + int(cx[0]), s) - Fraction(1, 2)
        py = Fraction(int(lvl.iy[i]) + int(cx[1]), s) - Fraction(1, 2)
        qx = Fraction(int(lvl.ix[j]) + int(cx[2]), s) - Fraction(1, 2)
        qy = Fraction(int(lvl.iy[j]) + int(cx[3]), s) - Fraction(1, 2)
        if (px, py) == (qx, qy):
            continue
        delta, clipped = delta_level(h, (px, py), (qx, qy), m_star)
        if clipped:
            continue  # same finest cell: the ratio is a one-sided bound only
        dist = float(np.hypot(float(px - qx), float(py - qy)))
        ratios.append(dist * 3.0 ** delta)
        used += 1
    if ratios:
        band = (min(ratios), max(ratios))
        band_ratio = band[1] / band[0]
    else:
        band = (0.0, 0.0)
        band_ratio = float("inf")
        violations.append("no unclipped pairs sampled for the chain comparison")

    n_star = nstar_estimate(h, kmax=min(6, max(1, depth)))["n_star"] if depth >= 1 else 0.0

    return FrameworkParams(
        zeta=Fraction(1, 3),
        xi=xi,
        m_star=m_star,
        l_star=l_star,
        n_star=float(n_star),
        diam_ratio=diam_ratio,
        b3_band=band,
        b3_band_ratio=band_ratio,
        b3_samples=used,
        violations=violations,
    )
