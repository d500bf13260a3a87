"""Hierarchical measures, volume profiles, and the volume-route dimension.

Cell masses are exact rationals (per-level child weights multiplying along
the address); ball masses are bracketed between inner and outer cell covers
at the finest built level.  The psi-measure implements the interior-child
weighting that realizes controlled volume growth (N_* + eps)^k.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .hierarchy import PartitionHierarchy, adjacency, nstar_estimate

__all__ = [
    "HierMeasure",
    "PsiMeasure",
    "hier_measure",
    "doubling_check",
    "psi_measure",
    "olds_volume",
    "fekete_limit",
    "h_profile",
    "profiles_to_csv",
    "VolumeProfile",
]


class HierMeasure:
    """Per-level child-weight tables; mu(cell) multiplies along the address."""

    def __init__(self, h: PartitionHierarchy, weights: Dict[int, Dict[int, Fraction]]):
        self.h = h
        self.weights = weights
        for n in range(1, h.depth + 1):
            table = weights[n]
            digits = h.schedule.rule_at(n).digits
            if set(table) != set(digits):
                raise ValueError(f"level {n} weight table does not match the alphabet")
            if any(w <= 0 for w in table.values()):
                raise ValueError("weights must be positive")
            if sum(table.values()) != 1:
                raise ValueError(f"level {n} weights sum to {sum(table.values())}, not 1")
        self._mass_float: Dict[int, np.ndarray] = {}

    def mass(self, n: int, i: int) -> Fraction:
        out = Fraction(1)
        for m in range(n, 0, -1):
            out *= self.weights[m][int(self.h.levels[m].digit[i])]
            i = int(self.h.levels[m].parent[i])
        return out

    def masses_float(self, n: int) -> np.ndarray:
        if n not in self._mass_float:
            if n == 0:
                arr = np.ones(1)
            else:
                prev = self.masses_float(n - 1)
                lvl = self.h.levels[n]
                w = np.array([float(self.weights[n][int(d)]) for d in lvl.digit])
                arr = prev[lvl.parent] * w
            self._mass_float[n] = arr
        return self._mass_float[n]

    def total(self) -> Fraction:
        return Fraction(1)

    def resolution(self) -> int:
        return self.h.depth

    def ball_mass(self, x: Tuple[float, float], r: float,
                  resolution: Optional[int] = None) -> Tuple[float, float]:
        """(inner, outer) bracket of mu(B(x, r)) by cell covers."""
        n = self.resolution() if resolution is None else resolution
        lvl = self.h.levels[n]
        s = 3 ** n
        side = 1.0 / s
        xmin = lvl.ix * side - 0.5
        ymin = lvl.iy * side - 0.5
        dx = np.maximum(np.maximum(xmin - x[0], x[0] - (xmin + side)), 0.0)
        dy = np.maximum(np.maximum(ymin - x[1], x[1] - (ymin + side)), 0.0)
        dmin2 = dx * dx + dy * dy
        fx = np.maximum(np.abs(x[0] - xmin), np.abs(x[0] - (xmin + side)))
        fy = np.maximum(np.abs(x[1] - ymin), np.abs(x[1] - (ymin + side)))
        dmax2 = fx * fx + fy * fy
        masses = self.masses_float(n)
        r2 = r * r
        inner = float(masses[dmax2 < r2].sum())
        outer = float(masses[dmin2 < r2].sum())
        return inner, outer


def hier_measure(h: PartitionHierarchy, rule: str = "uniform",
                 tables: Optional[Dict[int, Dict[int, Fraction]]] = None) -> HierMeasure:
    """Standard measures: "uniform" splits each cell equally among children.

    For the mixed schedule this is the additive measure 8^-k1 5^-(n-k1);
    explicit per-level tables are accepted via rule="custom".
    """
    if rule == "uniform":
        weights = {}
        for n in range(1, h.depth + 1):
            digits = h.schedule.rule_at(n).digits
            weights[n] = {d: Fraction(1, len(digits)) for d in digits}
        return HierMeasure(h, weights)
    if rule == "custom":
        if tables is None:
            raise ValueError("custom rule needs weight tables")
        return HierMeasure(h, tables)
    raise ValueError(f"unknown measure rule {rule!r}")


@dataclass
class VolumeProfile:
    center: Tuple[float, float]
    radii: List[float]
    v_lo: List[float]
    v_hi: List[float]
    metric: str = "euclidean"


def _sample_centers(h: PartitionHierarchy, level: int, count: int, seed: int) -> List[Tuple[float, float]]:
    """Corner points of level cells (points of the limit set), deterministic."""
    rng = np.random.default_rng(seed)
    lvl = h.levels[level]
    s = 3 ** level
    picks = rng.integers(0, lvl.count, size=count)
    corner = rng.integers(0, 2, size=(count, 2))
    out = []
    for i, (cx, cy) in zip(picks, corner):
        out.append(((int(lvl.ix[i]) + int(cx)) / s - 0.5, (int(lvl.iy[i]) + int(cy)) / s - 0.5))
    return out


def doubling_check(m: HierMeasure, centers: Optional[Sequence[Tuple[float, float]]] = None,
                   levels: Optional[Sequence[int]] = None, samples: int = 40,
                   seed: int = 0) -> dict:
    """Empirical doubling constant sup V(x, 2r)/V(x, r) with its witness,
    plus a fitted reverse-doubling factor gamma1 with V(x, r/gamma1) <= V(x, r)/2.

    Brackets are used conservatively: outer cover on top, inner below.
    """
    h = m.h
    if levels is None:
        levels = list(range(1, max(2, h.depth - 1)))
    if centers is None:
        centers = _sample_centers(h, min(2, h.depth), samples, seed)
    worst = 0.0
    witness = None
    ratios = []
    for x in centers:
        for j in levels:
            r = 3.0 ** (-j)
            lo_r, _ = m.ball_mass(x, r)
            _, hi_2r = m.ball_mass(x, 2 * r)
            if lo_r <= 0:
                continue
            q = hi_2r / lo_r
            ratios.append(q)
            if q > worst:
                worst, witness = q, (x, r)
    gamma1 = None
    for j in (1, 2, 3):
        g = 3.0 ** j
        ok = True
        for x in centers:
            for jj in levels:
                r = 3.0 ** (-jj)
                lo_r, _ = m.ball_mass(x, r)
                _, hi_small = m.ball_mass(x, r / g)
                if hi_small > lo_r / 2 + 1e-15:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            gamma1 = g
            break
    return {"doubling_constant": worst, "witness": witness,
            "gamma1": gamma1, "n_ratios": len(ratios)}


class PsiMeasure:
    """Interior-child weighted measure on the k-step coarsened tree."""

    def __init__(self, h: PartitionHierarchy, k: int, eps: Fraction, n_star: int):
        self.h = h
        self.k = k
        self.eps = Fraction(eps)
        self.n_star = n_star
        self.base = Fraction(n_star) + self.eps
        self.coarse_levels = list(range(0, h.depth + 1, k))
        self.interior_child: Dict[Tuple[int, int], int] = {}
        self.psi: Dict[int, np.ndarray] = {}  # coarse level -> Fraction array
        self._build()

    def _descendants(self, level: int, i: int, k: int) -> np.ndarray:
        lo = hi = i
        for m in range(level + 1, level + k + 1):
            b = self.h.schedule.branching(m)
            lo, hi = lo * b, hi * b + b - 1
        return np.arange(lo, hi + 1)

    def _build(self) -> None:
        h, k = self.h, self.k
        grow = self.base ** k
        psi_prev = np.array([Fraction(1)], dtype=object)
        self.psi[0] = psi_prev
        for cl in range(1, len(self.coarse_levels)):
            top = self.coarse_levels[cl - 1]
            bot = self.coarse_levels[cl]
            n_bot = h.levels[bot].count
            psi_bot = np.empty(n_bot, dtype=object)
            span = 3 ** k
            for w in range(h.levels[top].count):
                desc = self._descendants(top, w, k)
                count = len(desc)
                if Fraction(count) > grow:
                    raise ValueError(
                        f"(N*+eps)^k = {grow} below the branching {count}; increase eps or k")
                wx, wy = int(h.levels[top].ix[w]), int(h.levels[top].iy[w])
                interior = None
                for v in desc:
                    rx = int(h.levels[bot].ix[v]) - span * wx
                    ry = int(h.levels[bot].iy[v]) - span * wy
                    if 1 <= rx <= span - 2 and 1 <= ry <= span - 2:
                        interior = int(v)
                        break
                if interior is None:
                    raise ValueError(
                        f"no interior descendant at offset {k} below cell {w} (level {top})")
                self.interior_child[(top, w)] = interior
                small = 1 / grow
                big = 1 - Fraction(count - 1) / grow
                for v in desc:
                    phi = big if int(v) == interior else small
                    psi_bot[int(v)] = psi_prev[w] * phi
            self.psi[bot] = psi_bot
            psi_prev = psi_bot

    def mass(self, coarse_level: int, i: int) -> Fraction:
        return self.psi[coarse_level][i]

    def masses_float(self, coarse_level: int) -> np.ndarray:
        return np.array([float(q) for q in self.psi[coarse_level]])

    def resolution(self) -> int:
        return self.coarse_levels[-1]

    def ball_mass(self, x: Tuple[float, float], r: float,
                  resolution: Optional[int] = None) -> Tuple[float, float]:
        n = self.resolution() if resolution is None else resolution
        if n not in self.psi:
            raise ValueError(f"level {n} is not a coarse level of the psi measure")
        h = self.h
        lvl = h.levels[n]
        s = 3 ** n
        side = 1.0 / s
        xmin = lvl.ix * side - 0.5
        ymin = lvl.iy * side - 0.5
        dx = np.maximum(np.maximum(xmin - x[0], x[0] - (xmin + side)), 0.0)
        dy = np.maximum(np.maximum(ymin - x[1], x[1] - (ymin + side)), 0.0)
        dmin2 = dx * dx + dy * dy
        fx = np.maximum(np.abs(x[0] - xmin), np.abs(x[0] - (xmin + side)))
        fy = np.maximum(np.abs(x[1] - ymin), np.abs(x[1] - (ymin + side)))
        dmax2 = fx * fx + fy * fy
        masses = self.masses_float(n)
        r2 = r * r
        return float(masses[dmax2 < r2].sum()), float(masses[dmin2 < r2].sum())

    def neighbor_comparability(self) -> dict:
        """Exact check of ((N*+eps)^k - 1) psi(w) >= psi(u) on adjacent pairs."""
        bound = self.base ** self.k - 1
        worst: Optional[Fraction] = None
        violations = 0
        checked = 0
        for n in self.coarse_levels[1:]:
            g = adjacency(self.h, n)
            psi = self.psi[n]
            for i, j in g.edges:
                for a, b in ((int(i), int(j)), (int(j), int(i))):
                    checked += 1
                    lhs = bound * psi[a]
                    if lhs < psi[b]:
                        violations += 1
                    q = psi[b] / psi[a]
                    if worst is None or q > worst:
                        worst = q
        return {"checked": checked, "violations": violations,
                "max_neighbor_ratio": worst, "bound": bound}

    def growth_exponent(self, samples: int = 30, seed: int = 0) -> dict:
        """Per-original-level volume growth exponent, sup over sampled centers.

        Per center, the exponent is the least-squares slope of log V against
        the level across every coarse scale (midpoint ball masses); the
        longest window suppresses the O(1) cover constants that a single-lag
        ratio would inherit.  The conservative single-lag constant is also
        reported (the `lesssim` form with its fitted prefactor).
        """
        h = self.h
        centers = _sample_centers(h, min(self.k, h.depth), samples, seed)
        res = self.resolution()
        slopes = []
        worst_single = 0.0
        for x in centers:
            js, vs = [], []
            for lvl in self.coarse_levels:
                lo, hi = self.ball_mass(x, 3.0 ** (-lvl), res)
                mid = 0.5 * (lo + hi) if lo > 0 else hi
                if mid > 0:
                    js.append(lvl)
                    vs.append(math.log(mid))
            if len(js) >= 2:
                slope = float(np.polyfit(np.array(js, dtype=float), np.array(vs), 1)[0])
                slopes.append(-slope)
            for a in range(len(js) - 1):
                worst_single = max(worst_single, (vs[a] - vs[a + 1]) / (js[a + 1] - js[a]))
        if not slopes:
            raise ValueError("no usable centers for the growth exponent")
        return {"growth_exponent": max(slopes), "bound": math.log(float(self.base)),
                "single_lag_max": worst_single}


def psi_measure(h: PartitionHierarchy, eps: Fraction, k: int) -> PsiMeasure:
    """Interior-child weighted measure on the k-step coarsened tree."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if h.depth < k:
        raise ValueError("depth too shallow for the requested offset")
    roots = nstar_estimate(h, kmax=min(6, h.depth))["roots"]
    n_star = int(round(roots[-1]))
    if abs(roots[-1] - n_star) > 1e-9:
        raise ValueError("branching rate is not integral; supply n_star explicitly")
    return PsiMeasure(h, k, Fraction(eps), n_star)


def fekete_limit(ts: Sequence[float], fs: Sequence[float], tol: float = 1e-12) -> dict:
    """inf f(t)/t over the grid, with subadditivity violations reported."""
    if len(ts) != len(fs) or len(ts) < 1:
        raise ValueError("need matching nonempty grids")
    order = np.argsort(ts)
    ts = list(np.asarray(ts, dtype=float)[order])
    fs = list(np.asarray(fs, dtype=float)[order])
    if any(t <= 0 for t in ts):
        raise ValueError("grid must be positive")
    lookup = {round(t, 12): f for t, f in zip(ts, fs)}
    violations = []
    for i, t in enumerate(ts):
        for s in ts[i:]:
            key = round(t + s, 12)
            if key in lookup and lookup[key] > lookup[round(t, 12)] + lookup[round(s, 12)] + tol:
                violations.append((t, s))
    ratios = [f / t for t, f in zip(ts, fs)]
    return {"limit": min(ratios), "argmin_t": ts[int(np.argmin(ratios))],
            "violations": violations}


def olds_volume(m, zeta_r_log: float, window: Sequence[int],
                centers: Optional[Sequence[Tuple[float, float]]] = None,
                radius_factors: Sequence[float] = (1.0, 1.5),
                samples: int = 40, seed: int = 0,
                resolution: Optional[int] = None) -> dict:
    """Volume-route spectral dimension on a window of levels.

    rate = Fekete inf over lags of the sup (over centers and scales) of the
    per-level volume log-ratio; the dimension is 2*rate/(rate + zeta_r_log)
    with zeta_r_log = log(1/zeta_R) the per-level resistance log-scale.
    Returns the sup-window estimate and the pointwise (per-center least
    squares) variant.
    """
    window = sorted(set(int(j) for j in window))
    if len(window) < 2:
        raise ValueError("window must span at least two scales")
    h = m.h
    if centers is None:
        centers = _sample_centers(h, min(2, h.depth), samples, seed)
    res = m.resolution() if resolution is None else resolution

    # V(x, c*3^-j) midpoints of the cover bracket, per center and factor
    logs: Dict[Tuple[int, int], List[float]] = {}
    for ci, x in enumerate(centers):
        for fi, c in enumerate(radius_factors):
            vals = []
            for j in window:
                lo, hi = m.ball_mass(x, c * 3.0 ** (-j), res)
                vals.append(0.5 * (lo + hi) if lo > 0 else hi)
            logs[(ci, fi)] = [math.log(v) if v > 0 else -math.inf for v in vals]

    lags = list(range(1, len(window)))
    sup_ratio = []
    for lag in lags:
        best = -math.inf
        for series in logs.values():
            for a in range(len(window) - lag):
                dj = window[a + lag] - window[a]
                if math.isfinite(series[a]) and math.isfinite(series[a + lag]):
                    best = max(best, (series[a] - series[a + lag]) / dj)
        sup_ratio.append(best)
    fk = fekete_limit([float(window[lag] - window[0]) for lag in lags],
                      [s * (window[lag] - window[0]) for lag, s in zip(lags, sup_ratio)])
    rate = fk["limit"]

    def dim(rt: float) -> float:
        if rt <= 0 or rt + zeta_r_log <= 0:
            return float("nan")
        return 2.0 * rt / (rt + zeta_r_log)

    pointwise = []
    for series in logs.values():
        ok = [(j, v) for j, v in zip(window, series) if math.isfinite(v)]
        if len(ok) >= 2:
            js = np.array([j for j, _ in ok], dtype=float)
            vs = np.array([v for _, v in ok])
            slope = float(np.polyfit(js, vs, 1)[0])
            pointwise.append(-slope)
    pw_rate = float(np.median(pointwise)) if pointwise else float("nan")
    return {
        # headline: the per-point limit, the quantity the pointwise spectral
        # dimension computation actually takes at a fixed center
        "ds_estimate": dim(pw_rate),
        "pointwise_rate": pw_rate,
        # sup-window variant: upper bracket with the O(1)/lag transient
        "rate": rate,
        "rate_by_lag": dict(zip(lags, sup_ratio)),
        "ds_sup_window": dim(rate),
        "zeta_r_log": zeta_r_log,
        "window": window,
        "fekete": fk,
    }


def h_profile(m: HierMeasure, cg, renormalizer: float,
              centers: Optional[Sequence[int]] = None,
              radii: Optional[Sequence[float]] = None,
              dense_cap: int = 4000) -> dict:
    """Profiles h(x, r) = V(x, r) * sup-resistance over the Euclidean ball.

    `cg` is a corner graph whose resistances, divided by `renormalizer`,
    stand in for the limit metric.  Returns the rows (x_id, r, V brackets,
    olR, h brackets) plus the fitted halving factor gamma2 with
    h(x, r/gamma2) <= h(x, r)/2 and the doubling constant of h.
    """
    from .resnet import resistance_vector

    g = cg.graph
    if g.n > dense_cap:
        raise ValueError("h_profile needs the dense resistance path")
    coords = cg.coords_float()
    if centers is None:
        centers = [int(cg.corner_vertices()[2]), int(np.argmin(np.sum(coords ** 2, axis=1)))]
    if radii is None:
        radii = [2.0 * 3.0 ** (-j) for j in range(0, cg.n - cg.m + 1)]
    radii = sorted(float(r) for r in radii)
    rows: List[dict] = []
    per_center: Dict[int, List[dict]] = {}
    for x in centers:
        rvec = resistance_vector(g, int(x)) / renormalizer
        dist = np.hypot(coords[:, 0] - coords[x, 0], coords[:, 1] - coords[x, 1])
        series = []
        for r in radii:
            inside = dist < r
            ol_r = float(rvec[inside].max()) if inside.any() else 0.0
            v_lo, v_hi = m.ball_mass((float(coords[x, 0]), float(coords[x, 1])), r)
            row = {"x_id": int(x), "r": r, "V_lo": v_lo, "V_hi": v_hi,
                   "olR": ol_r, "h_lo": v_lo * ol_r, "h_hi": v_hi * ol_r}
            series.append(row)
            rows.append(row)
        per_center[int(x)] = series
    # monotonicity and the halving/doubling bands on the bracket midpoints
    monotone = True
    doubling = 0.0
    gamma2 = None
    for series in per_center.values():
        mids = [0.5 * (s["h_lo"] + s["h_hi"]) for s in series]
        for a, b in zip(mids, mids[1:]):
            if b < a - 1e-12:
                monotone = False
            # one grid step triples r, so this dominates the 2r band
            if a > 0:
                doubling = max(doubling, b / a)
    # the radius grid is geometric with ratio 3, so gamma2 = 3^exp compares
    # grid indices exactly (no float key lookups)
    for exp in (1, 2, 3):
        ok = True
        for series in per_center.values():
            mids = [0.5 * (s["h_lo"] + s["h_hi"]) for s in series]
            for lo_idx in range(len(mids) - exp):
                if mids[lo_idx] > mids[lo_idx + exp] / 2 + 1e-12:
                    ok = False
        if ok:
            gamma2 = 3.0 ** exp
            break
    return {"rows": rows, "monotone": monotone, "gamma2": gamma2,
            "h_doubling": doubling}


def profiles_to_csv(rows: Sequence[dict], path: str) -> None:
    """CSV profile rows: x_id,r,V_lo,V_hi,olR,h_lo,h_hi."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_id", "r", "V_lo", "V_hi", "olR", "h_lo", "h_hi"])
        for row in rows:
            writer.writerow([row["x_id"], f"{row['r']:.17g}",
                             f"{row['V_lo']:.17g}", f"{row['V_hi']:.17g}",
                             f"{row['olR']:.17g}",
                             f"{row['h_lo']:.17g}", f"{row['h_hi']:.17g}"])
