"""Mixed carpet/Vicsek pipeline: schedules, corner-graph resistances,
chaining constants, the separation index Delta, quasisymmetry diagnostics,
and the dimension-gap report.

The two-scale resistance bookkeeping follows the (TB)/(Pt) quantities: per
level pair (n, m) the top-to-bottom set resistance and the opposite-corner
two-point resistance of the corner graph, with k1 counting carpet levels in
(m, n] and k2 the carpet-to-plus-sign switches.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cornergraph import CornerGraph, corner_graph
from .hierarchy import PartitionHierarchy, Schedule, build_hierarchy, mixed_indicator
from .resnet import eff_resistance

__all__ = [
    "schedule_F",
    "ResistanceScales",
    "ScaleCache",
    "resistance_scales",
    "chain_check",
    "evres_fit",
    "delta_pair",
    "qs_diagnostic",
    "QSDiagnostic",
    "DimReport",
    "gap_report",
    "scales_to_csv",
]


def schedule_F(n: int) -> int:
    """The mixed schedule bit: 1 iff k^2(k-1) < n <= k^3 for some k >= 1."""
    if n < 1:
        raise ValueError("schedule index must be >= 1")
    return mixed_indicator(n)


def k1_count(schedule: Schedule, n: int, m: int) -> int:
    return sum(schedule.F(j) for j in range(m + 1, n + 1))


def k2_count(schedule: Schedule, n: int, m: int) -> int:
    return sum(1 for j in range(m + 1, n)
               if schedule.F(j) == 1 and schedule.F(j + 1) == 0)


@dataclass
class ResistanceScales:
    n: int
    m: int
    tb: float
    pt: float
    k1: int
    k2: int


class ScaleCache:
    """Corner graphs and their resistance scales for one schedule."""

    def __init__(self, schedule: Schedule):
        self.schedule = schedule
        self._graphs: Dict[Tuple[int, int], CornerGraph] = {}
        self._scales: Dict[Tuple[int, int], ResistanceScales] = {}

    def graph(self, n: int, m: int = 0) -> CornerGraph:
        key = (n, m)
        if key not in self._graphs:
            self._graphs[key] = corner_graph(self.schedule, n, m)
        return self._graphs[key]

    def scales(self, n: int, m: int = 0) -> ResistanceScales:
        key = (n, m)
        if key not in self._scales:
            cg = self.graph(n, m)
            p1, p3, p5, p7 = cg.corner_vertices()
            pt = eff_resistance(cg.graph, [p1], [p5]).value
            top = cg.side_vertices("top")
            bottom = cg.side_vertices("bottom")
            tb = eff_resistance(cg.graph, top, bottom).value
            self._scales[key] = ResistanceScales(
                n=n, m=m, tb=tb, pt=pt,
                k1=k1_count(self.schedule, n, m),
                k2=k2_count(self.schedule, n, m))
        return self._scales[key]

    def pt(self, n: int, m: int = 0) -> float:
        return self.scales(n, m).pt


def resistance_scales(schedule: Schedule, n: int, m: int = 0,
                      cache: Optional[ScaleCache] = None) -> ResistanceScales:
    cache = cache or ScaleCache(schedule)
    return cache.scales(n, m)


def _sample_vertex_pairs(cg: CornerGraph, count: int, seed: int) -> List[Tuple[Tuple[int, int], Tuple[int, int]]]:
    rng = np.random.default_rng(seed)
    n_v = cg.graph.n
    pairs = []
    while len(pairs) < count:
        i, j = rng.integers(0, n_v, size=2)
        if i == j:
            continue
        pairs.append((tuple(int(c) for c in cg.grid[i]), tuple(int(c) for c in cg.grid[j])))
    return pairs


def chain_check(schedule: Schedule, n_max: int, pair_samples: int = 40,
                seed: int = 0, cache: Optional[ScaleCache] = None) -> dict:
    """Fitted constants of the two-scale chaining inequalities.

    For every 0 <= m < n <= n_max and sampled x, y in the level-m corner set:
      C1:  R_n(x,y) <= C R_m(x,y) (Pt)_{n,m}
      C1b: R_m(x,y) (TB)_{n,m} <= C R_n(x,y)
      C2:  (Pt)_{n,m} <= C (TB)_{n,m}   (and (Pt) >= (TB) with constant 1)
      C3:  (Pt)_n <= C (Pt)_m (Pt)_{n,m}
    Constants are reported per n (using all m < n) so stability across
    levels is visible.
    """
    cache = cache or ScaleCache(schedule)
    rows = []
    per_n: Dict[int, Dict[str, float]] = {}
    pt_ge_tb = True
    for n in range(1, n_max + 1):
        cg_n = cache.graph(n, 0)
        solver_n = cg_n.graph.grounded_solver()
        c1 = c1b = c2 = c3 = 0.0
        for m in range(0, n):
            sc_nm = cache.scales(n, m)
            sc_n = cache.scales(n, 0)
            sc_m = cache.scales(m, 0) if m > 0 else ResistanceScales(0, 0, 1.0, 1.0, 0, 0)
            if sc_nm.pt < sc_nm.tb * (1 - 1e-9):
                pt_ge_tb = False
            c2 = max(c2, sc_nm.pt / sc_nm.tb)
            c3 = max(c3, sc_n.pt / (sc_m.pt * sc_nm.pt))
            cg_m = cache.graph(m, 0)
            solver_m = cg_m.graph.grounded_solver()
            f = 3 ** (n - m)
            for (a, b) in _sample_vertex_pairs(cg_m, pair_samples, seed + 97 * n + m):
                va = cg_m.vertex_at(*a)
                vb = cg_m.vertex_at(*b)
                r_m = solver_m.pair_resistance(va, vb)
                wa = cg_n.vertex_at(a[0] * f, a[1] * f)
                wb = cg_n.vertex_at(b[0] * f, b[1] * f)
                r_n = solver_n.pair_resistance(wa, wb)
                c1 = max(c1, r_n / (r_m * sc_nm.pt))
                c1b = max(c1b, r_m * sc_nm.tb / r_n)
            rows.append({"n": n, "m": m, "TB": sc_nm.tb, "Pt": sc_nm.pt,
                         "k1": sc_nm.k1, "k2": sc_nm.k2})
        per_n[n] = {"C1": c1, "C1b": c1b, "C2": c2, "C3": c3}
    overall = {key: max(per_n[n][key] for n in per_n if per_n[n][key] > 0)
               for key in ("C1", "C1b", "C2", "C3")}
    return {"per_n": per_n, "constants": overall, "pt_ge_tb": pt_ge_tb,
            "table": rows}


def evres_fit(n_max: int = 5, pure_levels: int = 5, seed: int = 0,
              caches: Optional[Dict[str, ScaleCache]] = None) -> dict:
    """Isolate the per-level resistance factors and fit the product model.

    rho_hat comes from the pure-carpet (Pt) ratio at the deepest computed
    level; the plus-sign factor is checked against 3; the switch-constant
    bracket [Ca, Cb] is fitted on the mixed pairs with k2 >= 1, and the
    model residual is reported for every pair.
    """
    if pure_levels < 3:
        raise ValueError("need at least 3 pure levels for factor isolation")
    caches = caches or {}
    sc_cache = caches.setdefault("sc", ScaleCache(Schedule.pure_sc()))
    vs_cache = caches.setdefault("vicsek", ScaleCache(Schedule.pure_vicsek()))
    mx_cache = caches.setdefault("mixed", ScaleCache(Schedule.mixed()))

    sc_pt = [sc_cache.pt(n) for n in range(1, pure_levels + 1)]
    vs_pt = [vs_cache.pt(n) for n in range(1, pure_levels + 1)]
    sc_ratios = [b / a for a, b in zip(sc_pt, sc_pt[1:])]
    vs_ratios = [b / a for a, b in zip(vs_pt, vs_pt[1:])]
    rho_hat = sc_ratios[-1]
    ratio_drift = [abs(b / a - 1.0) for a, b in zip(sc_ratios, sc_ratios[1:])]

    log_rho = math.log(rho_hat)
    log3 = math.log(3.0)
    switch_logs = []
    pairs = []
    for n in range(1, n_max + 1):
        for m in range(0, n):
            s = mx_cache.scales(n, m)
            base = s.k1 * log_rho + (n - m - s.k1) * log3
            pairs.append((s, base))
            if s.k2 >= 1:
                switch_logs.append((math.log(s.pt) - base) / s.k2)
    if switch_logs:
        log_ca, log_cb = min(switch_logs), max(switch_logs)
    else:
        log_ca = log_cb = 0.0
    log_mid = 0.5 * (log_ca + log_cb)
    residuals = []
    for s, base in pairs:
        model = base + s.k2 * log_mid
        residuals.append({"n": s.n, "m": s.m, "k1": s.k1, "k2": s.k2,
                          "log_pt": math.log(s.pt), "model": model,
                          "residual": math.log(s.pt) - model})
    max_resid = max(abs(r["residual"]) for r in residuals)

    # doubling level: smallest M with (Pt)_{n+M} >= 2 (Pt)_n on the mixed run
    mx_pt = [mx_cache.pt(n) for n in range(1, n_max + 1)]
    m_hat = None
    for M in range(1, n_max):
        if all(mx_pt[i + M - 1] >= 2.0 * mx_pt[i - 1] for i in range(1, n_max - M + 1)):
            m_hat = M
            break
    return {
        "rho_hat": rho_hat,
        "sc_pt": sc_pt,
        "sc_ratios": sc_ratios,
        "sc_ratio_drift": ratio_drift,
        "vicsek_pt": vs_pt,
        "vicsek_ratios": vs_ratios,
        "vicsek_factor_error": max(abs(r - 3.0) / 3.0 for r in vs_ratios),
        "ca": math.exp(log_ca),
        "cb": math.exp(log_cb),
        "mixed_pt": mx_pt,
        "m_hat": m_hat,
        "residuals": residuals,
        "max_abs_residual": max_resid,
        "band_log_width": log_cb - log_ca,
    }


def delta_pair(h: PartitionHierarchy, x: Tuple[Fraction, Fraction],
               y: Tuple[Fraction, Fraction]) -> Tuple[int, bool]:
    """Least n with a level-n cell whose closed square holds x while y lies
    in the image of the far region {|Re| v |Im| >= 3/2}.

    Exact rational arithmetic; (delta, clipped) where clipped marks that no
    level up to the built depth worked.
    """
    x = (Fraction(x[0]), Fraction(x[1]))
    y = (Fraction(y[0]), Fraction(y[1]))
    if x == y:
        raise ValueError("delta_pair needs two distinct points")
    for n in range(h.depth + 1):
        scale = Fraction(3) ** (-n)
        for i in h.cells_containing(n, *x):
            ix, iy, s = h.cell_box(n, i)
            cx = Fraction(2 * ix + 1, 2 * s) - Fraction(1, 2)
            cy = Fraction(2 * iy + 1, 2 * s) - Fraction(1, 2)
            if max(abs(y[0] - cx), abs(y[1] - cy)) >= Fraction(3, 2) * scale:
                return n, False
    return h.depth, True


@dataclass
class QSDiagnostic:
    n: int
    sample_level: int
    t_values: np.ndarray
    ratios: np.ndarray
    envelope_t: np.ndarray
    envelope: np.ndarray
    triples: List = field(default_factory=list)

    def envelope_at(self, t: float) -> float:
        idx = np.searchsorted(self.envelope_t, t, side="right") - 1
        if idx < 0:
            return 0.0
        return float(self.envelope[idx])


def qs_diagnostic(schedule: Schedule, n: int, samples: int = 300, seed: int = 0,
                  sample_level: int = 2, cache: Optional[ScaleCache] = None,
                  triples: Optional[List] = None) -> QSDiagnostic:
    """Scatter of renormalized-resistance vs Euclidean annulus ratios.

    Triples (x, y, z) are corner points of `sample_level` cells; the least
    nondecreasing envelope of ratio against t = d(x,y)/d(x,z) is the
    finite-sample distortion function.
    """
    cache = cache or ScaleCache(schedule)
    cg = cache.graph(n, 0)
    pt_n = cache.pt(n, 0)
    solver = cg.graph.grounded_solver()
    coarse = cache.graph(sample_level, 0)
    f = 3 ** (n - sample_level)
    if triples is None:
        rng = np.random.default_rng(seed)
        triples = []
        n_c = coarse.graph.n
        guard = 0
        while len(triples) < samples and guard < 50 * samples:
            guard += 1
            a, b, c = rng.integers(0, n_c, size=3)
            if a == c or b == c or a == b:
                continue
            triples.append((tuple(int(v) for v in coarse.grid[a]),
                            tuple(int(v) for v in coarse.grid[b]),
                            tuple(int(v) for v in coarse.grid[c])))
    span = float(coarse.span)
    ts, ratios = [], []
    for (ax, ay), (bx, by), (cx, cy) in triples:
        va = cg.vertex_at(ax * f, ay * f)
        vb = cg.vertex_at(bx * f, by * f)
        vc = cg.vertex_at(cx * f, cy * f)
        d_xy = math.hypot((ax - bx) / span, (ay - by) / span)
        d_xz = math.hypot((ax - cx) / span, (ay - cy) / span)
        r_xy = solver.pair_resistance(va, vb) / pt_n
        r_xz = solver.pair_resistance(va, vc) / pt_n
        ts.append(d_xy / d_xz)
        ratios.append(r_xy / r_xz)
    order = np.argsort(ts)
    t_arr = np.asarray(ts)[order]
    r_arr = np.asarray(ratios)[order]
    env = np.maximum.accumulate(r_arr)
    return QSDiagnostic(n=n, sample_level=sample_level, t_values=t_arr,
                        ratios=r_arr, envelope_t=t_arr, envelope=env,
                        triples=list(triples))


def qs_envelope_drift(d1: QSDiagnostic, d2: QSDiagnostic) -> float:
    """Max relative envelope change on the shared t-grid (same triples)."""
    if len(d1.envelope) != len(d2.envelope):
        raise ValueError("diagnostics were not built on the same triples")
    return float(np.max(np.abs(d2.envelope / d1.envelope - 1.0)))


@dataclass
class DimReport:
    vicsek_ds_volume: float
    vicsek_ds_heat: float
    vicsek_d2s: float
    sc_ds_volume: float
    sc_ds_heat: float
    sc_d2s: float
    sc_dim_arc_interval: Tuple[float, float]
    n_star_sc: float
    n_star_vicsek: float
    rho_hat: float
    one_plus_log2_log3: float
    vicsek_reference: float
    checks: List[dict] = field(default_factory=list)
    mixed_pointwise_ds: str = "window-resolved only"
    provenance: Dict[str, object] = field(default_factory=dict)

    def all_pass(self) -> bool:
        return all(c["pass"] for c in self.checks)

    def to_json(self) -> str:
        out = asdict(self)
        return json.dumps(out, indent=1, default=float)


def gap_report(depth_sc: int = 4, depth_vicsek: int = 4, kmax_sc: int = 5,
               kmax_vicsek: int = 5, dim_arc_kmax: int = 4, seed: int = 0,
               caches: Optional[Dict[str, ScaleCache]] = None,
               heat_estimates: Optional[Dict[str, float]] = None) -> DimReport:
    """Assemble the dimension-gap report with its ordering checks.

    The asymptotic pointwise dimension of the mixed space is never asserted:
    desk-scale windows cannot reach the regime where the long carpet blocks
    dominate, so the report carries window-resolved exponents only.
    """
    from .heat import build_form, ol_ds_heat
    from .measure import hier_measure, olds_volume
    from .penergy import critical_p, p_spectral_dims
    from .hierarchy import nstar_estimate

    caches = caches or {}
    sc_cache = caches.setdefault("sc", ScaleCache(Schedule.pure_sc()))
    vs_cache = caches.setdefault("vicsek", ScaleCache(Schedule.pure_vicsek()))

    fit = evres_fit(n_max=min(5, depth_sc + 1), pure_levels=5, caches=caches)
    rho_hat = fit["rho_hat"]

    h_sc = build_hierarchy(Schedule.pure_sc(), max(depth_sc + 2, kmax_sc + 1))
    h_vs = build_hierarchy(Schedule.pure_vicsek(), max(depth_vicsek + 2, kmax_vicsek + 1))
    m_sc = hier_measure(h_sc)
    m_vs = hier_measure(h_vs)

    n_star_sc = nstar_estimate(h_sc, 5)["n_star"]
    n_star_vs = nstar_estimate(h_vs, 5)["n_star"]

    d2s_sc = p_spectral_dims(h_sc, 2.0, kmax_sc)
    d2s_vs = p_spectral_dims(h_vs, 2.0, kmax_vicsek)
    d2s_sc_val = 2.0 / (1.0 - d2s_sc.rate_ls / math.log(n_star_sc))
    d2s_vs_val = 2.0 / (1.0 - d2s_vs.rate_ls / math.log(n_star_vs))

    vol_sc = olds_volume(m_sc, math.log(rho_hat), window=list(range(1, depth_sc)))
    vol_vs = olds_volume(m_vs, math.log(3.0), window=list(range(1, depth_vicsek + 1)))

    if heat_estimates is None:
        form_sc = build_form(h_sc, depth_sc, m_sc, sc_cache.pt(depth_sc))
        form_vs = build_form(h_vs, depth_vicsek, m_vs, vs_cache.pt(depth_vicsek))
        heat_sc = ol_ds_heat(form_sc)["estimate"]
        heat_vs = ol_ds_heat(form_vs)["estimate"]
    else:
        heat_sc = heat_estimates["sc"]
        heat_vs = heat_estimates["vicsek"]

    arc = critical_p(h_sc, dim_arc_kmax, p_range=(1.0, 2.5), tol=0.05)
    interval = arc["interval"]

    vic_ref = 2.0 * math.log(5.0) / (math.log(3.0) + math.log(5.0))
    tw = 1.0 + math.log(2.0) / math.log(3.0)

    checks = [
        {"id": "gap-ordering-left", "description": "Vicsek-window ds < 1.5",
         "value": vol_vs["ds_estimate"], "pass": vol_vs["ds_estimate"] < 1.5},
        {"id": "gap-ordering-right", "description": "1.5 < 1 + log2/log3",
         "value": tw, "pass": 1.5 < tw},
        {"id": "vicsek-ds-near-reference",
         "description": "Vicsek window ds within 0.1 of 2log5/log15",
         "value": vol_vs["ds_estimate"],
         "pass": abs(vol_vs["ds_estimate"] - vic_ref) <= 0.1},
        {"id": "sc-window-below-2", "description": "SC window dim estimates < 2",
         "value": max(heat_sc, vol_sc["ds_estimate"], d2s_sc_val),
         "pass": max(heat_sc, vol_sc["ds_estimate"], d2s_sc_val) < 2.0},
        {"id": "d2s-vs-heat-sc", "description": "d2s <= ds(heat) + 0.1 on the carpet",
         "value": d2s_sc_val - heat_sc, "pass": d2s_sc_val <= heat_sc + 0.1},
        {"id": "d2s-vs-heat-vicsek", "description": "d2s <= ds(heat) + 0.1 on the plus-sign set",
         "value": d2s_vs_val - heat_vs, "pass": d2s_vs_val <= heat_vs + 0.1},
        {"id": "dim-arc-lower", "description": "dim_ARC interval lower end >= 1",
         "value": interval[0], "pass": interval[0] >= 1.0},
        {"id": "dim-arc-below-2", "description": "dim_ARC interval upper end < 2",
         "value": interval[1], "pass": interval[1] < 2.0},
    ]
    return DimReport(
        vicsek_ds_volume=vol_vs["ds_estimate"],
        vicsek_ds_heat=heat_vs,
        vicsek_d2s=d2s_vs_val,
        sc_ds_volume=vol_sc["ds_estimate"],
        sc_ds_heat=heat_sc,
        sc_d2s=d2s_sc_val,
        sc_dim_arc_interval=tuple(interval),
        n_star_sc=float(n_star_sc),
        n_star_vicsek=float(n_star_vs),
        rho_hat=rho_hat,
        one_plus_log2_log3=tw,
        vicsek_reference=vic_ref,
        checks=checks,
        provenance={
            "depth_sc": depth_sc, "depth_vicsek": depth_vicsek,
            "kmax_sc": kmax_sc, "kmax_vicsek": kmax_vicsek,
            "dim_arc_kmax": dim_arc_kmax, "seed": seed,
            "dim_arc_flag": arc["flag"],
        },
    )


def scales_to_csv(rows: Sequence[dict], path: str) -> None:
    """CSV: n,m,TB,Pt,k1,k2."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "m", "TB", "Pt", "k1", "k2"])
        for r in rows:
            writer.writerow([r["n"], r["m"], f"{r['TB']:.17g}", f"{r['Pt']:.17g}",
                             r["k1"], r["k2"]])


def envelope_to_csv(diag: QSDiagnostic, path: str) -> None:
    """Scatter CSV: t,ratio."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "ratio"])
        for t, r in zip(diag.t_values, diag.ratios):
            writer.writerow([f"{t:.17g}", f"{r:.17g}"])
