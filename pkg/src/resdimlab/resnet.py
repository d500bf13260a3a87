"""Weighted-graph electrical machinery.

Laplacian solves for effective resistances (point and set queries by exact
vertex identification), Schur-complement traces, resistance weights, minimum
energy unit flows, and the locality diagnostics (localized resistance and
cross-set weight decay).

Solver policy: sparse LU of the grounded Laplacian up to 2e5 vertices,
diagonally preconditioned CG above; every solve is checked against a
relative-residual bound of 1e-10.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

__all__ = [
    "LevelGraph",
    "ResistanceValue",
    "UnitFlow",
    "SolverError",
    "eff_resistance",
    "trace",
    "resistance_weights",
    "min_energy_flow",
    "localized_resistance",
    "cross_weight_decay",
    "pinv_resistance",
    "graph_from_csv",
    "graph_to_csv",
]

RESIDUAL_TOL = 1e-10
SPARSE_DIRECT_LIMIT = 200_000


class SolverError(RuntimeError):
    pass


class LevelGraph:
    """Finite weighted graph; conductances strictly positive.

    Parallel edges are merged on construction (conductances add); self loops
    are rejected.  Immutable once built; factorizations are cached.
    """

    def __init__(self, n: int, edges: Iterable[Tuple[int, int, float]],
                 coords: Optional[np.ndarray] = None,
                 vertex_measure: Optional[np.ndarray] = None,
                 labels: Optional[Sequence] = None):
        self.n = int(n)
        acc: Dict[Tuple[int, int], float] = {}
        for u, v, c in edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError("self loop")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValueError("edge endpoint out of range")
            if c <= 0:
                raise ValueError("conductance must be positive")
            key = (u, v) if u < v else (v, u)
            acc[key] = acc.get(key, 0.0) + float(c)
        keys = sorted(acc)
        self.edge_u = np.array([k[0] for k in keys], dtype=np.int64)
        self.edge_v = np.array([k[1] for k in keys], dtype=np.int64)
        self.conductance = np.array([acc[k] for k in keys], dtype=np.float64)
        self.coords = None if coords is None else np.asarray(coords, dtype=np.float64)
        self.vertex_measure = None if vertex_measure is None else np.asarray(vertex_measure, dtype=np.float64)
        self.labels = list(labels) if labels is not None else None
        self._lap: Optional[sp.csr_matrix] = None
        self._grounded: Dict[int, object] = {}
        self._components: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return len(self.edge_u)

    def laplacian(self) -> sp.csr_matrix:
        if self._lap is None:
            u, v, c = self.edge_u, self.edge_v, self.conductance
            rows = np.concatenate([u, v, u, v])
            cols = np.concatenate([v, u, u, v])
            vals = np.concatenate([-c, -c, c, c])
            self._lap = sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))
        return self._lap

    def components(self) -> np.ndarray:
        if self._components is None:
            adj = sp.csr_matrix(
                (np.ones(2 * self.m), (np.concatenate([self.edge_u, self.edge_v]),
                                       np.concatenate([self.edge_v, self.edge_u]))),
                shape=(self.n, self.n))
            _, labels = csgraph.connected_components(adj, directed=False)
            self._components = labels
        return self._components

    def is_connected(self) -> bool:
        return self.n <= 1 or int(self.components().max()) == 0

    def grounded_solver(self, ground: int = 0) -> "_Grounded":
        if ground not in self._grounded:
            self._grounded[ground] = _Grounded(self, ground)
        return self._grounded[ground]

    def merged(self, groups: Sequence[Sequence[int]]) -> Tuple["LevelGraph", np.ndarray]:
        """Identify each vertex group to a single vertex (exact set queries).

        Returns the quotient graph and the vertex -> quotient-vertex map.
        Edges interior to a group vanish; parallel edges add.
        """
        mapping = np.full(self.n, -1, dtype=np.int64)
        for gi, grp in enumerate(groups):
            for v in grp:
                if mapping[v] != -1:
                    raise ValueError("merge groups overlap")
                mapping[v] = gi
        nxt = len(groups)
        for v in range(self.n):
            if mapping[v] == -1:
                mapping[v] = nxt
                nxt += 1
        edges = []
        for u, v, c in zip(self.edge_u, self.edge_v, self.conductance):
            mu, mv = int(mapping[u]), int(mapping[v])
            if mu != mv:
                edges.append((mu, mv, float(c)))
        return LevelGraph(nxt, edges), mapping

    def subgraph(self, vertices: Sequence[int]) -> Tuple["LevelGraph", np.ndarray]:
        vertices = np.asarray(sorted(set(int(v) for v in vertices)), dtype=np.int64)
        pos = {int(v): i for i, v in enumerate(vertices)}
        edges = []
        for u, v, c in zip(self.edge_u, self.edge_v, self.conductance):
            if int(u) in pos and int(v) in pos:
                edges.append((pos[int(u)], pos[int(v)], float(c)))
        g = LevelGraph(len(vertices), edges,
                       coords=None if self.coords is None else self.coords[vertices])
        return g, vertices


class _Grounded:
    """Factorization of the Laplacian with one vertex grounded."""

    def __init__(self, g: LevelGraph, ground: int):
        if not g.is_connected():
            raise SolverError("grounded solve on a disconnected graph")
        self.g = g
        self.ground = ground
        self.keep = np.concatenate([np.arange(ground), np.arange(ground + 1, g.n)])
        lap = g.laplacian().tocsc()
        self.lap_g = lap[self.keep][:, self.keep]
        self._lu = None
        self._use_direct = g.n <= SPARSE_DIRECT_LIMIT
        if self._use_direct:
            try:
                self._lu = spla.splu(self.lap_g.tocsc())
            except RuntimeError as exc:  # singular pivot
                raise SolverError(f"sparse factorization failed: {exc}") from exc

    def solve(self, rhs_full: np.ndarray) -> np.ndarray:
        """Solve L u = rhs with u[ground] = 0; rhs indexed on all vertices."""
        b = rhs_full[self.keep]
        if self._use_direct:
            x = self._lu.solve(b)
        else:
            M = sp.diags(1.0 / self.lap_g.diagonal())
            x, info = spla.cg(self.lap_g, b, rtol=1e-12, atol=0.0, maxiter=20000, M=M)
            if info != 0:
                raise SolverError(f"CG did not converge (info={info})")
        nb = float(np.linalg.norm(b))
        if nb > 0:
            res = float(np.linalg.norm(self.lap_g @ x - b)) / nb
            if res > RESIDUAL_TOL:
                x = x + self._lu.solve(b - self.lap_g @ x) if self._use_direct else x
                res = float(np.linalg.norm(self.lap_g @ x - b)) / nb
                if res > RESIDUAL_TOL:
                    raise SolverError(f"solve residual {res:.3e} above {RESIDUAL_TOL}")
        u = np.zeros(self.g.n)
        u[self.keep] = x
        return u

    def pair_resistance(self, x: int, y: int) -> float:
        if x == y:
            return 0.0
        rhs = np.zeros(self.g.n)
        rhs[x] += 1.0
        rhs[y] -= 1.0
        u = self.solve(rhs)
        return float(u[x] - u[y])


@dataclass
class ResistanceValue:
    value: float
    flag: str = "ok"          # "ok" | "infinite"
    potential: Optional[np.ndarray] = None

    @property
    def finite(self) -> bool:
        return self.flag == "ok"


@dataclass
class UnitFlow:
    edge_u: np.ndarray
    edge_v: np.ndarray
    flow: np.ndarray          # flow from edge_u to edge_v
    source: Tuple[int, ...]
    sink: Tuple[int, ...]
    energy: float

    def node_balance(self, n: int) -> np.ndarray:
        bal = np.zeros(n)
        np.add.at(bal, self.edge_u, self.flow)
        np.add.at(bal, self.edge_v, -self.flow)
        return bal


def _check_sets(g: LevelGraph, A: Sequence[int], B: Sequence[int]) -> Tuple[List[int], List[int]]:
    A = sorted(set(int(a) for a in A))
    B = sorted(set(int(b) for b in B))
    if not A or not B:
        raise ValueError("empty terminal set")
    if set(A) & set(B):
        raise ValueError("terminal sets intersect")
    for v in A + B:
        if not 0 <= v < g.n:
            raise ValueError("terminal vertex out of range")
    return A, B


def eff_resistance(g: LevelGraph, A: Sequence[int], B: Sequence[int],
                   return_potential: bool = False) -> ResistanceValue:
    """Resistance between vertex sets, by identification and a grounded solve.

    Disconnected queries return a tagged infinite value rather than raising.
    """
    A, B = _check_sets(g, A, B)
    comp = g.components()
    if len({int(comp[v]) for v in A + B}) > 1:
        return ResistanceValue(float("inf"), "infinite")
    merged, mapping = g.merged([A, B])
    sub_ids = np.where(merged.components() == merged.components()[0])[0]
    if 1 not in set(int(s) for s in sub_ids):
        return ResistanceValue(float("inf"), "infinite")
    solver = merged.grounded_solver(ground=1)  # ground the B supernode
    rhs = np.zeros(merged.n)
    rhs[0] = 1.0
    rhs[1] = -1.0
    u = solver.solve(rhs)
    value = float(u[0])
    pot = None
    if return_potential:
        pot = u[mapping] / value if value > 0 else u[mapping]
        # normalized so A sits at 1 and B at 0
    return ResistanceValue(value, "ok", potential=pot)


def trace(g: LevelGraph, S: Sequence[int], column_block: int = 256) -> LevelGraph:
    """Trace onto S: Schur complement of the Laplacian, exact on resistances.

    The result's labels carry the original vertex ids of S.
    """
    S = sorted(set(int(s) for s in S))
    if not S:
        raise ValueError("trace onto the empty set")
    if not g.is_connected():
        raise ValueError("trace requires a connected graph")
    s_mask = np.zeros(g.n, dtype=bool)
    s_mask[S] = True
    I = np.where(~s_mask)[0]
    Sarr = np.array(S, dtype=np.int64)
    lap = g.laplacian().tocsc()
    L_SS = lap[Sarr][:, Sarr].toarray()
    if len(I) == 0:
        schur = L_SS
    else:
        L_II = lap[I][:, I].tocsc()
        L_IS = lap[I][:, Sarr].tocsc()
        try:
            lu = spla.splu(L_II)
        except RuntimeError as exc:
            raise SolverError(f"non-SPD pivot on the eliminated block ({len(I)} vertices): {exc}") from exc
        schur = L_SS.astype(np.float64).copy()
        L_SI = L_IS.T.tocsr()
        for lo in range(0, len(S), column_block):
            hi = min(lo + column_block, len(S))
            X = lu.solve(L_IS[:, lo:hi].toarray())
            schur[:, lo:hi] -= L_SI @ X
    scale = float(np.abs(np.diag(schur)).max()) if len(S) else 1.0
    edges = []
    bad = 0.0
    for i in range(len(S)):
        row = schur[i]
        for j in range(i + 1, len(S)):
            c = -row[j]
            if c > 1e-13 * scale:
                edges.append((i, j, float(c)))
            elif c < -1e-10 * scale:
                bad = max(bad, float(-c))
    if bad > 0:
        raise SolverError(f"Schur complement produced a positive off-diagonal {bad:.3e} (scale {scale:.3e})")
    coords = None if g.coords is None else g.coords[Sarr]
    out = LevelGraph(len(S), edges, coords=coords, labels=[int(s) for s in S])
    return out


def resistance_weights(g_traced: LevelGraph, tol: float = 1e-10) -> np.ndarray:
    """Dense weight table mu_{x,y} of a finite form: conductances off the
    diagonal, negative row sums on it.  Rows sum to zero by construction."""
    n = g_traced.n
    mu = np.zeros((n, n))
    for u, v, c in zip(g_traced.edge_u, g_traced.edge_v, g_traced.conductance):
        mu[u, v] += c
        mu[v, u] += c
    scale = mu.max() if mu.size else 1.0
    if np.any(mu < -tol * max(scale, 1.0)):
        raise SolverError("negative resistance weight beyond tolerance")
    np.fill_diagonal(mu, 0.0)
    np.fill_diagonal(mu, -mu.sum(axis=1))
    return mu


def min_energy_flow(g: LevelGraph, A: Sequence[int], B: Sequence[int]) -> Tuple[UnitFlow, float]:
    """Optimal unit flow from A to B and its energy (= effective resistance)."""
    A, B = _check_sets(g, A, B)
    res = eff_resistance(g, A, B, return_potential=True)
    if not res.finite:
        raise ValueError("terminals are disconnected; no unit flow exists")
    u = res.potential  # 1 on A, 0 on B
    du = u[g.edge_u] - u[g.edge_v]
    raw = g.conductance * du
    # unit potential drop drives total current 1/R; rescale to unit flux
    flow = raw * res.value
    energy = float(np.sum(flow * flow / g.conductance))
    uf = UnitFlow(g.edge_u.copy(), g.edge_v.copy(), flow, tuple(A), tuple(B), energy)
    return uf, energy


def resistance_vector(g: LevelGraph, x: int, dense_cap: int = 4000) -> np.ndarray:
    """R(x, z) for every z, from the diagonal of the inverse grounded at x."""
    if g.n > dense_cap:
        raise ValueError(f"resistance_vector is dense-only (n={g.n} > {dense_cap})")
    lap = g.laplacian().toarray()
    keep = [v for v in range(g.n) if v != x]
    inv = np.linalg.inv(lap[np.ix_(keep, keep)])
    out = np.zeros(g.n)
    out[keep] = np.diag(inv)
    return out


def localized_resistance(g: LevelGraph, x: int, y: int, alpha: float,
                         dense_cap: int = 4000) -> dict:
    """Resistance between x and y inside the resistance ball B(x, alpha*R(x,y)).

    Reports the ratio to the global value; a disconnected ball yields an
    infinite ratio, flagged.
    """
    if x == y:
        raise ValueError("localized resistance needs distinct vertices")
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    rvec = resistance_vector(g, x, dense_cap=dense_cap)
    r_global = float(rvec[y])
    radius = alpha * r_global
    ball = [v for v in range(g.n) if v == x or rvec[v] < radius]
    sub, ids = g.subgraph(ball)
    pos = {int(v): i for i, v in enumerate(ids)}
    res = eff_resistance(sub, [pos[x]], [pos[y]])
    if not res.finite:
        return {"global": r_global, "local": float("inf"), "ratio": float("inf"),
                "flag": "disconnected-ball", "ball_size": len(ball)}
    return {"global": r_global, "local": res.value, "ratio": res.value / r_global,
            "flag": "ok", "ball_size": len(ball)}


def traced_cross_weight(g: LevelGraph, S: Sequence[int], S1: Sequence[int],
                        S2: Sequence[int]) -> float:
    """Sum of traced weights mu_{x,y} over S1 x S2 without materializing the
    Schur complement: one linear solve against the indicator of S2."""
    S = sorted(set(int(s) for s in S))
    set_s = set(S)
    S1 = [v for v in S1 if v in set_s]
    S2 = [v for v in S2 if v in set_s]
    if set(S1) & set(S2):
        raise ValueError("cross-weight sets overlap")
    pos = {v: i for i, v in enumerate(S)}
    Sarr = np.array(S, dtype=np.int64)
    s_mask = np.zeros(g.n, dtype=bool)
    s_mask[Sarr] = True
    I = np.where(~s_mask)[0]
    lap = g.laplacian().tocsc()
    ind2 = np.zeros(len(S))
    ind2[[pos[v] for v in S2]] = 1.0
    L_SS = lap[Sarr][:, Sarr]
    w = L_SS @ ind2
    if len(I):
        L_IS = lap[I][:, Sarr].tocsc()
        lu = spla.splu(lap[I][:, I].tocsc())
        w = w - L_IS.T @ lu.solve(L_IS @ ind2)
    ind1 = np.zeros(len(S))
    ind1[[pos[v] for v in S1]] = 1.0
    return float(-(ind1 @ w))


def cross_weight_decay(h, a1_words: Sequence[Tuple[int, ...]],
                       a2_words: Sequence[Tuple[int, ...]],
                       levels: Sequence[int],
                       base_level: Optional[int] = None) -> dict:
    """Traced cross-weights between two non-adjacent cell unions, per level.

    The underlying form is the corner graph one level below the deepest
    requested trace (or `base_level`); each entry traces it onto the level-n
    corner vertices and sums the weights across the two unions.
    """
    from .cornergraph import corner_graph, corner_vertices_at_level

    levels = sorted(set(int(n) for n in levels))
    if not levels:
        raise ValueError("no levels requested")
    N = base_level if base_level is not None else max(levels) + 1
    if levels[-1] >= N:
        raise ValueError("trace level must stay below the base level")

    boxes1 = [_word_box(h, w) for w in a1_words]
    boxes2 = [_word_box(h, w) for w in a2_words]
    for b1 in boxes1:
        for b2 in boxes2:
            if _boxes_touch(b1, b2):
                raise ValueError("cell unions are adjacent; positive-distance precondition fails")

    cg = corner_graph(h.schedule, N, 0)
    sums = []
    for n in levels:
        S = corner_vertices_at_level(cg, n)
        S1 = [v for v in S if _vertex_in_boxes(cg, v, boxes1, N)]
        S2 = [v for v in S if _vertex_in_boxes(cg, v, boxes2, N)]
        if not S1 or not S2:
            raise ValueError(f"no level-{n} corner vertices inside a union")
        sums.append(traced_cross_weight(cg.graph, S, S1, S2))
    return {"levels": levels, "cross_weights": sums, "base_level": N}


def _word_box(h, word: Tuple[int, ...]) -> Tuple[int, int, int]:
    n = len(word)
    i = h.index_of(tuple(word))
    return h.cell_box(n, i)


def _boxes_touch(b1: Tuple[int, int, int], b2: Tuple[int, int, int]) -> bool:
    ix1, iy1, s1 = b1
    ix2, iy2, s2 = b2
    s = np.lcm(s1, s2)
    f1, f2 = s // s1, s // s2
    x_gap = max(ix2 * f2 - (ix1 + 1) * f1, ix1 * f1 - (ix2 + 1) * f2)
    y_gap = max(iy2 * f2 - (iy1 + 1) * f1, iy1 * f1 - (iy2 + 1) * f2)
    return x_gap <= 0 and y_gap <= 0


def _vertex_in_boxes(cg, v: int, boxes, N: int) -> bool:
    gx, gy = cg.grid[v]
    for ix, iy, s in boxes:
        f = 3 ** N // s
        if ix * f <= gx <= (ix + 1) * f and iy * f <= gy <= (iy + 1) * f:
            return True
    return False


# -- oracles ---------------------------------------------------------------

def pinv_resistance(g: LevelGraph, A: Sequence[int], B: Sequence[int]) -> float:
    """Dense pseudo-inverse oracle for the set resistance (merge, then pinv)."""
    A, B = _check_sets(g, A, B)
    merged, _ = g.merged([A, B])
    lap = merged.laplacian().toarray()
    plus = np.linalg.pinv(lap)
    return float(plus[0, 0] - 2 * plus[0, 1] + plus[1, 1])


# -- CSV interfaces ---------------------------------------------------------

def graph_from_csv(path: str) -> LevelGraph:
    edges = []
    top = -1
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [c.strip() for c in header] != ["u", "v", "conductance"]:
            raise ValueError("expected header u,v,conductance")
        for row in reader:
            u, v, c = int(row[0]), int(row[1]), float(row[2])
            top = max(top, u, v)
            edges.append((u, v, c))
    return LevelGraph(top + 1, edges)


def graph_to_csv(g: LevelGraph, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "v", "conductance"])
        for u, v, c in zip(g.edge_u, g.edge_v, g.conductance):
            writer.writerow([int(u), int(v), f"{c:.17g}"])


def results_to_csv(rows: Sequence[Tuple[str, float, str]], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "value", "flag"])
        for qid, value, flag in rows:
            writer.writerow([qid, f"{value:.17g}", flag])
