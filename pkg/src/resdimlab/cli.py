"""Configuration-driven experiment runner.

Each subcommand materializes its artifacts (CSV/JSON) in the output
directory together with a manifest that lists every executed check with a
stable id and a pass flag.  Exit code 0 means every executed check passed.
Floats are formatted with 17 significant digits so identical configs give
identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import hierarchy as hmod
from . import measure as mmod
from . import mixedcarpet as xmod
from . import penergy as pmod
from . import resnet as rmod

__all__ = ["ExperimentConfig", "run", "main"]


def _fmt(x) -> object:
    if isinstance(x, float):
        if math.isnan(x) or math.isinf(x):
            return None
        return float(f"{x:.17g}")
    return x


def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return _fmt(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return _fmt(obj)


@dataclass
class ExperimentConfig:
    command: str
    structure: str = "sc"
    depth: int = 3
    n: int = 2
    m: int = 0
    pair: str = "corners"
    kmax: int = 4
    p_grid: List[float] = field(default_factory=lambda: [1.5, 2.0])
    seed: int = 0
    out: str = "resdimlab_out"
    report: str = "gap"
    f_table: Optional[List[int]] = None
    quick: bool = False

    CAPS = {"depth": 7, "n": 7, "kmax": 6}

    def validate(self) -> None:
        if self.command not in ("build", "resist", "penergy", "dims", "heat", "mixed", "validate"):
            raise ValueError(f"unknown command {self.command!r}")
        if self.depth < 0 or self.depth > self.CAPS["depth"]:
            raise ValueError(f"depth must be in 0..{self.CAPS['depth']}")
        if self.n < 0 or self.n > self.CAPS["n"]:
            raise ValueError(f"n must be in 0..{self.CAPS['n']}")
        if self.kmax < 1 or self.kmax > self.CAPS["kmax"]:
            raise ValueError(f"kmax must be in 1..{self.CAPS['kmax']}")
        if any(p < 1 for p in self.p_grid):
            raise ValueError("p grid entries must be >= 1")

    def schedule(self) -> hmod.Schedule:
        if self.f_table is not None:
            return hmod.Schedule.from_table(self.f_table)
        return hmod.Schedule.by_name(self.structure)


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_sanitize(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def _check(cid: str, description: str, value, ok: bool) -> dict:
    return {"id": cid, "description": description, "value": _fmt(value), "pass": bool(ok)}


# -- commands ----------------------------------------------------------------

def _cmd_build(cfg: ExperimentConfig, outdir: str) -> List[dict]:
    h = hmod.build_hierarchy(cfg.schedule(), cfg.depth)
    params = hmod.validate_framework(h)
    h.export_cells(os.path.join(outdir, f"cells_level{cfg.depth}.json"), cfg.depth)
    h.export_edges_csv(os.path.join(outdir, "edges.csv"), range(cfg.depth + 1))
    _write_json(os.path.join(outdir, "framework.json"), {
        "zeta": str(params.zeta), "xi": str(params.xi), "m_star": params.m_star,
        "l_star": params.l_star, "n_star": params.n_star,
        "diam_ratio": params.diam_ratio, "b3_band": list(params.b3_band),
        "b3_band_ratio": params.b3_band_ratio, "violations": params.violations,
    })
    expected = 1
    for n in range(1, cfg.depth + 1):
        expected *= h.schedule.branching(n)
    return [
        _check("hierarchy-partition-count", "cell count equals branching product",
               h.levels[cfg.depth].count, h.levels[cfg.depth].count == expected),
        _check("hierarchy-b1-diam", "diameter ratio is sqrt(2) exactly",
               params.diam_ratio, abs(params.diam_ratio - math.sqrt(2)) < 1e-15),
        _check("hierarchy-framework-violations", "no framework violations",
               len(params.violations), not params.violations),
        _check("hierarchy-b3-band", "chain comparison band is finite",
               params.b3_band_ratio, math.isfinite(params.b3_band_ratio)),
    ]


def _cmd_resist(cfg: ExperimentConfig, outdir: str) -> List[dict]:
    sched = cfg.schedule()
    cache = xmod.ScaleCache(sched)
    rows = []
    for n in range(1, cfg.n + 1):
        s = cache.scales(n, 0)
        rows.append({"n": n, "m": 0, "TB": s.tb, "Pt": s.pt, "k1": s.k1, "k2": s.k2})
    xmod.scales_to_csv(rows, os.path.join(outdir, "scales.csv"))
    queries = [(f"pt-{r['n']}", r["Pt"], "ok") for r in rows]
    if cfg.pair == "tb":
        queries = [(f"tb-{r['n']}", r["TB"], "ok") for r in rows]
    rmod.results_to_csv(queries, os.path.join(outdir, "queries.csv"))
    checks = [
        _check("mixed-pt-ge-tb", "(Pt) >= (TB) on every computed pair",
               min(r["Pt"] - r["TB"] for r in rows),
               all(r["Pt"] >= r["TB"] - 1e-9 for r in rows)),
        _check("mixed-pt-monotone", "(Pt)_n strictly increasing",
               rows[-1]["Pt"],
               all(b["Pt"] > a["Pt"] for a, b in zip(rows, rows[1:]))),
    ]
    if sched.name == "vicsek":
        err = max(abs(r["Pt"] - 3.0 ** r["n"]) / 3.0 ** r["n"] for r in rows)
        checks.append(_check("mixed-vicsek-purity", "(Pt)_k = 3^k within 1e-6", err, err <= 1e-6))
    return checks


def _cmd_penergy(cfg: ExperimentConfig, outdir: str) -> List[dict]:
    h = hmod.build_hierarchy(cfg.schedule(), cfg.depth)
    kmax = min(cfg.kmax, cfg.depth - 1)
    rows = []
    for p in cfg.p_grid:
        for k in range(1, kmax + 1):
            out = pmod.sup_energy(h, 1, k, p)
            rows.append({"p": p, "k": k, "sup_energy": out["value"],
                         "argmax_cell": out["argmax_cell"]})
    pmod.rate_table_to_csv(rows, os.path.join(outdir, "rates.csv"))
    est = pmod.p_spectral_dims(h, 2.0, kmax)
    _write_json(os.path.join(outdir, "p_spectral.json"), {
        "p": est.p, "rate_ls": est.rate_ls, "rate_limsup": est.rate_limsup,
        "rate_liminf": est.rate_liminf, "n_star": est.n_star,
        "dim_upper": est.dim_upper, "dim_lower": est.dim_lower, "flag": est.flag,
    })
    # p = 2 energy equals effective conductance on the same graph
    prob = None
    for w in range(h.levels[1].count):
        cand = pmod.build_separation(h, 1, w, min(2, kmax))
        if not cand.empty_outer:
            prob = cand
            break
    if prob is None:
        raise RuntimeError("no level-1 cell has a nonempty outer set")
    e2 = pmod.p_energy(prob, 2.0).value
    g = rmod.LevelGraph(prob.n_cells, [(int(u), int(v), 1.0) for u, v in prob.edges])
    cond = 1.0 / rmod.eff_resistance(g, list(prob.inner), list(prob.outer)).value
    mono_ok = True
    prev = None
    for p in sorted(set(cfg.p_grid)):
        v = pmod.p_energy(prob, p).value
        if prev is not None and v > prev + 1e-9:
            mono_ok = False
        prev = v
    return [
        _check("penergy-p2-conductance", "p=2 energy equals effective conductance",
               abs(e2 - cond), abs(e2 - cond) <= 1e-9 * max(cond, 1.0)),
        _check("penergy-monotone-p", "energies nonincreasing in p", prev, mono_ok),
        _check("penergy-dims-finite", "p-spectral dimensions finite",
               est.dim_upper, math.isfinite(est.dim_upper) and math.isfinite(est.dim_lower)),
    ]


def _cmd_dims(cfg: ExperimentConfig, outdir: str) -> List[dict]:
    from .heat import build_form, ol_ds_heat
    sched = cfg.schedule()
    depth = cfg.depth
    h = hmod.build_hierarchy(sched, max(depth + 1, cfg.kmax + 1))
    meas = mmod.hier_measure(h)
    cache = xmod.ScaleCache(sched)
    pt = [cache.pt(n, 0) for n in range(1, depth + 1)]
    zeta_log = math.log(pt[-1] / pt[-2]) if len(pt) >= 2 else math.log(3.0)
    vol = mmod.olds_volume(meas, zeta_log, window=list(range(1, depth + 1)), seed=cfg.seed)
    est = pmod.p_spectral_dims(h, 2.0, min(cfg.kmax, h.depth - 1))
    d2s = 2.0 / (1.0 - est.rate_ls / math.log(est.n_star))
    form = build_form(h, depth, meas, pt[-1])
    heat = ol_ds_heat(form)
    profile_level = min(depth, 3)
    prof = mmod.h_profile(meas, cache.graph(profile_level, 0),
                          cache.pt(profile_level, 0))
    mmod.profiles_to_csv(prof["rows"], os.path.join(outdir, "profiles.csv"))
    _write_json(os.path.join(outdir, "dims.json"), {
        "structure": sched.name, "depth": depth,
        "volume_ds": vol["ds_estimate"], "volume_ds_sup_window": vol["ds_sup_window"],
        "heat_ds": heat["estimate"], "d2s": d2s,
        "zeta_r_log": zeta_log, "pt_table": pt,
    })
    vals = [vol["ds_estimate"], heat["estimate"], d2s]
    return [
        _check("measure-h-monotone", "h profile nondecreasing with gamma2 fitted",
               prof["gamma2"], prof["monotone"] and prof["gamma2"] is not None),
        _check("dims-below-2", "every dimension estimate < 2", max(vals),
               all(v < 2.0 for v in vals)),
        _check("heat-volume-agree", "heat and volume routes within 0.1",
               abs(heat["estimate"] - vol["ds_estimate"]),
               abs(heat["estimate"] - vol["ds_estimate"]) <= 0.1),
        _check("d2s-vs-heat", "d2s <= heat ds + 0.1",
               d2s - heat["estimate"], d2s <= heat["estimate"] + 0.1),
    ]


def _cmd_heat(cfg: ExperimentConfig, outdir: str) -> List[dict]:
    from .heat import (build_form, form_from_graph, ol_ds_heat, time_window,
                       chapman_kolmogorov_error)
    sched = cfg.schedule()
    h = hmod.build_hierarchy(sched, cfg.depth)
    meas = mmod.hier_measure(h)
    cache = xmod.ScaleCache(sched)
    form = build_form(h, cfg.depth, meas, cache.pt(cfg.depth, 0))
    t_lo, t_hi, t_mix = time_window(form)
    times = np.geomspace(t_lo / 8, t_mix * 2, 40)
    P = form.p_diag(times)
    rng = np.random.default_rng(cfg.seed)
    xs = rng.integers(0, form.graph.n, size=min(10, form.graph.n))
    with open(os.path.join(outdir, "heat_curves.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "x_id", "t", "p"])
        for x in xs:
            for t, p in zip(times, P[int(x)]):
                writer.writerow([cfg.depth, int(x), f"{t:.17g}", f"{p:.17g}"])
    floor = 1.0 / form.total_mass
    ck = chapman_kolmogorov_error(form, n_samples=10, seed=cfg.seed)
    est = ol_ds_heat(form)
    _write_json(os.path.join(outdir, "heat_estimate.json"), {
        "structure": sched.name, "level": cfg.depth, "estimate": est["estimate"],
        "window": list(est["window"]), "flag": est["flag"],
    })
    two = form_from_graph(rmod.LevelGraph(2, [(0, 1, 1.0)]), [0.5, 0.5])
    terr = max(abs(v - (1 + math.exp(-4 * t)))
               for t, v in zip(times[:10], two.p_diag(times[:10], xs=[0])[0]))
    return [
        _check("heat-monotone", "p(t,x,x) strictly decreasing",
               float(np.max(np.diff(P, axis=1))), bool(np.all(np.diff(P, axis=1) < 0))),
        _check("heat-floor", "p >= 1/mu(X) - 1e-10", float(P.min() - floor),
               bool(P.min() >= floor - 1e-10)),
        _check("heat-chapman-kolmogorov", "CK identity within 1e-8", ck, ck <= 1e-8),
        _check("heat-two-state", "two-state closed form within 1e-12", terr, terr <= 1e-12),
    ]


def _cmd_mixed(cfg: ExperimentConfig, outdir: str) -> List[dict]:
    sched = hmod.Schedule.mixed()
    cache = xmod.ScaleCache(sched)
    n_max = min(cfg.depth, 5)
    ch = xmod.chain_check(sched, n_max, pair_samples=25, seed=cfg.seed, cache=cache)
    xmod.scales_to_csv(ch["table"], os.path.join(outdir, "scales.csv"))
    fit = xmod.evres_fit(n_max=n_max, caches={"mixed": cache})
    d4 = xmod.qs_diagnostic(sched, n_max - 1, samples=250, seed=cfg.seed, cache=cache)
    d5 = xmod.qs_diagnostic(sched, n_max, samples=250, seed=cfg.seed, cache=cache,
                            triples=d4.triples)
    drift = xmod.qs_envelope_drift(d4, d5)
    xmod.envelope_to_csv(d5, os.path.join(outdir, "envelope.csv"))
    checks = [
        _check("mixed-chain-finite", "chaining constants finite",
               max(ch["constants"].values()),
               all(math.isfinite(v) for v in ch["constants"].values())),
        _check("mixed-pt-ge-tb", "(Pt) >= (TB) on every pair", ch["pt_ge_tb"], ch["pt_ge_tb"]),
        _check("mixed-product-model-residual", "product-model residual within the fitted band",
               fit["max_abs_residual"],
               fit["max_abs_residual"] <= fit["band_log_width"] + 1e-9),
        _check("mixed-vicsek-purity", "pure plus-sign factor = 3 within 1e-6",
               fit["vicsek_factor_error"], fit["vicsek_factor_error"] <= 1e-6),
        _check("mixed-qs-drift", "envelope drift <= 10% between the top levels",
               drift, drift <= 0.10),
        _check("mixed-rho-hat-recorded", "stabilized carpet resistance factor",
               fit["rho_hat"], math.isfinite(fit["rho_hat"])),
    ]
    if cfg.report == "gap":
        rep = xmod.gap_report(seed=cfg.seed, caches={"mixed": cache})
        with open(os.path.join(outdir, "dim_report.json"), "w") as fh:
            fh.write(rep.to_json())
        checks.extend(_check(c["id"], c["description"], c["value"], c["pass"])
                      for c in rep.checks)
    return checks


def _cmd_validate(cfg: ExperimentConfig, outdir: str) -> List[dict]:
    checks: List[dict] = []
    for sub, override in (("build", {"structure": "sc", "depth": 3}),
                          ("resist", {"structure": "vicsek", "n": 3}),
                          ("heat", {"structure": "vicsek", "depth": 2}),
                          ("penergy", {"structure": "vicsek", "depth": 4,
                                       "kmax": 3, "p_grid": [1.5, 2.0]})):
        sub_cfg = ExperimentConfig(command=sub, seed=cfg.seed, out=cfg.out, **override)
        sub_cfg.validate()
        subdir = os.path.join(outdir, sub)
        os.makedirs(subdir, exist_ok=True)
        checks.extend(_COMMANDS[sub](sub_cfg, subdir))
    # exact electrical identities
    g = rmod.LevelGraph(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)])
    r_cycle = rmod.eff_resistance(g, [0], [2]).value
    path = rmod.LevelGraph(3, [(0, 1, 1.0), (1, 2, 1.0)])
    tr = rmod.trace(path, [0, 2])
    checks.append(_check("resnet-exact-identities",
                         "4-cycle corner resistance 1 and series trace 1/2",
                         max(abs(r_cycle - 1.0), abs(tr.conductance[0] - 0.5)),
                         abs(r_cycle - 1.0) <= 1e-10 and abs(tr.conductance[0] - 0.5) <= 1e-10))
    return checks


_COMMANDS = {
    "build": _cmd_build,
    "resist": _cmd_resist,
    "penergy": _cmd_penergy,
    "dims": _cmd_dims,
    "heat": _cmd_heat,
    "mixed": _cmd_mixed,
    "validate": _cmd_validate,
}


def run(cfg: ExperimentConfig) -> dict:
    """Execute one command; returns the manifest (also written to disk)."""
    cfg.validate()
    outdir = cfg.out
    os.makedirs(outdir, exist_ok=True)
    checks = _COMMANDS[cfg.command](cfg, outdir)
    manifest = {
        "command": cfg.command,
        "config": {k: _fmt(v) for k, v in vars(cfg).items() if v is not None},
        "checks": checks,
        "all_pass": all(c["pass"] for c in checks),
    }
    _write_json(os.path.join(outdir, "manifest.json"), manifest)
    return manifest


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="resdimlab",
                                 description="resistance and dimension estimators on "
                                             "square-based self-similar hierarchies")
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--structure", default=None, choices=["sc", "vicsek", "mixed"])
    common.add_argument("--depth", type=int, default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None)
    common.add_argument("--kmax", type=int, default=None)
    sub.add_parser("build", parents=[common])
    rp = sub.add_parser("resist", parents=[common])
    rp.add_argument("--n", type=int, default=None)
    rp.add_argument("--pair", default=None, choices=["corners", "tb"])
    pp = sub.add_parser("penergy", parents=[common])
    pp.add_argument("--p-grid", default=None, help="comma separated exponents")
    sub.add_parser("dims", parents=[common])
    sub.add_parser("heat", parents=[common])
    mp = sub.add_parser("mixed", parents=[common])
    mp.add_argument("--report", default=None, choices=["gap", "none"])
    vp = sub.add_parser("validate", parents=[common])
    vp.add_argument("--quick", action="store_true")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    payload: Dict[str, object] = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            payload.update(json.load(fh))
    payload["command"] = args.command
    for key in ("structure", "depth", "seed", "out", "kmax", "n", "pair", "report", "quick"):
        val = getattr(args, key, None)
        if val is not None and val is not False:
            payload[key] = val
    if getattr(args, "p_grid", None):
        payload["p_grid"] = [float(p) for p in args.p_grid.split(",")]
    env_out = os.environ.get("RESDIMLAB_OUT")
    if env_out and "out" not in payload:
        payload["out"] = env_out
    cfg = ExperimentConfig(**payload)  # type: ignore[arg-type]
    try:
        manifest = run(cfg)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"command": manifest["command"],
                      "all_pass": manifest["all_pass"],
                      "checks": len(manifest["checks"])}))
    return 0 if manifest["all_pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
