"""Command-line driver: synth, register, report, coverage, selftest.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 invariant violation (RMSE regression).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np
from scipy import stats

from .core import RigidTransform
from .io import (DataError, dumps_line, load_pair, manifest_header, read_manifest, read_results,
                 results_header, write_pair_files)
from .metrics import R_COV, directional_coverage
from .pipeline import METHODS, GateConfig
from .synthbench.bench import TAUS, ScanRecord, evaluate_pair, summarize
from .synthbench.pairs import PROTOCOL_A, PROTOCOL_B, JitterSpec, make_site_pairs
from .synthbench.scene import PRESETS, SceneError, format_scene_config, parse_scene_config, preset

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_REGRESSION = 0, 1, 2, 3

log = logging.getLogger("rgsr")


class ConfigError(Exception):
    pass


# -- synth ------------------------------------------------------------------------------------

def _scene_spec(args, site: int):
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        base = parse_scene_config(text)
        return base.replace(rng_seed=base.rng_seed + site)
    return preset(args.preset, args.seed + site)


def _jitter(args) -> JitterSpec:
    return JitterSpec(xy_range=args.jitter_xy, yaw_range=math.radians(args.jitter_yaw), seed=args.jitter_seed,
                      protocol=args.protocol)


def cmd_synth(args) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"{out}: {exc}") from exc
    jitter = _jitter(args)
    entries, configs = [], []
    for site in range(args.sites):
        spec = _scene_spec(args, site)
        if args.n_scans:
            spec = spec.replace(n_scans=args.n_scans)
        configs.append(format_scene_config(spec))
        _, pairs = make_site_pairs(spec, jitter, spec.n_scans, first_index=site * spec.n_scans)
        for pair in pairs:
            entries.append(write_pair_files(pair, out, jitter, args.format))
    header = manifest_header("\n".join(configs), len(entries),
                             {"protocol": jitter.protocol, "jitter_seed": jitter.seed,
                              "jitter_xy": jitter.xy_range, "jitter_yaw_deg": math.degrees(jitter.yaw_range)})
    with open(out / "manifest.jsonl", "w", encoding="utf-8") as f:
        f.write(dumps_line(header) + "\n")
        for e in entries:
            f.write(dumps_line(e) + "\n")
    print(f"wrote {len(entries)} pairs to {out / 'manifest.jsonl'}")
    return EXIT_OK


# -- register ---------------------------------------------------------------------------------

def _gates(args) -> GateConfig:
    try:
        return GateConfig(tau_g=args.tau_g, r_eval=args.r_eval, reverse=not args.no_reverse)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _register_one(job):
    entry, base, method, gates = job
    t0 = time.perf_counter()
    try:
        pair = load_pair(entry, base)
        rec = evaluate_pair(pair, method, gates).to_dict()
    except DataError as exc:
        rec = {"scan_id": entry.get("scan_id"), "error": str(exc)}
    return rec, time.perf_counter() - t0


def cmd_register(args) -> int:
    method = "rgsr_fm" if args.fm and args.method == "rgsr" else args.method
    if args.fm and args.method != "rgsr":
        raise ConfigError("--fm extends the rgsr method only")
    gates = _gates(args)
    header, entries = read_manifest(args.manifest)
    base = Path(args.manifest).parent
    out = Path(args.out)
    timing = Path(args.timing) if args.timing else out.with_suffix(".timing.csv")
    jobs = [(e, base, method, gates) for e in entries]
    if args.workers > 1:
        ex = ProcessPoolExecutor(max_workers=args.workers)
        results = ex.map(_register_one, jobs)
    else:
        ex = None
        results = map(_register_one, jobs)
    n_err = n_reg = 0
    try:
        with open(out, "w", encoding="utf-8") as f, open(timing, "w", newline="") as tf:
            f.write(dumps_line(results_header(method, asdict(gates))) + "\n")
            tw = csv.writer(tf)
            tw.writerow(["scan_id", "wall_s"])
            for rec, wall in results:  # in scan order
                f.write(dumps_line(rec) + "\n")
                tw.writerow([rec.get("scan_id"), f"{wall:.3f}"])
                if "error" in rec:
                    n_err += 1
                    log.error("scan %s: %s", rec.get("scan_id"), rec["error"])
                elif any(ScanRecord.from_dict(rec).regressions().values()):
                    n_reg += 1
    finally:
        if ex is not None:
            ex.shutdown()
    print(f"registered {len(entries) - n_err}/{len(entries)} scans with {method}; regressions: {n_reg}")
    if n_reg:
        return EXIT_REGRESSION
    return EXIT_DATA if n_err else EXIT_OK


# -- report -----------------------------------------------------------------------------------

def spearman(x, y) -> tuple[float, float]:
    if len(x) < 3:
        return math.nan, math.nan
    res = stats.spearmanr(x, y)
    return float(res.statistic), float(res.pvalue)


def cmd_report(args) -> int:
    _, rows = read_results(args.results)
    records = [ScanRecord.from_dict(r) for r in rows if "error" not in r]
    if not records:
        raise DataError(f"{args.results}: no successful records")
    summary = summarize(records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "success.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["site", "n"] + [f"S@{t:g}" for t in TAUS] + ["median_rmse", "median_tre"])
        for site, tab in [*summary["sites"].items(), ("all", summary["all"])]:
            w.writerow([site, tab["n"]] + [f"{tab['success'][f'{t:g}']:.6f}" for t in TAUS]
                       + [f"{tab['median_rmse']:.6f}", f"{tab['median_tre']:.6f}"])
    with open(out / "stages.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["site", "label", "count"])
        for site, tab in [*summary["sites"].items(), ("all", summary["all"])]:
            for label, c in tab["stage_histogram"].items():
                w.writerow([site, label, c])

    x = [r.checkpoints.get("ctf", r.rmse) for r in records]
    y = [r.ctf_tre for r in records]
    rho, p = spearman(x, y)
    scatter = {"x": "ctf_rmse", "y": "ctf_tre", "spearman_rho": rho, "p_value": p, "n": len(records),
               "points": [[r.scan_id, a, b] for r, a, b in zip(records, x, y)]}
    (out / "rmse_vs_tre.json").write_text(dumps_line(scatter) + "\n")
    (out / "summary.json").write_text(json.dumps(json.loads(dumps_line(summary)), indent=2) + "\n")
    tab = summary["all"]
    print(f"{tab['n']} scans: " + " ".join(f"S@{t:g}={tab['success'][f'{t:g}']:.3f}" for t in TAUS)
          + f"  spearman(ctf rmse, TRE)={rho:.3f} (p={p:.2g})  regressions={sum(tab['regressions'].values())}")
    return EXIT_OK


# -- coverage ---------------------------------------------------------------------------------

def cmd_coverage(args) -> int:
    rows = []
    if args.manifest:
        _, entries = read_manifest(args.manifest)
        base = Path(args.manifest).parent
        for e in entries:
            pair = load_pair(e, base)
            g, a = directional_coverage(pair.S, pair.A, pair.T_ref, args.radius)
            rows.append((pair.scan_id, pair.site, g.fraction, a.fraction))
    else:
        jitter = JitterSpec(protocol=PROTOCOL_A)
        for site in range(args.sites):
            spec = _scene_spec(args, site)
            _, pairs = make_site_pairs(spec, jitter, args.n_scans, first_index=site * args.n_scans)
            for pair in pairs:
                g, a = directional_coverage(pair.S, pair.A, pair.T_ref, args.radius)
                rows.append((pair.scan_id, pair.site, g.fraction, a.fraction))
    w = csv.writer(sys.stdout)
    w.writerow(["scan_id", "site", "ground_to_aerial", "aerial_to_ground", "gap"])
    for sid, site, g, a in rows:
        w.writerow([sid, site, f"{g:.6f}", f"{a:.6f}", f"{a - g:.6f}"])
    gaps = [a - g for _, _, g, a in rows]
    print(f"# {len(rows)} scans, mean ground->aerial {np.mean([r[2] for r in rows]):.3f}, "
          f"mean aerial->ground {np.mean([r[3] for r in rows]):.3f}, min gap {min(gaps):.3f}", file=sys.stderr)
    return EXIT_OK


# -- selftest ---------------------------------------------------------------------------------

def _selftest_checks():
    from .core import NeighborIndex, PointCloud, estimate_rigid
    from .fm_bev import fm_hypotheses
    from .metrics import inlier_rmse
    from .synthbench.pairs import make_pair
    from .synthbench.scene import generate_scene, path_poses

    rng = np.random.default_rng(7)

    def rmse_oracle():
        S = PointCloud(rng.uniform(0, 5, (300, 3)))
        A = PointCloud(rng.uniform(0, 5, (300, 3)))
        d = np.sqrt(((S.points[:, None] - A.points[None]) ** 2).sum(-1)).min(1)
        inl = d[d <= 2.0]
        want = math.sqrt(np.mean(inl ** 2)) if len(inl) >= 50 else math.inf
        return abs(inlier_rmse(S, A.index, RigidTransform.identity()).rmse - want) <= 1e-12

    def kabsch():
        T = RigidTransform.from_euler(0.1, -0.2, 0.7, (1.0, -2.0, 0.5))
        p = rng.normal(size=(50, 3))
        return np.allclose(estimate_rigid(p, T.apply_points(p)).as_matrix(), T.as_matrix(), atol=1e-9)

    def fm():
        pts = np.c_[rng.uniform(-30, 30, (4000, 2)), rng.uniform(0, 10, 4000)]
        T = RigidTransform.from_euler(0, 0, math.radians(12), (4.0, -3.0, 0.0))
        h = fm_hypotheses(PointCloud(pts), PointCloud(T.apply_points(pts)), (0.0, 0.0))[0]
        return abs(h.yaw - math.radians(12)) <= math.radians(0.5) and abs(h.tx - 4) <= 0.5 and abs(h.ty + 3) <= 0.5

    def pipeline():
        _, world = generate_scene(preset("bench-open", 3))
        pair = make_pair(world, path_poses(world, 1)[0], JitterSpec(protocol=PROTOCOL_A), 0)
        rec = evaluate_pair(pair, "cascade")
        return rec.rmse < 0.75 and rec.translation_error < 0.5

    def index_exact():
        pts = rng.normal(size=(200, 3))
        q = rng.normal(size=(20, 3))
        d, _ = NeighborIndex(pts).query(q)
        return np.allclose(d, np.sqrt(((q[:, None] - pts[None]) ** 2).sum(-1)).min(1), atol=0, rtol=1e-12)

    return [("inlier rmse matches brute force", rmse_oracle), ("rigid fit recovers a known pose", kabsch),
            ("exact nearest neighbours", index_exact), ("fourier-mellin recovers yaw and shift", fm),
            ("cascade registers an easy synthetic scan", pipeline)]


def cmd_selftest(args) -> int:
    ok = True
    for name, check in _selftest_checks():
        passed = bool(check())
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
    return EXIT_OK if ok else EXIT_REGRESSION


# -- parser -----------------------------------------------------------------------------------

def _add_scene_args(p):
    p.add_argument("--preset", default="campus", choices=sorted(PRESETS), help="named scene recipe")
    p.add_argument("--config", help="scene config file (key = value lines); overrides --preset")
    p.add_argument("--seed", type=int, default=0, help="scene seed of the first site")
    p.add_argument("--sites", type=int, default=1, help="number of sites (scene seeds seed..seed+sites-1)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rgsr", description="Aerial-ground LiDAR pose refinement with RGSR.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scan/aerial pairs and a manifest")
    _add_scene_args(p)
    p.add_argument("--n-scans", type=int, default=0, help="scans per site (default: the scene's n_scans)")
    p.add_argument("--protocol", choices=(PROTOCOL_A, PROTOCOL_B), default=PROTOCOL_B)
    p.add_argument("--jitter-seed", type=int, default=42)
    p.add_argument("--jitter-xy", type=float, default=5.0, help="planar jitter half-range in meters")
    p.add_argument("--jitter-yaw", type=float, default=15.0, help="yaw jitter half-range in degrees")
    p.add_argument("--format", choices=("xyz", "bin"), default="xyz")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("register", help="register every pair in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", choices=METHODS, default="rgsr")
    p.add_argument("--fm", action="store_true", help="add Fourier-Mellin BEV proposals after RGSR")
    p.add_argument("--tau-g", type=float, default=0.75, help="escalation gate in meters")
    p.add_argument("--r-eval", type=float, default=2.0, help="inlier radius in meters")
    p.add_argument("--no-reverse", action="store_true", help="drop reverse-direction hypotheses")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="result records (JSON lines)")
    p.add_argument("--timing", help="wall-time CSV (default: next to --out)")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("report", help="tables and plot data from result records")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("coverage", help="directional Cov@1m at the reference pose (CSV on stdout)")
    _add_scene_args(p)
    p.add_argument("--manifest", help="read pairs from a manifest instead of generating scenes")
    p.add_argument("--n-scans", type=int, default=1, help="scans per generated site")
    p.add_argument("--radius", type=float, default=R_COV)
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("selftest", help="quick end-to-end sanity checks")
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if getattr(args, "sites", 1) < 1 or getattr(args, "workers", 1) < 1 or getattr(args, "n_scans", 0) < 0:
            raise ConfigError("--sites and --workers must be >= 1, --n-scans >= 0")
        return args.func(args)
    except (ConfigError, SceneError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
