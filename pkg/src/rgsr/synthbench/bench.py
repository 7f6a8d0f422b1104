"""Benchmark harness: per-scan result records and per-site / aggregate result tables."""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..core import RigidTransform, rotation_angle
from ..global_init import FpfhConfig
from ..io import pose_from_list, pose_to_list
from ..metrics import lmce, success_at, tre
from ..pipeline import METHODS, GateConfig, register

TAUS = (0.5, 0.75, 1.0)
# (later, earlier) checkpoint pairs whose rmse must never increase
REGRESSION_PAIRS = (("cascade", "ctf"), ("rgsr", "cascade"), ("rgsr_fm", "rgsr"))


@dataclass
class ScanRecord:
    """Everything the report needs about one registered scan; contains no timing, so runs compare bytewise."""

    scan_id: int
    site: str
    trajectory: str
    method: str
    seed: int
    transform: list
    rmse: float
    inlier_count: int
    label: str
    stage: str
    flagged: bool
    trace: list  # [label, rmse, accepted, stage] per evaluated hypothesis
    checkpoints: dict  # method level -> rmse of the incumbent after that level
    checkpoint_errors: dict  # method level -> translation error of that incumbent vs T_ref
    tre: float
    ctf_tre: float  # TRE of the plain CTF estimate (first trace entry)
    translation_error: float
    rotation_error_deg: float
    odom_pose: list

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ScanRecord:
        return cls(**d)

    def regressions(self) -> dict:
        out = {}
        for later, earlier in REGRESSION_PAIRS:
            if later in self.checkpoints and earlier in self.checkpoints:
                out[f"{later}_vs_{earlier}"] = int(self.checkpoints[later] > self.checkpoints[earlier])
        return out


def evaluate_pair(pair, method: str = "rgsr", gates: GateConfig = GateConfig(),
                  fcfg: FpfhConfig = FpfhConfig()) -> ScanRecord:
    res = register(pair, method, gates, fcfg)
    T = res.final.transform
    ang, dist = _pose_error(pair.T_ref, T)
    return ScanRecord(
        scan_id=int(pair.scan_id),
        site=pair.site,
        trajectory=pair.trajectory,
        method=method,
        seed=int(pair.seed),
        transform=pose_to_list(T),
        rmse=float(res.final.score.rmse),
        inlier_count=int(res.final.score.inlier_count),
        label=res.final.label,
        stage=res.stage_of_selection,
        flagged=bool(res.final.flagged),
        trace=[[h.label, float(h.score.rmse), bool(h.accepted), h.stage] for h in res.trace],
        checkpoints={k: float(v.rmse) for k, v in res.checkpoints.items()},
        checkpoint_errors={k: _pose_error(pair.T_ref, h.transform)[1] for k, h in res.incumbents.items()},
        tre=float(tre(T, pair.markers)),
        ctf_tre=float(tre(res.trace[0].transform, pair.markers)),
        translation_error=dist,
        rotation_error_deg=math.degrees(ang),
        odom_pose=pose_to_list(pair.odom_pose),
    )


def _pose_error(T_ref: RigidTransform, T: RigidTransform) -> tuple[float, float]:
    """(rotation angle, translation distance) between the estimate and the reference pose."""
    d = T_ref.inverse() @ T
    return float(rotation_angle(d.rotation)), float(np.linalg.norm(T.translation - T_ref.translation))


def _trajectory_lmce(records: Sequence[ScanRecord]) -> dict:
    by_traj: dict = {}
    for r in records:
        by_traj.setdefault(r.trajectory, []).append(r)
    out = {}
    for name in sorted(by_traj):
        rs = sorted(by_traj[name], key=lambda r: r.scan_id)
        if len(rs) < 2:
            continue
        errs = lmce([pose_from_list(r.transform) for r in rs], [pose_from_list(r.odom_pose) for r in rs])
        out[name] = float(np.median(errs))
    return out


def summarize_table(records: Sequence[ScanRecord]) -> dict:
    rmse = [r.rmse for r in records]
    levels = sorted({k for r in records for k in r.checkpoints})
    regress = Counter()
    for r in records:
        regress.update(r.regressions())
    return {
        "n": len(records),
        "success": {f"{t:g}": success_at(rmse, t) for t in TAUS},
        "checkpoint_success": {lv: {f"{t:g}": success_at([r.checkpoints[lv] for r in records if lv in r.checkpoints], t)
                                    for t in TAUS} for lv in levels},
        "median_rmse": float(np.median(rmse)),
        "median_tre": float(np.median([r.tre for r in records])),
        "lmce": _trajectory_lmce(records),
        "stage_histogram": dict(sorted(Counter(r.label for r in records).items())),
        "regressions": dict(sorted(regress.items())),
    }


def summarize(records: Sequence[ScanRecord]) -> dict:
    """Per-site tables plus the aggregate over every record."""
    if not records:
        raise ValueError("no records to summarize")
    sites: dict = {}
    for r in records:
        sites.setdefault(r.site, []).append(r)
    return {"sites": {s: summarize_table(sites[s]) for s in sorted(sites)}, "all": summarize_table(records)}


@dataclass
class BenchmarkResult:
    records: list
    summary: dict = field(default_factory=dict)

    def regression_total(self) -> int:
        return int(sum(self.summary["all"]["regressions"].values()))


def _job(args):
    pair, method, gates, fcfg = args
    return evaluate_pair(pair, method, gates, fcfg)


def run_benchmark(pairs: Iterable, method: str = "rgsr", gates: GateConfig = GateConfig(),
                  fcfg: FpfhConfig = FpfhConfig(), workers: int = 1) -> BenchmarkResult:
    """Register every pair; records come back in input order regardless of ``workers``."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if workers > 1:
        pairs = list(pairs)
        with ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_job, [(p, method, gates, fcfg) for p in pairs]))
    else:
        records = [evaluate_pair(p, method, gates, fcfg) for p in pairs]
    if not records:
        raise ValueError("benchmark needs at least one pair")
    return BenchmarkResult(records, summarize(records))
