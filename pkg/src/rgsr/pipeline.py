"""Confidence-gated cascade and the stratified hypothesis portfolio with accept-if-better selection.

Every candidate pose is scored the same way: forward inlier RMSE of the full ground scan against
the aerial crop with r_eval = 2 m. The incumbent is replaced only on a strict decrease, so the
final RMSE can never exceed any earlier incumbent's.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .core import PointCloud, RigidTransform
from .fm_bev import K_T, K_THETA, fm_hypotheses, lift_to_se3
from .global_init import FpfhConfig, FeatureCloud, fpfh, ransac_register
from .icp import CTF_SCHEDULE, StageSchedule, ctf, run_schedule
from .metrics import R_EVAL, InlierScore, inlier_rmse, nn_distances
from .stratified import PercentileSpec, TwoStageConfig, two_stage, two_stage_reverse

log = logging.getLogger(__name__)

METHODS = ("ctf", "two_stage", "cascade", "rgsr", "rgsr_fm")

STAGE_CTF = "ctf"
STAGE_TWO_STAGE = "two_stage"
STAGE_RANSAC = "ransac"
STAGE_PHASE1 = "phase1"
STAGE_PHASE2 = "phase2"
STAGE_PHASE3 = "phase3"
STAGE_FM = "fm"
STAGES = (STAGE_CTF, STAGE_TWO_STAGE, STAGE_RANSAC, STAGE_PHASE1, STAGE_PHASE2, STAGE_PHASE3, STAGE_FM)


@dataclass(frozen=True)
class GateConfig:
    tau_g: float = 0.75
    phase2_low: float = 0.5
    phase2_high: float = 1.0
    phase3_gate: float = 1.0
    percentiles: tuple = (15.0, 30.0, 45.0, 60.0)
    r_eval: float = R_EVAL
    cascade_percentile: float = 30.0
    band_schedule: tuple = (0.75, 0.5)
    n_bands: int = 4
    reverse: bool = True

    def __post_init__(self):
        if not 0 < self.phase2_low < self.tau_g < self.phase2_high:
            raise ValueError("gates must satisfy 0 < phase2_low < tau_g < phase2_high")
        if not self.percentiles or any(not 0 < p <= 100 for p in self.percentiles):
            raise ValueError("percentiles must lie in (0, 100]")
        if self.r_eval <= 0:
            raise ValueError("r_eval must be positive")


@dataclass(frozen=True)
class HypothesisRecord:
    label: str
    transform: RigidTransform
    score: InlierScore
    accepted: bool = False
    stage: str = STAGE_CTF
    exploratory: bool = False
    flagged: bool = False


@dataclass
class PipelineResult:
    final: HypothesisRecord
    trace: list
    stage_of_selection: str
    # incumbent after each completed method level (ctf, cascade, rgsr, rgsr_fm)
    incumbents: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.trace:
            raise ValueError("trace must not be empty")

    @property
    def checkpoints(self) -> dict:
        return {k: h.score for k, h in self.incumbents.items()}


def accept_if_better(incumbent: HypothesisRecord, candidate: HypothesisRecord) -> HypothesisRecord:
    """Candidate wins only on a strictly lower RMSE."""
    if candidate.score.r_eval != incumbent.score.r_eval:
        raise ValueError("candidates scored with different r_eval cannot be compared")
    return candidate if candidate.score.rmse < incumbent.score.rmse else incumbent


class _Portfolio:
    """Incumbent + trace bookkeeping for one scan."""

    def __init__(self, first: HypothesisRecord):
        first = replace(first, accepted=True)
        self.best = first
        self.trace = [first]

    def offer(self, cand: HypothesisRecord) -> bool:
        winner = accept_if_better(self.best, cand)
        won = winner is cand
        rec = replace(cand, accepted=won)
        self.trace.append(rec)
        if won:
            self.best = rec
        return won

    @property
    def rmse(self) -> float:
        return self.best.score.rmse

    def result(self, incumbents: dict) -> PipelineResult:
        return PipelineResult(self.best, list(self.trace), self.best.stage, dict(incumbents))

    @classmethod
    def resume(cls, prev: PipelineResult) -> _Portfolio:
        p = cls.__new__(cls)
        p.best = prev.final
        p.trace = list(prev.trace)
        return p


def _score(pair, T: RigidTransform, gates: GateConfig) -> InlierScore:
    return inlier_rmse(pair.S, pair.A.index, T, gates.r_eval)


def _features(pair, cfg: FpfhConfig) -> tuple[FeatureCloud, FeatureCloud]:
    key = ("fpfh", cfg.voxel, cfg.feature_radius, cfg.min_neighbors)
    cache = pair.meta
    if key not in cache:
        cache[key] = (fpfh(pair.S, cfg), fpfh(pair.A, cfg))
    return cache[key]


def ransac_seed(base_seed: int, scan_id: int, attempt: int) -> int:
    """Per-attempt RANSAC stream: base seed + scan id + attempt counter."""
    return int(base_seed) + int(scan_id) + int(attempt)


def ransac_hypothesis(pair, gates: GateConfig, fcfg: FpfhConfig, attempt: int, label: str,
                      stage: str) -> HypothesisRecord:
    srcF, dstF = _features(pair, fcfg)
    cfg = fcfg.with_seed(ransac_seed(fcfg.rng_seed, pair.scan_id, attempt))
    rr = ransac_register(srcF, dstF, cfg)
    if rr.failed:
        # no usable global hypothesis; fall back to refining the prior
        T0 = pair.T_init
    else:
        # the estimate maps the scan frame into the aerial frame directly
        T0 = rr.transform
    out = ctf(pair.S, pair.A.index, T0, CTF_SCHEDULE, gates.r_eval)
    return HypothesisRecord(label, out.transform, out.score, stage=stage, flagged=out.flagged or rr.failed)


def run_ctf(pair, gates: GateConfig = GateConfig(), sched: StageSchedule = CTF_SCHEDULE) -> HypothesisRecord:
    out = ctf(pair.S, pair.A.index, pair.T_init, sched, gates.r_eval)
    return HypothesisRecord("ctf", out.transform, out.score, True, STAGE_CTF, flagged=out.flagged)


def _two_stage_from_init(pair, p: float, gates: GateConfig):
    # the cascade and Phase 1 both run Two-Stage from T_init at p=30; compute it once per pair
    key = ("two_stage_init", float(p), gates.r_eval)
    if key not in pair.meta:
        cfg = TwoStageConfig(percentile=PercentileSpec(p))
        pair.meta[key] = two_stage(pair.S, pair.A, pair.T_init, cfg, gates.r_eval)
    return pair.meta[key]


def run_two_stage(pair, gates: GateConfig = GateConfig(), p: float | None = None,
                  T0: RigidTransform | None = None, label: str | None = None,
                  stage: str = STAGE_TWO_STAGE) -> HypothesisRecord:
    p = gates.cascade_percentile if p is None else p
    if T0 is None:
        out = _two_stage_from_init(pair, p, gates)
    else:
        out = two_stage(pair.S, pair.A, T0, TwoStageConfig(percentile=PercentileSpec(p)), gates.r_eval)
    return HypothesisRecord(label or f"two_stage_p{p:g}", out.transform, out.score, stage=stage, flagged=out.flagged)


def cascade(pair, gates: GateConfig = GateConfig(), fcfg: FpfhConfig = FpfhConfig()) -> PipelineResult:
    """CTF; escalate to Two-Stage (p=30) and then FPFH-RANSAC + CTF while RMSE >= tau_g."""
    port = _Portfolio(run_ctf(pair, gates))
    incumbents = {"ctf": port.best}
    if port.rmse >= gates.tau_g:
        port.offer(run_two_stage(pair, gates))
        if port.rmse >= gates.tau_g:
            port.offer(ransac_hypothesis(pair, gates, fcfg, 0, "ransac_ctf", STAGE_RANSAC))
    incumbents["cascade"] = port.best
    return port.result(incumbents)


def phase1_hypotheses(gates: GateConfig):
    """Exploration order: percentile ascending, forward before reverse."""
    for p in gates.percentiles:
        yield p, "fwd"
        if gates.reverse:
            yield p, "rev"


def forward_hypothesis(pair, p: float, gates: GateConfig) -> HypothesisRecord:
    ts = _two_stage_from_init(pair, p, gates)
    out = ctf(pair.S, pair.A.index, ts.transform, CTF_SCHEDULE, gates.r_eval)
    return HypothesisRecord(f"fwd_p{p:g}", out.transform, out.score, stage=STAGE_PHASE1,
                            flagged=ts.flagged or out.flagged)


def reverse_hypothesis(pair, p: float, gates: GateConfig) -> HypothesisRecord:
    out = two_stage_reverse(pair.S, pair.A, pair.T_init, p, CTF_SCHEDULE, gates.r_eval)
    return HypothesisRecord(f"rev_p{p:g}", out.transform, out.score, stage=STAGE_PHASE1, flagged=out.flagged)


def _phase1_hypothesis(pair, p: float, direction: str, gates: GateConfig) -> HypothesisRecord:
    # pure in (pair, p, direction, r_eval): memoized so ablations on the same pair share the work
    key = ("phase1", float(p), direction, gates.r_eval)
    if key not in pair.meta:
        make = forward_hypothesis if direction == "fwd" else reverse_hypothesis
        pair.meta[key] = make(pair, p, gates)
    return pair.meta[key]


def band_refine(pair, T_star: RigidTransform, gates: GateConfig = GateConfig()) -> HypothesisRecord | None:
    """Tight-radius ICP on the height band (of inlier source points) with the lowest median residual.

    Returns None when fewer than 50 forward inliers exist. The candidate is scored on the full cloud;
    acceptance is left to the caller.
    """
    moved = T_star.apply_points(pair.S.points)
    d = nn_distances(moved, pair.A.index, RigidTransform.identity(), max_distance=np.nextafter(gates.r_eval, np.inf))
    inl = np.flatnonzero(d <= gates.r_eval)
    if len(inl) < 50:
        return None
    order = inl[np.argsort(moved[inl, 2], kind="stable")]
    bins = np.array_split(order, gates.n_bands)
    medians = [float(np.median(d[b])) for b in bins]
    best = int(np.argmin(medians))  # argmin keeps the lowest band on ties
    T, _, flagged = run_schedule(pair.S.points[bins[best]], pair.A.index, T_star, gates.band_schedule)
    return HypothesisRecord(f"band{best}", T, _score(pair, T, gates), stage=STAGE_PHASE2, flagged=flagged)


def rgsr(pair, cascade_out: PipelineResult, gates: GateConfig = GateConfig(),
         fcfg: FpfhConfig = FpfhConfig()) -> PipelineResult:
    """Phases 1-3 on top of the cascade result."""
    port = _Portfolio.resume(cascade_out)
    incumbents = dict(cascade_out.incumbents)

    # Phase 1: seeded from T_init (forward) / T_init^-1 (reverse), never from the cascade output
    for p, direction in phase1_hypotheses(gates):
        if port.rmse < gates.tau_g:
            break
        port.offer(_phase1_hypothesis(pair, p, direction, gates))

    # Phase 2: residual-guided band refinement
    if gates.phase2_low < port.rmse < gates.phase2_high:
        cand = band_refine(pair, port.best.transform, gates)
        if cand is not None:
            port.offer(cand)

    # Phase 3: one extra RANSAC attempt with a fresh seed
    if port.rmse >= gates.phase3_gate:
        port.offer(ransac_hypothesis(pair, gates, fcfg, 1, "ransac_fallback", STAGE_PHASE3))

    incumbents["rgsr"] = port.best
    return port.result(incumbents)


def crop_center(pair) -> np.ndarray:
    c = pair.meta.get("crop_center") if isinstance(pair.meta, dict) else None
    if c is not None:
        return np.asarray(c, dtype=np.float64)[:2]
    pts = pair.A.points
    return 0.5 * (pts[:, :2].min(axis=0) + pts[:, :2].max(axis=0))


def fm_extension(pair, prev: PipelineResult, gates: GateConfig = GateConfig(), enabled: bool = True,
                 k_theta: int = K_THETA, k_t: int = K_T) -> PipelineResult:
    """Optional spectral BEV proposals, run only when the incumbent is still >= tau_g."""
    port = _Portfolio.resume(prev)
    incumbents = dict(prev.incumbents)
    if enabled and port.rmse >= gates.tau_g:
        T_star = port.best.transform
        moved = pair.S.points @ T_star.rotation.T + T_star.translation
        hyps = fm_hypotheses(PointCloud(moved), pair.A, crop_center(pair), k_theta, k_t)
        for k, h in enumerate(hyps[: k_theta * k_t]):
            T0 = lift_to_se3(h, T_star)
            out = ctf(pair.S, pair.A.index, T0, CTF_SCHEDULE, gates.r_eval)
            port.offer(HypothesisRecord(f"fm_{k}", out.transform, out.score, stage=STAGE_FM, exploratory=True,
                                        flagged=out.flagged))
    incumbents["rgsr_fm"] = port.best
    return port.result(incumbents)


def register(pair, method: str = "rgsr", gates: GateConfig = GateConfig(),
             fcfg: FpfhConfig = FpfhConfig()) -> PipelineResult:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if method == "ctf":
        rec = run_ctf(pair, gates)
        return PipelineResult(rec, [rec], STAGE_CTF, {"ctf": rec})
    if method == "two_stage":
        rec = replace(run_two_stage(pair, gates), accepted=True)
        return PipelineResult(rec, [rec], STAGE_TWO_STAGE, {"two_stage": rec})
    out = cascade(pair, gates, fcfg)
    if method == "cascade":
        return out
    out = rgsr(pair, out, gates, fcfg)
    if method == "rgsr":
        return out
    return fm_extension(pair, out, gates, enabled=True)
