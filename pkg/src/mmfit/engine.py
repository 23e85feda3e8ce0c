"""Progressive multi-instance fitting loop.

One fit alternates two phases until a probabilistic termination criterion
fires: (1) propose a batch of dominant candidate instances by sampling,
fitting, and scoring against the instances kept so far; (2) cluster all
kept and new instances in the consensus space, keep the best-quality
representative of each cluster, and re-estimate its parameters by
iteratively re-weighted least squares. Points are never crisply assigned
during fitting; the final report carries both the soft per-point loss
matrix and a hard minimum-residual assignment.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .consensus import (
    cluster_instances,
    preference_vector_from_dense,
    select_representatives,
)
from .errors import (
    DegenerateSample,
    DimensionMismatch,
    ExhaustedData,
    InvalidConfig,
    LabelMismatch,
)
from .losses import LossFunction, LossKind, default_dof
from .models import (
    MINIMAL_SAMPLE_SIZE,
    POINT_DIM,
    ModelInstance,
    ModelType,
    PointSet,
    fit_minimal,
    fit_nonminimal,
    fundamental_planar_degenerate,
    oriented_epipolar_ok,
    residuals,
    sample_cheirality_ok,
    sample_degenerate,
)
from .quality import ActiveSet, is_dominant, quality_f_from_losses
from .sampling import (
    CCSamplerState,
    NeighborhoodGraph,
    build_neighborhood,
    cc_can_sample,
    next_sample_cc,
    next_sample_pnapsac,
    next_sample_prosac,
    next_sample_uniform,
)

OUTLIER = -1

SAMPLERS = ("uniform", "prosac", "pnapsac", "cc")


@dataclass(frozen=True)
class EngineConfig:
    loss: LossFunction
    q_min: float = 20.0
    tau: float = 0.2
    tau_semantics: str = "similarity"
    confidence: float = 0.99
    batch_size: int = 10
    max_irls_iters: int = 25
    irls_tol: float = 1e-6
    sampler: str = "pnapsac"
    r_min: float = 20.0
    r_max: float = 200.0
    n_steps: int = 5
    seed: int = 0
    max_proposals: int = 10_000
    k_counts: str = "samples"          # or "iterations"
    proposal_budget_factor: int = 50   # sampler draws allowed per batch slot

    def __post_init__(self):
        if self.q_min <= 0:
            raise InvalidConfig("q_min must be positive")
        if not 0.0 < self.tau < 1.0:
            raise InvalidConfig("tau must lie in (0, 1)")
        if not 0.0 < self.confidence < 1.0:
            raise InvalidConfig("confidence must lie in (0, 1)")
        if self.batch_size < 1 or self.max_irls_iters < 1:
            raise InvalidConfig("batch_size and max_irls_iters must be >= 1")
        if self.irls_tol <= 0:
            raise InvalidConfig("irls_tol must be positive")
        if self.sampler not in SAMPLERS:
            raise InvalidConfig(f"sampler must be one of {SAMPLERS}")
        if self.max_proposals < 1:
            raise InvalidConfig("max_proposals must be >= 1")
        if self.k_counts not in ("samples", "iterations"):
            raise InvalidConfig("k_counts must be 'samples' or 'iterations'")


def default_config(model_type: ModelType, epsilon: float,
                   kind: LossKind = LossKind.MAGSACPP, **overrides) -> EngineConfig:
    """EngineConfig with the loss dof matched to the model family."""
    fn = LossFunction(kind, epsilon, default_dof(model_type))
    return EngineConfig(loss=fn, **overrides)


@dataclass(frozen=True)
class FitReport:
    instances: list[ModelInstance]
    min_residual_assignment: np.ndarray   # per point: instance index or OUTLIER
    loss_matrix: np.ndarray               # (len(instances), n_points)
    iterations: int
    proposals_tried: int
    fallback_samples: int
    wall_time: float

    def to_dict(self, include_timing: bool = False) -> dict:
        """JSON-ready dict. Timing is excluded by default so that repeated
        runs of the same seed serialize identically."""
        out = {
            "instances": [
                {"model_type": h.model_type.value, "params": h.params.tolist()}
                for h in self.instances
            ],
            "min_residual_assignment": self.min_residual_assignment.tolist(),
            "loss_matrix": self.loss_matrix.tolist(),
            "iterations": self.iterations,
            "proposals_tried": self.proposals_tried,
            "fallback_samples": self.fallback_samples,
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return out


def should_terminate(n_points: int, united_inlier_count: int, k: int, m: int,
                     mu: float, q_min: float) -> bool:
    """Probabilistic stopping rule.

    After k samples, a structure with inlier ratio w among the
    points not yet explained escapes detection with probability
    (1 - w^m)^k. The largest support still hidden with confidence mu is

        n_i = (n_points - united_inlier_count) * (1 - (1 - mu)^(1/k))^(1/m)

    and the fit may stop once n_i <= q_min, i.e. anything still hidden
    would not be dominant anyway.
    """
    if not 0.0 < mu < 1.0:
        raise InvalidConfig("mu must lie in (0, 1)")
    if k < 1:
        raise ValueError("k must be >= 1")
    if united_inlier_count > n_points:
        raise ValueError("united inlier count cannot exceed the point count")
    remaining = n_points - united_inlier_count
    n_i = remaining * (1.0 - (1.0 - mu) ** (1.0 / k)) ** (1.0 / m)
    return n_i <= q_min


# ---------------------------------------------------------------------------
# IRLS refinement

def refine_irls(h: ModelInstance, points: PointSet, fn: LossFunction,
                cfg: EngineConfig, return_info: bool = False):
    """Iteratively re-weighted least squares from the given instance.

    Alternates robust weights and a weighted non-minimal fit until the
    relative parameter change drops below cfg.irls_tol or the iteration
    cap. Returns the iterate with the best soft support (never worse than
    the input); a degenerate weighted system returns the input unchanged
    with the `degenerate` flag raised in the info dict.
    """
    def loss_sum(inst: ModelInstance) -> float:
        return float(np.sum(fn.losses(residuals(inst, points.coords))))

    info = {"iterations": 0, "degenerate": False, "converged": False,
            "loss_trace": [loss_sum(h)]}
    n = len(points)
    best, best_q = h, n - info["loss_trace"][0]
    current = h
    for it in range(cfg.max_irls_iters):
        w = fn.weights(residuals(current, points.coords)) * points.weights
        if np.count_nonzero(w > 0) < MINIMAL_SAMPLE_SIZE[h.model_type]:
            info["degenerate"] = True
            break
        try:
            refined = fit_nonminimal(h.model_type, points, w)
        except DegenerateSample:
            info["degenerate"] = True
            break
        info["iterations"] = it + 1
        delta = _relative_change(current.params, refined.params)
        current = refined
        total = loss_sum(current)
        info["loss_trace"].append(total)
        if n - total > best_q:
            best, best_q = current, n - total
        if delta < cfg.irls_tol:
            info["converged"] = True
            break
    return (best, info) if return_info else best


def _termination_k(config: EngineConfig, draws: int, outer: int) -> int:
    k = draws if config.k_counts == "samples" else outer
    return max(k, 1)


def _relative_change(old: np.ndarray, new: np.ndarray) -> float:
    if old @ new < 0:
        new = -new
    denom = max(float(np.linalg.norm(old)), 1e-300)
    return float(np.linalg.norm(new - old)) / denom


# ---------------------------------------------------------------------------
# Main loop

class _Proposer:
    """Sample, fit, and screen one candidate batch entry."""

    def __init__(self, points: PointSet, model_type: ModelType,
                 cfg: EngineConfig, rng: np.random.Generator,
                 graph: Optional[NeighborhoodGraph],
                 cc_state: Optional[CCSamplerState]):
        self.points = points
        self.model_type = model_type
        self.cfg = cfg
        self.rng = rng
        self.graph = graph
        self.cc_state = cc_state
        self.m = MINIMAL_SAMPLE_SIZE[model_type]
        self.draws = 0

    def draw(self) -> list[int]:
        self.draws += 1
        if self.cfg.sampler == "cc":
            return next_sample_cc(self.cc_state, self.graph, self.points,
                                  self.m, self.rng)
        if self.cfg.sampler == "prosac":
            return next_sample_prosac(self.points, self.m, self.draws, self.rng)
        if self.cfg.sampler == "pnapsac":
            return next_sample_pnapsac(self.points, self.m, self.draws,
                                       self.graph, self.rng)
        return next_sample_uniform(self.points, self.m, self.rng)

    def candidates(self, sample: list[int]) -> list[ModelInstance]:
        coords = self.points.coords[sample]
        minimal = len(sample) == self.m
        if minimal:
            if sample_degenerate(self.model_type, coords):
                return []
            if (self.model_type is ModelType.HOMOGRAPHY
                    and not sample_cheirality_ok(coords)):
                return []
            try:
                fitted = fit_minimal(self.model_type, coords)
            except DegenerateSample:
                return []
        else:
            try:
                fitted = [fit_nonminimal(self.model_type,
                                         self.points.subset(sample),
                                         self.points.weights[sample])]
            except DegenerateSample:
                return []
        if self.model_type is ModelType.FUNDAMENTAL and minimal:
            fitted = [f for f in fitted if oriented_epipolar_ok(f, coords)]
        return fitted

    def model_degenerate(self, h: ModelInstance, sample: list[int]) -> bool:
        """Post-quality model degeneracy: dominant-plane test for F."""
        if self.model_type is not ModelType.FUNDAMENTAL or len(sample) != self.m:
            return False
        return fundamental_planar_degenerate(h, self.points.coords[sample],
                                             self.cfg.loss.epsilon)


def fit(points: PointSet, model_type: ModelType, config: EngineConfig) -> FitReport:
    """Run the full progressive fit and return the report.

    Deterministic for fixed (points, config): all randomness flows from
    config.seed. An empty instance list is a valid outcome, not an error.
    """
    start = time.perf_counter()
    m = MINIMAL_SAMPLE_SIZE[model_type]
    n = len(points)
    if n < m:
        raise ExhaustedData(f"{model_type.value} needs at least {m} points")
    if points.dim != POINT_DIM[model_type]:
        raise DimensionMismatch(
            f"{model_type.value} expects dimension {POINT_DIM[model_type]}, "
            f"got {points.dim}")

    rng = np.random.default_rng(config.seed)
    graph = None
    cc_state = None
    if config.sampler in ("cc", "pnapsac"):
        graph = build_neighborhood(points, config.r_max,
                                   build_edges=config.sampler == "cc")
    if config.sampler == "cc":
        cc_state = CCSamplerState(config.r_min, config.r_max, config.n_steps)
    proposer = _Proposer(points, model_type, config, rng, graph, cc_state)

    fn = config.loss
    eps = fn.epsilon
    cutoff = fn.cutoff
    active = ActiveSet(n, fn)
    instances: list[ModelInstance] = []
    residual_rows = np.zeros((0, n))
    loss_rows = np.zeros((0, n))
    proposals_tried = 0
    outer = 0
    united = 0

    while True:
        outer += 1
        batch: list[ModelInstance] = []
        budget = config.proposal_budget_factor * config.batch_size
        attempts = 0
        cc_spent = False
        while (len(batch) < config.batch_size and attempts < budget
               and proposer.draws < config.max_proposals):
            if cc_state is not None and not cc_can_sample(cc_state, graph, m):
                # the deterministic component stream is finished; keep the
                # PROSAC fallback only as a safeguard when nothing at all
                # has been found yet
                if instances or batch:
                    cc_spent = True
                    break
            if not batch and proposer.draws > 0 and should_terminate(
                    n, united, _termination_k(config, proposer.draws, outer),
                    m, config.confidence, config.q_min):
                break  # nothing new this batch and the criterion already holds
            sample = proposer.draw()
            attempts += 1
            for h in proposer.candidates(sample):
                proposals_tried += 1
                r = residuals(h, points.coords)
                # sound upper bound on the quality: skip the loss evaluation
                # for candidates that cannot reach q_min
                bound = float(np.minimum(r < cutoff, active.min_loss).sum())
                if bound < config.q_min:
                    continue
                q = quality_f_from_losses(fn.losses(r), active.min_loss)
                if is_dominant(q, config.q_min) and not proposer.model_degenerate(h, sample):
                    batch.append(h)

        if batch:
            instances = _consolidate(instances + batch, points, config)
            instances, residual_rows, loss_rows = _prune_by_quality(
                instances, points, config)
            active.rebuild(instances, points)

        united = 0
        if len(instances):
            united = int(np.sum(np.any(residual_rows < eps, axis=0)))
        k = _termination_k(config, proposer.draws, outer)
        done = should_terminate(n, united, k, m, config.confidence, config.q_min)
        if cc_spent and instances:
            done = True
        if proposer.draws >= config.max_proposals:
            done = True
        if done:
            break

    assignment = np.full(n, OUTLIER, dtype=int)
    if len(instances):
        min_idx = np.argmin(residual_rows, axis=0)
        min_val = residual_rows[min_idx, np.arange(n)]
        assignment = np.where(min_val < eps, min_idx, OUTLIER)
    fallback = cc_state.fallback_count if cc_state is not None else 0
    return FitReport(
        instances=instances,
        min_residual_assignment=assignment,
        loss_matrix=loss_rows,
        iterations=outer,
        proposals_tried=proposals_tried,
        fallback_samples=fallback,
        wall_time=time.perf_counter() - start,
    )


def _consolidate(instances: list[ModelInstance], points: PointSet,
                 cfg: EngineConfig, max_passes: int = 50) -> list[ModelInstance]:
    """Alternate consensus clustering and IRLS until the clustering returns
    only singletons. The instance count never increases between passes."""
    fn = cfg.loss
    current = list(instances)
    refined_once = False
    for _ in range(max_passes):
        if not current:
            return []
        loss_rows = np.vstack([fn.losses(residuals(h, points.coords))
                               for h in current])
        prefs = [preference_vector_from_dense(1.0 - row) for row in loss_rows]
        clusters = cluster_instances(current, prefs, cfg.tau, 1,
                                     cfg.tau_semantics)
        if refined_once and all(len(c.members) == 1 for c in clusters):
            return current
        qualities = _leave_cluster_out_qualities(loss_rows, clusters)
        reps = select_representatives(clusters, current, qualities)
        current = [refine_irls(h, points, fn, cfg) for h in reps]
        refined_once = True
    return current


def _leave_cluster_out_qualities(loss_rows: np.ndarray, clusters) -> np.ndarray:
    """Per-instance quality against the kept instances outside its own
    cluster, so that near-duplicates do not suppress each other."""
    n_inst, n_pts = loss_rows.shape
    qualities = np.zeros(n_inst)
    for cluster in clusters:
        members = list(cluster.members)
        outside = [i for i in range(n_inst) if i not in cluster.members]
        cache = (np.min(loss_rows[outside], axis=0) if outside
                 else np.ones(n_pts))
        for i in members:
            qualities[i] = quality_f_from_losses(loss_rows[i], cache)
    return qualities


def _prune_by_quality(instances: list[ModelInstance], points: PointSet,
                      cfg: EngineConfig):
    """Drop instances whose quality against all the others falls below
    q_min; evaluated simultaneously over the final set."""
    fn = cfg.loss
    if not instances:
        return [], np.zeros((0, len(points))), np.zeros((0, len(points)))
    residual_rows = np.vstack([residuals(h, points.coords) for h in instances])
    loss_rows = np.vstack([fn.losses(row) for row in residual_rows])
    keep = []
    for i in range(len(instances)):
        others = [j for j in range(len(instances)) if j != i]
        cache = (np.min(loss_rows[others], axis=0) if others
                 else np.ones(len(points)))
        if is_dominant(quality_f_from_losses(loss_rows[i], cache), cfg.q_min):
            keep.append(i)
    kept = [instances[i] for i in keep]
    return kept, residual_rows[keep], loss_rows[keep]


# ---------------------------------------------------------------------------
# Evaluation

def misclassification_error(report: FitReport, ground_truth_labels) -> float:
    """Fraction of points assigned to the wrong cluster under the optimal
    one-to-one matching between reported instances and ground-truth
    clusters. Label 0 marks ground-truth outliers and is matched to the
    OUTLIER assignment; unmatched instances or clusters count as wrong.
    """
    labels = np.asarray(ground_truth_labels, dtype=int)
    pred = report.min_residual_assignment
    if labels.shape != pred.shape:
        raise LabelMismatch("label vector does not match the point count")
    n = len(labels)
    if n == 0:
        return 0.0
    gt_ids = sorted(set(labels[labels != 0].tolist()))
    inst_ids = sorted(set(pred[pred != OUTLIER].tolist()))
    correct = int(np.sum((pred == OUTLIER) & (labels == 0)))
    if gt_ids and inst_ids:
        table = np.zeros((len(inst_ids), len(gt_ids)))
        for a, inst in enumerate(inst_ids):
            for b, gt in enumerate(gt_ids):
                table[a, b] = np.sum((pred == inst) & (labels == gt))
        rows, cols = linear_sum_assignment(-table)
        correct += int(table[rows, cols].sum())
    return 1.0 - correct / n
