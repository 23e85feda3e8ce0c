"""Compound model quality against the set of already-kept instances.

A candidate is scored only by the support it does not share with kept
instances. Two variants: hard inlier counting (quality_rsc) and the
soft, loss-based score (quality_f) that the engine actually uses.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .losses import LossFunction
from .models import ModelInstance, PointSet, residuals


class ActiveSet:
    """Kept dominant instances plus per-point minimum loss / residual caches.

    The caches hold, for every point, the minimum over all kept instances
    of the loss (1 when the set is empty) and of the residual (+inf when
    empty). Mutation is single-writer; reads are safe from any thread.
    """

    def __init__(self, n_points: int, fn: LossFunction):
        self.fn = fn
        self.instances: list[ModelInstance] = []
        self.min_loss = np.ones(n_points)
        self.min_residual = np.full(n_points, np.inf)

    def __len__(self) -> int:
        return len(self.instances)

    def insert(self, instance: ModelInstance, points: PointSet) -> None:
        r = residuals(instance, points.coords)
        self.instances.append(instance)
        self.min_loss = np.minimum(self.min_loss, self.fn.losses(r))
        self.min_residual = np.minimum(self.min_residual, r)

    def rebuild(self, instances: list[ModelInstance], points: PointSet) -> None:
        """Recompute both caches from scratch for the given instances."""
        self.instances = list(instances)
        n = len(points)
        self.min_loss = np.ones(n)
        self.min_residual = np.full(n, np.inf)
        for inst in self.instances:
            r = residuals(inst, points.coords)
            self.min_loss = np.minimum(self.min_loss, self.fn.losses(r))
            self.min_residual = np.minimum(self.min_residual, r)

    def remove(self, index: int, points: PointSet) -> None:
        kept = [h for i, h in enumerate(self.instances) if i != index]
        self.rebuild(kept, points)


def quality_rsc(h: ModelInstance, points: PointSet, active: ActiveSet,
                epsilon: float) -> int:
    """Count of points within epsilon of h but not of any kept instance."""
    r = residuals(h, points.coords)
    return int(np.sum((r < epsilon) & (active.min_residual >= epsilon)))


def quality_f(h: ModelInstance, points: PointSet, active: ActiveSet,
              fn: LossFunction) -> float:
    """Soft quality: n - sum_p max(f(h, p), 1 - f(kept, p)).

    Equals quality_rsc exactly when fn is the 0/1 loss. Shared support is
    cancelled smoothly through the active set's minimum-loss cache.
    """
    losses_h = fn.losses(residuals(h, points.coords))
    return float(len(points) - np.sum(np.maximum(losses_h, 1.0 - active.min_loss)))


def quality_f_from_losses(losses_h: np.ndarray,
                          min_loss_cache: np.ndarray) -> float:
    """quality_f when the per-point losses are already available."""
    return float(len(losses_h) - np.sum(np.maximum(losses_h, 1.0 - min_loss_cache)))


def is_dominant(q: float, q_min: float) -> bool:
    """Dominance decision, boundary inclusive."""
    return q >= q_min
