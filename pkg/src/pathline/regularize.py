"""Set-valued regularization of the two-phase velocity field.

Away from the interface the admissible velocity set is the singleton of
the local one-sided field; on the interface it is the segment (convex
hull) between the two one-sided limits.  For fields that are continuous
up to the closure of each phase with a measure-zero discontinuity set,
discarding null sets before taking convex closures produces the same
sets, so a single construction covers both the closure-convexification
and the null-set-insensitive variant; the segment endpoints are the
one-sided limits either way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fields import Phase, TwoPhaseScene, phase_of

__all__ = ["KrasovskiiSet", "krasovskii", "inclusion_residual", "trajectory_residual"]


@dataclass(frozen=True)
class KrasovskiiSet:
    """Singleton or segment of admissible velocities at a space-time point.

    ``kind`` is ``"singleton"`` (value in ``v_plus``) or ``"segment"``
    (endpoints ``v_plus``, ``v_minus``, the one-sided limits).
    """

    kind: str
    v_plus: np.ndarray
    v_minus: Optional[np.ndarray] = None

    @property
    def is_segment(self) -> bool:
        return self.kind == "segment"

    def contains(self, u, tol: float = 1e-12) -> bool:
        return inclusion_residual(self, u) <= tol


def krasovskii(scene: TwoPhaseScene, t: float, x) -> KrasovskiiSet:
    """Admissible velocity set at ``(t, x)``: one-sided singleton in the
    bulk, segment between the one-sided limits on the interface."""
    x = np.asarray(x, dtype=float)
    label = phase_of(scene, t, x)
    if label == Phase.INTERFACE:
        return KrasovskiiSet("segment",
                             np.asarray(scene.v_plus(t, x), dtype=float),
                             np.asarray(scene.v_minus(t, x), dtype=float))
    v = scene.velocity(label)(t, x)
    return KrasovskiiSet("singleton", np.asarray(v, dtype=float))


def inclusion_residual(kset: KrasovskiiSet, u) -> float:
    """Euclidean distance from ``u`` to the set; zero iff ``u`` belongs."""
    u = np.asarray(u, dtype=float)
    if not kset.is_segment:
        return float(np.linalg.norm(u - kset.v_plus))
    a, b = kset.v_plus, kset.v_minus
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom == 0.0:
        return float(np.linalg.norm(u - a))
    s = float(np.clip(np.dot(u - a, ab) / denom, 0.0, 1.0))
    return float(np.linalg.norm(u - (a + s * ab)))


def trajectory_residual(scene: TwoPhaseScene, traj) -> float:
    """Differential-inclusion certificate for a computed trajectory.

    The state derivative is estimated by centered differences of the dense
    output inside each segment; samples within two steps of a crossing
    event (and segment end points) are excluded, mirroring the null
    exception set allowed by the a.c. solution concept.  Returns the
    maximal distance of the estimated derivative from the admissible
    velocity set.
    """
    worst = 0.0
    for seg in traj.segments:
        ts, xs = seg.t, seg.x
        if ts.size < 5:
            continue
        # centered differences, skipping a 2-sample band at both ends
        for i in range(2, ts.size - 2):
            dt = ts[i + 1] - ts[i - 1]
            if dt <= 0:
                continue
            u = (xs[i + 1] - xs[i - 1]) / dt
            kset = krasovskii(scene, float(ts[i]), xs[i])
            worst = max(worst, inclusion_residual(kset, u))
    return worst
