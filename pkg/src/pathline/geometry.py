"""Moving level-set interfaces: normals, signed-distance charts, projections.

A moving interface is represented by a scalar level-set function
``phi(t, x)`` on an open time window and a box-shaped spatial domain.
The zero set ``{phi = 0}`` is the interface, ``{phi > 0}`` the plus phase
and ``{phi < 0}`` the minus phase.  The unit normal is the normalized
spatial gradient of ``phi`` and therefore points into the plus phase.

All evaluation callables are expected to broadcast over a batch of points:
``x`` may have shape ``(n,)`` or ``(m, n)`` and scalar-valued functions
return shape ``()`` respectively ``(m,)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ChartOutOfRange, DegenerateGradient, NoConvergence

__all__ = [
    "Box",
    "MovingInterface",
    "InterfaceChart",
    "normal",
    "normal_speed",
    "signed_distance",
    "tangent_projector",
    "subtangential_residual",
]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lo_i, hi_i]`` in each coordinate."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if self.lo.shape != self.hi.shape or np.any(self.lo >= self.hi):
            raise ValueError("box needs lo < hi componentwise")

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))


def _fd_step(x: np.ndarray) -> np.ndarray:
    return 1e-6 * (1.0 + np.linalg.norm(x, axis=-1))


def _fd_grad(phi: Callable, t: float, x: np.ndarray) -> np.ndarray:
    """Central finite-difference spatial gradient, batched."""
    x = np.atleast_2d(x)
    m, n = x.shape
    h = _fd_step(x)
    g = np.empty((m, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        g[:, k] = (phi(t, x + h[:, None] * e) - phi(t, x - h[:, None] * e)) / (2.0 * h)
    return g


def _fd_dt(phi: Callable, t: float, x: np.ndarray) -> np.ndarray:
    ht = 1e-6 * (1.0 + abs(t))
    return (phi(t + ht, x) - phi(t - ht, x)) / (2.0 * ht)


@dataclass
class MovingInterface:
    """Level-set family defining a moving hypersurface and its bulk phases.

    Parameters
    ----------
    dim : ambient dimension, at least 2.
    phi : scalar level-set function ``phi(t, x)``, C^2 in x and C^1 in t.
    phi_grad_x, phi_dt, phi_hess : optional analytic derivatives; central
        finite differences with step ``1e-6 * (1 + |x|)`` are attached when
        omitted.
    time_window : open interval ``(a, b)`` of admissible times.
    domain : spatial :class:`Box`.
    grad_floor : gradient norms below this raise :class:`DegenerateGradient`.
    """

    dim: int
    phi: Callable
    time_window: tuple[float, float]
    domain: Box
    phi_grad_x: Optional[Callable] = None
    phi_dt: Optional[Callable] = None
    phi_hess: Optional[Callable] = None
    grad_floor: float = 1e-10
    name: str = ""

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("ambient dimension must be >= 2")
        a, b = self.time_window
        if not a < b:
            raise ValueError("time window must be a nonempty open interval")
        if self.domain.dim != self.dim:
            raise ValueError("domain dimension mismatch")
        if self.phi_grad_x is None:
            self.phi_grad_x = lambda t, x: _fd_grad(self.phi, t, x)
        if self.phi_dt is None:
            self.phi_dt = lambda t, x: _fd_dt(self.phi, t, x)
        if self.phi_hess is None:
            self.phi_hess = lambda t, x: _fd_grad_jac(self.phi_grad_x, t, x)

    def contains_time(self, t: float) -> bool:
        a, b = self.time_window
        return a < t < b

    def grad(self, t: float, x) -> np.ndarray:
        return np.asarray(self.phi_grad_x(t, np.asarray(x, dtype=float)), dtype=float)


def _fd_grad_jac(grad: Callable, t: float, x: np.ndarray) -> np.ndarray:
    """Finite-difference Jacobian of the gradient field (approximate Hessian)."""
    x = np.atleast_2d(x)
    m, n = x.shape
    h = _fd_step(x)
    H = np.empty((m, n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        gp = np.atleast_2d(grad(t, x + h[:, None] * e))
        gm = np.atleast_2d(grad(t, x - h[:, None] * e))
        H[:, :, k] = (gp - gm) / (2.0 * h[:, None])
    # symmetrize; FD noise otherwise leaks into the Newton projection
    return 0.5 * (H + np.swapaxes(H, 1, 2))


def normal(iface: MovingInterface, t: float, x) -> np.ndarray:
    """Unit normal ``grad phi / |grad phi|``, pointing into the plus phase."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    g = np.atleast_2d(iface.grad(t, x))
    norms = np.linalg.norm(g, axis=-1)
    if np.any(norms < iface.grad_floor):
        raise DegenerateGradient(
            f"|grad phi| = {norms.min():.3e} below floor {iface.grad_floor:.1e}"
        )
    n = g / norms[:, None]
    return n[0] if single else n


def normal_speed(iface: MovingInterface, t: float, x) -> np.ndarray:
    """Speed of normal displacement ``-d_t phi / |grad phi|`` at points of
    the zero level set."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    g = np.atleast_2d(iface.grad(t, xb))
    norms = np.linalg.norm(g, axis=-1)
    if np.any(norms < iface.grad_floor):
        raise DegenerateGradient(
            f"|grad phi| = {norms.min():.3e} below floor {iface.grad_floor:.1e}"
        )
    v = -np.asarray(iface.phi_dt(t, xb), dtype=float) / norms
    return float(v[0]) if single else v


def tangent_projector(n) -> np.ndarray:
    """Tangential projector ``I - n (x) n`` for a unit vector ``n``."""
    n = np.asarray(n, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-12:
        raise ValueError("tangent_projector expects a unit vector")
    return np.eye(n.size) - np.outer(n, n)


@dataclass
class InterfaceChart:
    """Signed-distance chart on a tubular neighborhood of the interface.

    ``project`` maps a tube point to its closest interface point ``pi``,
    the signed distance ``d`` (sign of ``phi``) and the unit normal at
    ``pi``, so that ``x = pi + d * n`` up to ``chart_tol``.
    """

    iface: MovingInterface
    width: float
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    chart_tol: float = 1e-8

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("chart width must be positive")

    def project(self, t: float, x):
        """Closest-point projection of one point or a batch of points.

        Returns ``(d, pi, n)`` with shapes ``()/(n,)/(n,)`` for a single
        point and ``(m,)/(m,n)/(m,n)`` for a batch.

        Raises
        ------
        ChartOutOfRange
            if the first-order distance estimate or the converged distance
            exceeds the tube half-width.
        NoConvergence
            if the damped Newton iteration stalls above ``newton_tol``.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        iface = self.iface
        m, n = X.shape

        val = np.atleast_1d(np.asarray(iface.phi(t, X), dtype=float))
        g = np.atleast_2d(iface.grad(t, X))
        gnorm = np.linalg.norm(g, axis=-1)
        if np.any(gnorm < iface.grad_floor):
            raise DegenerateGradient("level-set gradient vanished in chart tube")
        est = np.abs(val) / gnorm
        if np.any(est > self.width):
            bad = int(np.argmax(est))
            raise ChartOutOfRange(
                f"distance estimate {est[bad]:.3e} exceeds tube half-width "
                f"{self.width:.3e} at point {X[bad]}"
            )

        # Damped Newton on the closest-point system
        #   p + lam * grad phi(p) = x,   phi(p) = 0,
        # so that d = lam * |grad phi(p)| carries the sign of phi(x).
        lam = val / gnorm**2
        p = X - lam[:, None] * g

        scale = 1.0 + np.linalg.norm(X, axis=-1)
        target = 1e-14 * scale
        res = np.full(m, np.inf)
        for _ in range(self.newton_max_iter):
            vp = np.atleast_1d(np.asarray(iface.phi(t, p), dtype=float))
            gp = np.atleast_2d(iface.grad(t, p))
            r1 = p + lam[:, None] * gp - X
            new_res = np.maximum(np.max(np.abs(r1), axis=-1), np.abs(vp))
            if np.all(new_res <= target):
                res = new_res
                break
            # damp: where the residual grew, pull the previous step back
            res = new_res
            H = np.atleast_3d(np.asarray(iface.phi_hess(t, p), dtype=float))
            if H.ndim == 3 and H.shape[0] != m:  # single-point hessian
                H = np.broadcast_to(H, (m, n, n))
            J = np.zeros((m, n + 1, n + 1))
            J[:, :n, :n] = np.eye(n) + lam[:, None, None] * H
            J[:, :n, n] = gp
            J[:, n, :n] = gp
            rhs = np.concatenate([r1, vp[:, None]], axis=1)
            try:
                delta = np.linalg.solve(J, rhs[:, :, None])[:, :, 0]
            except np.linalg.LinAlgError as exc:
                raise NoConvergence(f"projection system singular: {exc}") from exc
            step = 1.0
            for _damp in range(6):
                p_try = p - step * delta[:, :n]
                lam_try = lam - step * delta[:, n]
                vp_t = np.atleast_1d(np.asarray(iface.phi(t, p_try), dtype=float))
                gp_t = np.atleast_2d(iface.grad(t, p_try))
                r1_t = p_try + lam_try[:, None] * gp_t - X
                res_t = np.maximum(np.max(np.abs(r1_t), axis=-1), np.abs(vp_t))
                if np.all(res_t <= res * (1.0 - 1e-4) + target):
                    break
                step *= 0.5
            p = p - step * delta[:, :n]
            lam = lam - step * delta[:, n]
        else:
            vp = np.atleast_1d(np.asarray(iface.phi(t, p), dtype=float))
            if np.any(np.abs(vp) > self.newton_tol):
                raise NoConvergence(
                    f"projection stalled at |phi| = {np.max(np.abs(vp)):.3e} "
                    f"after {self.newton_max_iter} iterations"
                )

        vp = np.atleast_1d(np.asarray(iface.phi(t, p), dtype=float))
        if np.any(np.abs(vp) > self.newton_tol):
            raise NoConvergence(
                f"projection residual |phi| = {np.max(np.abs(vp)):.3e} "
                f"above newton_tol {self.newton_tol:.1e}"
            )
        gp = np.atleast_2d(iface.grad(t, p))
        gn = np.linalg.norm(gp, axis=-1)
        nvec = gp / gn[:, None]
        d = lam * gn
        if np.any(np.abs(d) > self.width):
            raise ChartOutOfRange(
                f"converged distance {np.max(np.abs(d)):.3e} exceeds tube "
                f"half-width {self.width:.3e}"
            )
        recon = np.linalg.norm(X - (p + d[:, None] * nvec), axis=-1)
        if np.any(recon > self.chart_tol * scale):
            raise NoConvergence(
                f"reconstruction error {recon.max():.3e} above chart_tol"
            )
        if single:
            return float(d[0]), p[0], nvec[0]
        return d, p, nvec

    def distance(self, t: float, x):
        """Signed distance only."""
        d, _, _ = self.project(t, x)
        return d


def signed_distance(chart: InterfaceChart, t: float, x):
    """Signed distance, closest point and unit normal for a tube point."""
    return chart.project(t, x)


def subtangential_residual(
    iface: MovingInterface,
    chart: InterfaceChart,
    t: float,
    x,
    tau: float,
    v,
    h: float,
) -> float:
    """Difference-quotient membership test for the space-time tangent cone.

    Evaluates ``dist(x + h v, Sigma(t + h tau)) / h``; a velocity consistent
    with the moving interface drives this to zero as ``h -> 0+``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    t_new = t + h * tau
    if not iface.contains_time(t_new):
        raise ValueError("t + h*tau leaves the time window")
    d, _, _ = chart.project(t_new, x + h * v)
    return abs(float(np.atleast_1d(d)[0])) / h
