"""Normal-preserving extension of surface fields off the interface.

A scalar surface field ``f_S`` is extended into the chart tube by

    f(t, x) = f_S(t, pi(t, x)) - d/V(d) * integral_{|x-y| <= |d|} g(t, y) dy

with ``d`` the signed distance, ``pi`` the closest-point projection and
``V(r)`` the ball volume.  Choosing ``g`` as the sum of normal components
of the tangential derivatives of the intrinsic interface velocity yields
a velocity extension whose flow transports interface normals by its own
Jacobian; that construction lives in :class:`VelocityExtension`.

Ball and sphere integrals use product quadrature on the unit ball
(Gauss-Legendre in radius, trapezoid/Gauss-Legendre in the angles),
rescaled to radius ``|d|``.  Constants are integrated exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    DegenerateFrame,
    NotImplementedDimension,
    QuadratureBallEscapesTube,
)
from .fields import TwoPhaseScene
from .geometry import InterfaceChart, normal_speed

__all__ = [
    "BallQuadrature",
    "SurfaceScalarField",
    "TangentFrame",
    "tangent_frame",
    "extend_scalar",
    "extension_gradient",
    "extend_velocity",
    "ExtensionConfig",
    "VelocityExtension",
]

_BALL_VOLUME = {2: np.pi, 3: 4.0 * np.pi / 3.0}


class BallQuadrature:
    """Product quadrature nodes on the unit ball and unit sphere.

    ``ball_z``/``ball_w`` integrate over the unit ball (weights sum to the
    unit-ball volume), ``sphere_z``/``sphere_w`` over the unit sphere
    (weights sum to its area).  Integrals over radius ``r`` follow by
    rescaling: ``int_{B_r(x)} g = r^n sum_q w_q g(x + r z_q)``.
    """

    def __init__(self, dim: int, radial_points: int = 32, angular_points: int = 64):
        if dim not in (2, 3):
            raise NotImplementedDimension(f"ball quadrature only for n in {{2,3}}, got {dim}")
        self.dim = dim
        self.radial_points = int(radial_points)
        self.angular_points = int(angular_points)

        xi, wr = np.polynomial.legendre.leggauss(self.radial_points)
        rho = 0.5 * (xi + 1.0)
        wr = 0.5 * wr
        K = self.angular_points
        theta = 2.0 * np.pi * np.arange(K) / K
        wt = 2.0 * np.pi / K

        if dim == 2:
            circ = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
            self.ball_z = (rho[:, None, None] * circ[None, :, :]).reshape(-1, 2)
            self.ball_w = (wr * rho)[:, None].repeat(K, axis=1).ravel() * wt
            self.sphere_z = circ
            self.sphere_w = np.full(K, wt)
        else:
            n_mu = max(4, K // 2)
            mu, wmu = np.polynomial.legendre.leggauss(n_mu)
            smu = np.sqrt(1.0 - mu**2)
            dirs = np.stack(
                [
                    (smu[:, None] * np.cos(theta)[None, :]).ravel(),
                    (smu[:, None] * np.sin(theta)[None, :]).ravel(),
                    np.repeat(mu, K),
                ],
                axis=-1,
            )
            wdir = np.repeat(wmu, K) * wt
            self.ball_z = (rho[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
            self.ball_w = ((wr * rho**2)[:, None] * wdir[None, :]).ravel()
            self.sphere_z = dirs
            self.sphere_w = wdir

    @property
    def unit_ball_volume(self) -> float:
        return _BALL_VOLUME[self.dim]

    def ball_volume(self, r: float) -> float:
        return _BALL_VOLUME[self.dim] * abs(r) ** self.dim

    def sphere_area(self, r: float) -> float:
        return self.dim * _BALL_VOLUME[self.dim] * abs(r) ** (self.dim - 1)

    def refined(self, factor: int = 2) -> "BallQuadrature":
        return BallQuadrature(self.dim, self.radial_points * factor,
                              self.angular_points * factor)


@dataclass
class SurfaceScalarField:
    """Scalar field on the moving interface with (optional) surface gradient.

    When ``surface_grad`` is omitted it is computed as the tangential
    projection of a finite-difference gradient of the projected composition
    ``x -> eval(t, pi(t, x))``.
    """

    eval: Callable
    surface_grad: Optional[Callable] = None

    def __call__(self, t, x):
        return np.asarray(self.eval(t, np.asarray(x, dtype=float)), dtype=float)

    def grad_on_surface(self, chart: InterfaceChart, t, x) -> np.ndarray:
        if self.surface_grad is not None:
            return np.asarray(self.surface_grad(t, np.asarray(x, dtype=float)), dtype=float)
        g = _grad_projected_composition(self, chart, t, np.asarray(x, dtype=float))
        _, _, n = chart.project(t, x)
        return g - np.dot(g, n) * n


def _grad_projected_composition(f_surface, chart: InterfaceChart, t, x,
                                step: Optional[float] = None) -> np.ndarray:
    """Central FD gradient of ``x -> f_surface(t, pi(t, x))`` at one point."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = step if step is not None else 1e-6 * (1.0 + float(np.linalg.norm(x)))
    probes = np.repeat(x[None, :], 2 * n, axis=0)
    for k in range(n):
        probes[2 * k, k] += h
        probes[2 * k + 1, k] -= h
    _, pis, _ = chart.project(t, probes)
    vals = np.atleast_1d(f_surface(t, pis))
    return (vals[0::2] - vals[1::2]) / (2.0 * h)


@dataclass
class TangentFrame:
    """Orthonormal tangent frame at an interface point."""

    t: float
    x: np.ndarray
    vectors: np.ndarray      # (n-1, n)
    seeds: np.ndarray        # (n-1, n)


def default_seed_basis(n_vec: np.ndarray) -> np.ndarray:
    """Canonical seed basis: all coordinate axes except the one most
    parallel to the given normal."""
    n_vec = np.asarray(n_vec, dtype=float)
    n = n_vec.size
    drop = int(np.argmax(np.abs(n_vec)))
    return np.eye(n)[[k for k in range(n) if k != drop]]


def _orthonormal_frames(normals: np.ndarray, seeds: np.ndarray,
                        tol: float = 1e-8) -> np.ndarray:
    """Batched Gram-Schmidt of seed vectors projected onto tangent planes.

    ``normals``: (m, n); ``seeds``: (m, n-1, n) or (n-1, n).
    Returns (m, n-1, n).  Raises DegenerateFrame when a projected seed has
    norm below ``tol`` relative to its original length.
    """
    normals = np.atleast_2d(normals)
    m, n = normals.shape
    if seeds.ndim == 2:
        seeds = np.broadcast_to(seeds, (m,) + seeds.shape)
    frames = np.empty((m, n - 1, n))
    for k in range(n - 1):
        v = seeds[:, k, :].astype(float).copy()
        v -= np.einsum("ij,ij->i", v, normals)[:, None] * normals
        for j in range(k):
            v -= np.einsum("ij,ij->i", v, frames[:, j, :])[:, None] * frames[:, j, :]
        norms = np.linalg.norm(v, axis=-1)
        if np.any(norms < tol):
            raise DegenerateFrame(
                f"projected seed {k} nearly dependent (min norm {norms.min():.3e}); "
                "reseed the tangent basis"
            )
        frames[:, k, :] = v / norms[:, None]
    return frames


def tangent_frame(chart: InterfaceChart, t: float, x, seeds=None,
                  cond_max: float = 1e8) -> TangentFrame:
    """Orthonormal tangent frame at (the projection of) an interface point,
    obtained by Gram-Schmidt on seed vectors projected to the tangent plane."""
    x = np.asarray(x, dtype=float)
    _, pi, n_vec = chart.project(t, x)
    if seeds is None:
        seeds = default_seed_basis(n_vec)
    seeds = np.asarray(seeds, dtype=float)
    if seeds.shape != (x.size - 1, x.size):
        raise ValueError("seed basis must have shape (n-1, n)")
    proj = seeds - (seeds @ n_vec)[:, None] * n_vec[None, :]
    s = np.linalg.svd(proj, compute_uv=False)
    if s[-1] <= 0 or s[0] / s[-1] > cond_max:
        raise DegenerateFrame(
            f"projected seeds condition {s[0] / max(s[-1], 1e-300):.3e} "
            f"exceeds {cond_max:.1e}"
        )
    frame = _orthonormal_frames(n_vec[None, :], seeds[None, :, :])[0]
    return TangentFrame(t=t, x=pi, vectors=frame, seeds=seeds)


def _require_ball_in_tube(d, width):
    d = np.atleast_1d(d)
    if np.any(2.0 * np.abs(d) > width):
        raise QuadratureBallEscapesTube(
            f"ball radius {np.max(np.abs(d)):.3e} too large for tube "
            f"half-width {width:.3e}"
        )


def extend_scalar(f_surface: SurfaceScalarField, g: Callable,
                  chart: InterfaceChart, quad: BallQuadrature,
                  t: float, x) -> float:
    """Ball-average extension of a surface scalar field at a tube point."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    d, pi, _ = chart.project(t, X)
    d = np.atleast_1d(d)
    _require_ball_in_tube(d, chart.width)
    vals = np.atleast_1d(f_surface(t, pi)).astype(float)
    mask = np.abs(d) > 1e-300
    if np.any(mask):
        centers = X[mask]
        radii = np.abs(d[mask])
        nodes = centers[:, None, :] + radii[:, None, None] * quad.ball_z[None, :, :]
        m, Q, n = nodes.shape
        gv = np.atleast_1d(g(t, nodes.reshape(-1, n))).reshape(m, Q)
        avg = gv @ quad.ball_w                     # = int_ball g / |d|^n
        vals[mask] -= d[mask] / quad.unit_ball_volume * avg
    return float(vals[0]) if single else vals


def extension_gradient(f_surface: SurfaceScalarField, g: Callable,
                       chart: InterfaceChart, quad: BallQuadrature,
                       t: float, x, on_tol: float = 1e-12) -> np.ndarray:
    """Spatial gradient of the ball-average extension.

    Off the interface this combines the gradient of the projected surface
    value with a ball average, a sphere average and a first-moment sphere
    term.  Within ``on_tol`` of the interface the limit formula
    ``grad_S f_S - g n`` is used.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("extension_gradient takes a single point")
    d, pi, n_vec = chart.project(t, x)
    if abs(d) <= on_tol:
        gs = f_surface.grad_on_surface(chart, t, pi)
        return gs - float(np.atleast_1d(g(t, pi))[0]) * n_vec
    _require_ball_in_tube(d, chart.width)

    grad_comp = _grad_projected_composition(f_surface, chart, t, x)
    r = abs(d)
    ball_nodes = x[None, :] + r * quad.ball_z
    sph_nodes = x[None, :] + r * quad.sphere_z
    gb = np.atleast_1d(g(t, ball_nodes))
    gs_ = np.atleast_1d(g(t, sph_nodes))
    B = float(gb @ quad.ball_w)                    # int_ball g / r^n
    S0 = float(gs_ @ quad.sphere_w)                # int_sphere g / r^(n-1)
    S1 = (gs_ * quad.sphere_w) @ quad.sphere_z     # first moment / r^(n-1)
    wn = quad.unit_ball_volume
    nd = quad.dim
    return (
        grad_comp
        + n_vec * ((nd - 1) * B / wn)
        - n_vec * (S0 / wn)
        - np.sign(d) * S1 / wn
    )


@dataclass
class ExtensionConfig:
    """Knobs for the velocity extension and its numerical derivatives."""

    quad: Optional[BallQuadrature] = None
    seeds: Optional[np.ndarray] = None
    surface_fd_step: float = 1e-6
    grad_fd_step: float = 1e-5
    on_tol: float = 1e-13


class VelocityExtension:
    """Extension of the intrinsic interface velocity ``V n`` into the tube.

    The extension subtracts the ball average of the normal components of
    the tangential derivatives of the surface velocity, which makes the
    associated flow transport interface normals by its Jacobian.  Instances
    are callable on single points or batches and expose a finite-difference
    spatial Jacobian.
    """

    def __init__(self, scene: TwoPhaseScene, config: Optional[ExtensionConfig] = None):
        self.scene = scene
        self.chart = scene.chart
        cfg = config or ExtensionConfig()
        self.quad = cfg.quad or BallQuadrature(scene.dim)
        if self.quad.dim != scene.dim:
            raise NotImplementedDimension("quadrature dimension mismatch")
        self.seeds = None if cfg.seeds is None else np.asarray(cfg.seeds, dtype=float)
        self.surface_fd_step = cfg.surface_fd_step
        self.grad_fd_step = cfg.grad_fd_step
        self.on_tol = cfg.on_tol

    def _surface_velocity(self, t, pts):
        """Intrinsic velocity ``V n`` at on-surface points (batched)."""
        iface = self.scene.iface
        g = np.atleast_2d(iface.grad(t, pts))
        gn = np.linalg.norm(g, axis=-1)
        n = g / gn[:, None]
        V = -np.atleast_1d(np.asarray(iface.phi_dt(t, pts), dtype=float)) / gn
        return V[:, None] * n

    def __call__(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        m, n = X.shape
        d, P, N = self.chart.project(t, X)
        d = np.atleast_1d(d)
        P = np.atleast_2d(P)
        N = np.atleast_2d(N)
        _require_ball_in_tube(d, self.chart.width)
        out = self._surface_velocity(t, P)

        mask = np.abs(d) > self.on_tol
        if np.any(mask):
            idx = np.nonzero(mask)[0]
            centers = X[idx]
            radii = np.abs(d[idx])
            Z, W = self.quad.ball_z, self.quad.ball_w
            Q = Z.shape[0]
            nodes = centers[:, None, :] + radii[:, None, None] * Z[None, :, :]
            nodes = nodes.reshape(-1, n)
            _, Py, Ny = self.chart.project(t, nodes)
            Py = np.atleast_2d(Py)
            Ny = np.atleast_2d(Ny)

            if self.seeds is not None:
                seed_arr = np.broadcast_to(self.seeds, (idx.size, n - 1, n))
            else:
                seed_arr = np.stack([default_seed_basis(N[i]) for i in idx])
            seeds_nodes = np.repeat(seed_arr, Q, axis=0)
            frames = _orthonormal_frames(Ny, seeds_nodes)

            h = self.surface_fd_step
            integrand = np.zeros_like(Py)
            for k in range(n - 1):
                tau = frames[:, k, :]
                _, qp, _ = self.chart.project(t, Py + h * tau)
                _, qm, _ = self.chart.project(t, Py - h * tau)
                dv = (self._surface_velocity(t, np.atleast_2d(qp))
                      - self._surface_velocity(t, np.atleast_2d(qm))) / (2.0 * h)
                integrand += np.einsum("ij,ij->i", dv, Ny)[:, None] * tau

            F = np.einsum("q,iqj->ij", W, integrand.reshape(idx.size, Q, n))
            out[idx] -= (d[idx] / self.quad.unit_ball_volume)[:, None] * F
        return out[0] if single else out

    def gradient(self, t: float, x) -> np.ndarray:
        """Central finite-difference spatial Jacobian d v_hat / d x."""
        x = np.asarray(x, dtype=float)
        n = x.size
        h = self.grad_fd_step
        probes = np.repeat(x[None, :], 2 * n, axis=0)
        for k in range(n):
            probes[2 * k, k] += h
            probes[2 * k + 1, k] -= h
        vals = self(t, probes)
        jac = np.empty((n, n))
        for k in range(n):
            jac[:, k] = (vals[2 * k] - vals[2 * k + 1]) / (2.0 * h)
        return jac


def extend_velocity(scene: TwoPhaseScene, chart: InterfaceChart,
                    quad: BallQuadrature, seeds, t: float, x) -> np.ndarray:
    """Functional entry point for the velocity extension at a point."""
    if chart is not scene.chart:
        raise ValueError("chart must be the scene's interface chart")
    ext = VelocityExtension(scene, ExtensionConfig(quad=quad, seeds=seeds))
    return ext(t, x)
