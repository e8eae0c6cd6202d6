"""Numerical uniqueness verifiers for flattened two-phase pathlines.

The wellposedness argument reduces a moving-interface scene to a static
flat interface ``{x_n = 0}`` in two stages (conjugation by the flow of the
extended interface velocity, then a graph-flattening coordinate change)
and derives a Gronwall inequality for the functional

    phi(t) = | rho(t) x_n(t) - rho_bar(t) xbar_n(t) | + | x_par - xbar_par |

along any two candidate solutions, with density weights selected by the
side each solution currently occupies and evaluated at the tangential
midpoint.  This module implements the flattening transform ``H`` with its
Jacobian identities, the transformed interface conditions, the functional
``phi`` with its fitted Gronwall constant, and the quadratic energy
``psi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import SingularJacobian
from .fields import (
    BulkField,
    DensityField,
    Phase,
    TwoPhaseScene,
)
from .geometry import Box, InterfaceChart, MovingInterface
from .integrate import IntegratorConfig, Trajectory, jacobian_flow, trace

__all__ = [
    "FlatteningTransform",
    "FlatCheckFields",
    "flatten_field",
    "check_flat_transmission",
    "check_flat_tangential",
    "UniquenessMonitor",
    "phi_functional",
    "psi_energy",
    "gronwall_check",
    "GronwallResult",
    "twin_experiment",
    "TwinReport",
    "flat_scene",
    "pullback_fields",
    "estimate_lipschitz",
]


class FlatteningTransform:
    """Height-function coordinate change mapping ``{x_n = 0}`` onto the
    graph ``{x_n = h(x')}`` while sending the vertical axis to the graph
    normal.

    ``H(x', x_n) = (x' - x_n m(x'), h(x') + x_n / s(x'))`` with
    ``m = grad h / s`` and ``s = sqrt(1 + |grad h|^2)``; at ``x_n = 0`` its
    Jacobian maps ``e_n`` to the upward unit normal of the graph.
    """

    def __init__(self, height: Callable, grad_height: Callable,
                 hess_height: Optional[Callable] = None,
                 prime_box: Optional[tuple] = None,
                 thickness: float = 0.5,
                 cond_max: float = 1e8):
        self.height = height
        self.grad_height = grad_height
        self.hess_height = hess_height
        self.prime_box = prime_box
        self.thickness = float(thickness)
        self.cond_max = float(cond_max)

    # -- basic maps --------------------------------------------------------

    def _h(self, xp):
        return np.asarray(self.height(np.asarray(xp, dtype=float)), dtype=float)

    def _grad(self, xp):
        return np.asarray(self.grad_height(np.asarray(xp, dtype=float)), dtype=float)

    def _hess(self, xp):
        xp = np.asarray(xp, dtype=float)
        if self.hess_height is not None:
            return np.asarray(self.hess_height(xp), dtype=float)
        k = xp.size
        step = 1e-7 * (1.0 + float(np.linalg.norm(xp)))
        H = np.empty((k, k))
        for j in range(k):
            e = np.zeros(k)
            e[j] = step
            H[:, j] = (self._grad(xp + e) - self._grad(xp - e)) / (2.0 * step)
        return 0.5 * (H + H.T)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        xp, xn = x[..., :-1], x[..., -1]
        u = self._grad(xp)
        s = np.sqrt(1.0 + np.sum(np.atleast_1d(u) ** 2, axis=-1))
        top = xp - (xn / s)[..., None] * u if x.ndim > 1 else xp - xn * u / s
        bot = self._h(xp) + xn / s
        return np.concatenate([np.atleast_1d(top), np.atleast_1d(bot)[..., None]], axis=-1) \
            if x.ndim > 1 else np.append(top, bot)

    def normal(self, xp) -> np.ndarray:
        """Upward unit normal of the graph at ``(x', h(x'))``."""
        u = self._grad(xp)
        s = float(np.sqrt(1.0 + np.dot(u, u)))
        return np.append(-u, 1.0) / s

    def jacobian(self, x) -> np.ndarray:
        """Analytic Jacobian ``H'(x)`` (one point)."""
        x = np.asarray(x, dtype=float)
        xp, xn = x[:-1], float(x[-1])
        k = xp.size
        u = self._grad(xp)
        s = float(np.sqrt(1.0 + np.dot(u, u)))
        Hh = self._hess(xp)
        uHu = u @ Hh                       # row vector u^T Hess
        M = Hh / s - np.outer(u, uHu) / s**3
        J = np.empty((k + 1, k + 1))
        J[:k, :k] = np.eye(k) - xn * M
        J[:k, k] = -u / s
        J[k, :k] = u - xn * uHu / s**3
        J[k, k] = 1.0 / s
        return J

    def conormal_residual(self, xp) -> float:
        """Defect of the transpose identity
        ``H'(x',0)^T (-grad h, 1) = s e_n`` at a base point."""
        xp = np.asarray(xp, dtype=float)
        u = self._grad(xp)
        s = float(np.sqrt(1.0 + np.dot(u, u)))
        J = self.jacobian(np.append(xp, 0.0))
        lhs = J.T @ np.append(-u, 1.0)
        rhs = s * np.eye(xp.size + 1)[-1]
        return float(np.linalg.norm(lhs - rhs))

    def inverse(self, y, tol: float = 1e-13, max_iter: int = 50) -> np.ndarray:
        """Newton inversion of ``H`` near the graph."""
        y = np.asarray(y, dtype=float)
        yp, yn = y[:-1], float(y[-1])
        u = self._grad(yp)
        s = float(np.sqrt(1.0 + np.dot(u, u)))
        x = np.append(yp, (yn - float(self._h(yp))) * s)
        scale = 1.0 + float(np.linalg.norm(y))
        for _ in range(max_iter):
            r = self(x) - y
            if np.max(np.abs(r)) <= tol * scale:
                return x
            J = self.jacobian(x)
            cond = np.linalg.cond(J)
            if not np.isfinite(cond) or cond > self.cond_max:
                raise SingularJacobian(
                    f"flattening Jacobian condition {cond:.3e} exceeds "
                    f"{self.cond_max:.1e}")
            x = x - np.linalg.solve(J, r)
        raise SingularJacobian("flattening inversion did not converge")


@dataclass
class FlatCheckFields:
    """One-sided fields and densities on the curved (image) side of the
    flattening transform, as produced by the moving-frame reduction or
    supplied analytically for desk-scale checks."""

    f_plus: Callable
    f_minus: Callable
    rho_plus: Callable
    rho_minus: Callable

    @classmethod
    def from_scene(cls, scene: TwoPhaseScene) -> "FlatCheckFields":
        return cls(
            f_plus=lambda t, y: scene.v_plus(t, y),
            f_minus=lambda t, y: scene.v_minus(t, y),
            rho_plus=lambda t, y: scene.rho_plus(t, y),
            rho_minus=lambda t, y: scene.rho_minus(t, y),
        )


def flatten_field(fields: FlatCheckFields, transform: FlatteningTransform,
                  phase: Phase, t: float, x) -> np.ndarray:
    """Pull one one-sided field through the flattening transform:
    ``g(t, x) = H'(x)^{-1} f(t, H(x))``."""
    x = np.asarray(x, dtype=float)
    f = fields.f_plus if phase == Phase.PLUS else fields.f_minus
    J = transform.jacobian(x)
    cond = np.linalg.cond(J)
    if not np.isfinite(cond) or cond > transform.cond_max:
        raise SingularJacobian(
            f"flattening Jacobian condition {cond:.3e} exceeds "
            f"{transform.cond_max:.1e}")
    return np.linalg.solve(J, np.asarray(f(t, transform(x)), dtype=float))


def _prime_grid(transform: FlatteningTransform, grid: int, dim_prime: int):
    if transform.prime_box is not None:
        lo, hi = transform.prime_box
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
    else:
        lo = -np.ones(dim_prime)
        hi = np.ones(dim_prime)
    axes = [np.linspace(lo[k], hi[k], grid) for k in range(dim_prime)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def check_flat_transmission(fields: FlatCheckFields,
                            transform: FlatteningTransform,
                            times: Sequence[float], grid: int = 64,
                            dim: int = 2) -> float:
    """Max residual of the flattened mass-flux transmission condition
    ``rho~+ g+_n = rho~- g-_n`` on the plane ``x_n = 0``."""
    pts = _prime_grid(transform, grid, dim - 1)
    worst = 0.0
    for t in times:
        for xp in pts:
            x = np.append(xp, 0.0)
            y = transform(x)
            gp = flatten_field(fields, transform, Phase.PLUS, t, x)
            gm = flatten_field(fields, transform, Phase.MINUS, t, x)
            rp = float(np.asarray(fields.rho_plus(t, y)))
            rm = float(np.asarray(fields.rho_minus(t, y)))
            worst = max(worst, abs(rp * gp[-1] - rm * gm[-1]))
    return worst


def check_flat_tangential(fields: FlatCheckFields,
                          transform: FlatteningTransform,
                          times: Sequence[float], grid: int = 64,
                          dim: int = 2) -> float:
    """Max magnitude of the tangential components of the flattened fields
    on ``x_n = 0``; vanishes when the relative motion is purely normal."""
    pts = _prime_grid(transform, grid, dim - 1)
    worst = 0.0
    for t in times:
        for xp in pts:
            x = np.append(xp, 0.0)
            gp = flatten_field(fields, transform, Phase.PLUS, t, x)
            gm = flatten_field(fields, transform, Phase.MINUS, t, x)
            worst = max(worst, float(np.max(np.abs(gp[:-1]))),
                        float(np.max(np.abs(gm[:-1]))))
    return worst


# ---------------------------------------------------------------------------
# uniqueness monitor
# ---------------------------------------------------------------------------

class UniquenessMonitor:
    """Density-weighted gap functional along two flat-scene trajectories.

    The density weight of each trajectory switches with the side of the
    flat interface it occupies (the plus branch at ``x_n = 0``) and is
    evaluated as the one-sided value at the tangential midpoint on the
    interface plane.
    """

    def __init__(self, scene: TwoPhaseScene, traj_a: Trajectory, traj_b: Trajectory):
        self.scene = scene
        self.traj_a = traj_a
        self.traj_b = traj_b
        self.event_times = sorted(
            [ev.t for ev in traj_a.events] + [ev.t for ev in traj_b.events]
        )

    def _weights(self, t: float, xa: np.ndarray, xb: np.ndarray):
        mid = 0.5 * (xa + xb)
        mid = mid.copy()
        mid[-1] = 0.0
        rho_a = self.scene.rho_plus(t, mid) if xa[-1] >= 0 else self.scene.rho_minus(t, mid)
        rho_b = self.scene.rho_plus(t, mid) if xb[-1] >= 0 else self.scene.rho_minus(t, mid)
        return float(np.asarray(rho_a)), float(np.asarray(rho_b))

    def phi(self, t: float) -> float:
        xa = self.traj_a.sample_at(t)
        xb = self.traj_b.sample_at(t)
        rho_a, rho_b = self._weights(t, xa, xb)
        normal_gap = abs(rho_a * xa[-1] - rho_b * xb[-1])
        tangent_gap = float(np.linalg.norm(xa[:-1] - xb[:-1]))
        return normal_gap + tangent_gap

    def psi(self, t: float) -> float:
        xa = self.traj_a.sample_at(t)
        xb = self.traj_b.sample_at(t)
        return 0.5 * float(np.dot(xa - xb, xa - xb))

    def sample_step(self) -> float:
        ts = self.traj_a.segments[0].t
        return float(np.median(np.abs(np.diff(ts)))) if ts.size > 1 else 0.0

    def valid_mask(self, times: np.ndarray, band_steps: float = 2.0) -> np.ndarray:
        """Mask of grid times outside a band around crossing events."""
        band = band_steps * max(self.sample_step(),
                                float(np.median(np.diff(times))) if times.size > 1 else 0.0)
        mask = np.ones(times.size, dtype=bool)
        for te in self.event_times:
            mask &= np.abs(times - te) > band
        return mask


def phi_functional(monitor: UniquenessMonitor, t: float) -> float:
    """Density-weighted normal gap plus tangential gap at time ``t``."""
    return monitor.phi(t)


def psi_energy(monitor: UniquenessMonitor, t: float) -> float:
    """Half squared Euclidean separation at time ``t``."""
    return monitor.psi(t)


@dataclass
class GronwallResult:
    K_fit: float
    passed: bool
    phi0: float
    phi_max: float
    envelope_ok: bool
    zero_twin: bool
    samples: int

    def to_dict(self) -> dict:
        return {
            "K_fit": self.K_fit,
            "passed": self.passed,
            "phi0": self.phi0,
            "phi_max": self.phi_max,
            "envelope_ok": self.envelope_ok,
            "zero_twin": self.zero_twin,
            "samples": self.samples,
        }


def gronwall_check(monitor: UniquenessMonitor, times,
                   slack: float = 1e-8,
                   atol_unique: float = 1e-7) -> GronwallResult:
    """Fit the smallest K with ``phi' <= K phi + slack`` on the grid
    (event neighborhoods excluded) and test the exponential envelope.

    For twins started from identical data the check degenerates to
    ``max phi <= atol_unique``, the numerical surrogate of uniqueness.
    """
    times = np.asarray(times, dtype=float)
    phis = np.array([monitor.phi(t) for t in times])
    mask = monitor.valid_mask(times)
    phi0 = phis[0]
    t0 = times[0]

    if phi0 <= atol_unique:
        phi_max = float(np.max(phis))
        ok = phi_max <= atol_unique
        return GronwallResult(0.0, ok, float(phi0), phi_max, ok, True,
                              int(mask.sum()))

    K = 0.0
    count = 0
    for i in range(1, times.size - 1):
        if not (mask[i - 1] and mask[i] and mask[i + 1]):
            continue
        dphi = (phis[i + 1] - phis[i - 1]) / (times[i + 1] - times[i - 1])
        if phis[i] > 1e-300:
            K = max(K, (dphi - slack) / phis[i])
            count += 1
    K = max(K, 0.0)
    env = (phi0 + slack * (times - t0)) * np.exp(K * (times - t0))
    envelope_ok = bool(np.all(phis[mask] <= env[mask] * (1.0 + 1e-9) + slack))
    return GronwallResult(float(K), envelope_ok, float(phi0),
                          float(np.max(phis)), envelope_ok, False, count)


def psi_inequality_defect(monitor: UniquenessMonitor, L: float, times) -> float:
    """Max of ``psi' - 2 L psi`` on the grid (event bands excluded); for
    twins with matching tangential parts this should not exceed numerical
    slack."""
    times = np.asarray(times, dtype=float)
    psis = np.array([monitor.psi(t) for t in times])
    mask = monitor.valid_mask(times)
    worst = -np.inf
    for i in range(1, times.size - 1):
        if not (mask[i - 1] and mask[i] and mask[i + 1]):
            continue
        dpsi = (psis[i + 1] - psis[i - 1]) / (times[i + 1] - times[i - 1])
        worst = max(worst, dpsi - 2.0 * L * psis[i])
    return worst


def ls_growth_rate(monitor: UniquenessMonitor, times, floor: float = 1e-300) -> float:
    """Least-squares slope of ``log phi`` over the grid (event bands
    excluded); a smoothed growth-rate estimate for stability studies."""
    times = np.asarray(times, dtype=float)
    phis = np.array([monitor.phi(t) for t in times])
    mask = monitor.valid_mask(times) & (phis > floor)
    if mask.sum() < 2:
        return 0.0
    A = np.stack([times[mask], np.ones(mask.sum())], axis=-1)
    coef, *_ = np.linalg.lstsq(A, np.log(phis[mask]), rcond=None)
    return float(coef[0])


# ---------------------------------------------------------------------------
# flat scenes and twin experiments
# ---------------------------------------------------------------------------

def flat_scene(dim: int, g_plus: Callable, g_minus: Callable,
               rho_plus: Callable, rho_minus: Callable,
               domain: Box, time_window: tuple,
               name: str = "flat",
               chart_width: Optional[float] = None,
               **tolerances) -> TwoPhaseScene:
    """Scene with the static flat interface ``{x_n = 0}``; the target of
    the flattening reduction and the natural habitat of the phi monitor."""
    last = dim - 1

    def phi(t, x):
        x = np.asarray(x, dtype=float)
        return x[..., last]

    def grad(t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        g = np.zeros_like(x)
        g[..., last] = 1.0
        return g

    def dt(t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    def hess(t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.zeros((x.shape[0], dim, dim))

    iface = MovingInterface(dim=dim, phi=phi, phi_grad_x=grad, phi_dt=dt,
                            phi_hess=hess, time_window=time_window,
                            domain=domain, name=name)
    width = chart_width if chart_width is not None else 0.25 * domain.diameter()
    chart = InterfaceChart(iface, width)
    return TwoPhaseScene(
        iface=iface, chart=chart,
        v_plus=BulkField(g_plus), v_minus=BulkField(g_minus),
        rho_plus=DensityField(rho_plus), rho_minus=DensityField(rho_minus),
        name=name, metadata={"flat": True}, **tolerances,
    )


def estimate_lipschitz(field: Callable, box: Box, times,
                       n_pairs: int = 400, seed: int = 0) -> float:
    """Sampled lower bound for the spatial Lipschitz constant of a field.

    Difference quotients over random point pairs only bound the constant
    from below; reports should flag the estimate as such.
    """
    rng = np.random.default_rng(seed)
    lo, hi = box.lo, box.hi
    worst = 0.0
    for t in np.atleast_1d(times):
        a = lo + (hi - lo) * rng.random((n_pairs, box.dim))
        b = a + 1e-3 * (rng.random((n_pairs, box.dim)) - 0.5)
        b = np.clip(b, lo, hi)
        for xa, xb in zip(a, b):
            dx = float(np.linalg.norm(xa - xb))
            if dx < 1e-12:
                continue
            df = float(np.linalg.norm(
                np.asarray(field(float(t), xa), dtype=float)
                - np.asarray(field(float(t), xb), dtype=float)))
            worst = max(worst, df / dx)
    return worst


@dataclass
class TwinRow:
    delta: float
    sep_end: float
    sup_sep: float
    ratio: float
    K_env: Optional[float] = None
    K_ls: Optional[float] = None
    envelope_ok: Optional[bool] = None
    phi0: Optional[float] = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


@dataclass
class TwinReport:
    scene: str
    t0: float
    t_end: float
    x0: list
    rows: list
    lipschitz_lower_bound: Optional[float] = None
    notes: str = "Lipschitz estimate is a sampled lower bound only."

    def to_dict(self) -> dict:
        return {
            "scene": self.scene,
            "t0": self.t0,
            "t_end": self.t_end,
            "x0": self.x0,
            "rows": [r.to_dict() for r in self.rows],
            "lipschitz_lower_bound": self.lipschitz_lower_bound,
            "notes": self.notes,
        }


def twin_experiment(scene: TwoPhaseScene, config: IntegratorConfig,
                    t0: float, x0, deltas, t_end: float,
                    direction=None, grid: int = 201,
                    seed: int = 0) -> TwinReport:
    """Continuity-in-initial-data study: integrate a base pathline and
    perturbed twins, report separations and (for flat scenes) the phi
    envelope with its fitted growth constants."""
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    if direction is None:
        direction = np.eye(n)[-1]
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)

    base = trace(scene, config, t0, x0, t_end, diagnostics=False)
    times = np.linspace(t0, t_end, grid)
    base_states = base.sample_at(times)
    is_flat = bool(scene.metadata.get("flat"))

    rows = []
    for delta in deltas:
        twin = trace(scene, config, t0, x0 + delta * direction, t_end,
                     diagnostics=False)
        twin_states = twin.sample_at(times)
        seps = np.linalg.norm(twin_states - base_states, axis=-1)
        row = TwinRow(
            delta=float(delta),
            sep_end=float(seps[-1]),
            sup_sep=float(np.max(seps)),
            ratio=float(seps[-1] / delta) if delta > 0 else float("nan"),
        )
        if is_flat:
            monitor = UniquenessMonitor(scene, base, twin)
            res = gronwall_check(monitor, times)
            row.K_env = res.K_fit
            row.K_ls = ls_growth_rate(monitor, times)
            row.envelope_ok = res.envelope_ok
            row.phi0 = res.phi0
        rows.append(row)

    lip = estimate_lipschitz(
        lambda t, x: scene.v_plus(t, x), scene.iface.domain,
        [t0, 0.5 * (t0 + t_end), t_end], seed=seed)
    return TwinReport(scene.name or "<unnamed>", float(t0), float(t_end),
                      [float(v) for v in x0], rows,
                      lipschitz_lower_bound=lip)


def pullback_fields(scene: TwoPhaseScene, extension, config: IntegratorConfig,
                    t0: float) -> FlatCheckFields:
    """Diagnostic reduction of a moving-interface scene to the fixed
    interface at ``t0`` by numerically conjugating with the flow of the
    extended interface velocity:

        f±(t, y) = DPhi(y)^{-1} ( v±(t, Phi(y)) - v_ext(t, Phi(y)) ).

    Every evaluation integrates the flow from ``t0`` to ``t``; this is a
    verification aid, not a solver path.
    """

    def make(side):
        fld = scene.v_plus if side == Phase.PLUS else scene.v_minus

        def f(t, y):
            x, jac = jacobian_flow(scene, extension, config, t0,
                                   np.asarray(y, dtype=float), t)
            rhs = np.asarray(fld(t, x), dtype=float) - np.asarray(
                extension(t, x), dtype=float)
            return np.linalg.solve(jac.matrix, rhs)

        return f

    def make_rho(side):
        rho = scene.rho_plus if side == Phase.PLUS else scene.rho_minus

        def r(t, y):
            x, _ = jacobian_flow(scene, extension, config, t0,
                                 np.asarray(y, dtype=float), t)
            return rho(t, x)

        return r

    return FlatCheckFields(
        f_plus=make(Phase.PLUS), f_minus=make(Phase.MINUS),
        rho_plus=make_rho(Phase.PLUS), rho_minus=make_rho(Phase.MINUS),
    )
