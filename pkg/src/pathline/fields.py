"""Two-phase scenes: one-sided bulk fields, densities, interface conditions.

A scene bundles a moving interface with one-sided velocity fields ``v+``,
``v-`` (continuous up to the closure of their phase) and positive densities
``rho+``, ``rho-``.  The module validates the kinematic interface conditions
that make pathlines of the discontinuous field wellposed:

* mass-flux transmission   ``rho+ (v+ - w).n = rho- (v- - w).n``,
* no-slip                  ``P (v+ - v-) = 0``,
* transversality           the relative normal speeds share a common sign,

with ``w = V n`` the intrinsic interface velocity (normal speed times
normal).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import TransversalityViolation
from .geometry import Box, InterfaceChart, MovingInterface, normal_speed, tangent_projector

__all__ = [
    "Phase",
    "BulkField",
    "DensityField",
    "TwoPhaseScene",
    "phase_of",
    "jump",
    "validate_no_slip",
    "validate_transmission",
    "transversality_sign",
    "validate_scene",
    "sample_interface_points",
    "reversed_scene",
    "CheckResult",
    "ValidationReport",
]


class Phase(enum.IntEnum):
    """Phase label; integer values match the sign of the level set."""

    PLUS = 1
    INTERFACE = 0
    MINUS = -1


@dataclass
class BulkField:
    """One-sided velocity field defined on the closure of its phase graph."""

    eval: Callable
    growth_const: float = 10.0
    lipschitz_hint: Optional[float] = None

    def __call__(self, t, x):
        return np.asarray(self.eval(t, np.asarray(x, dtype=float)), dtype=float)


@dataclass
class DensityField:
    """Strictly positive scalar density, bounded below by ``lower_bound``."""

    eval: Callable
    lower_bound: float = 1e-6

    def __call__(self, t, x):
        return np.asarray(self.eval(t, np.asarray(x, dtype=float)), dtype=float)


@dataclass
class TwoPhaseScene:
    iface: MovingInterface
    chart: InterfaceChart
    v_plus: BulkField
    v_minus: BulkField
    rho_plus: DensityField
    rho_minus: DensityField
    tol_interface: float = 1e-8
    tol_noslip: float = 1e-9
    tol_transmission: float = 1e-9
    tol_grazing: float = 1e-10
    name: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.iface.dim

    def velocity(self, phase: Phase) -> BulkField:
        if phase == Phase.PLUS:
            return self.v_plus
        if phase == Phase.MINUS:
            return self.v_minus
        raise ValueError("bulk velocity requested for interface label")

    def density(self, phase: Phase) -> DensityField:
        return self.rho_plus if phase == Phase.PLUS else self.rho_minus

    def intrinsic_velocity(self, t, x):
        """Intrinsic interface velocity ``V n`` at interface points."""
        from .geometry import normal

        n = normal(self.iface, t, x)
        V = normal_speed(self.iface, t, x)
        return np.asarray(V)[..., None] * n if n.ndim > 1 else float(V) * n

    def grazing_tol(self, t, x) -> float:
        """Sign-zero band, scaled by the local field magnitude."""
        vp = np.linalg.norm(np.atleast_1d(self.v_plus(t, x)))
        vm = np.linalg.norm(np.atleast_1d(self.v_minus(t, x)))
        return self.tol_grazing * (1.0 + max(vp, vm))


def phase_of(scene: TwoPhaseScene, t: float, x) -> Phase:
    """Classify a point: INTERFACE within ``tol_interface`` of the zero set,
    otherwise the bulk phase matching the sign of the level set."""
    x = np.asarray(x, dtype=float)
    val = float(np.asarray(scene.iface.phi(t, x)))
    g = np.linalg.norm(np.atleast_2d(scene.iface.grad(t, x)), axis=-1)
    est = abs(val) / max(float(g[0]), scene.iface.grad_floor)
    if est > 10.0 * scene.tol_interface:
        return Phase.PLUS if val > 0 else Phase.MINUS
    d, _, _ = scene.chart.project(t, x)
    if abs(d) <= scene.tol_interface:
        return Phase.INTERFACE
    return Phase.PLUS if d > 0 else Phase.MINUS


def relative_normal_speeds(scene: TwoPhaseScene, t: float, x):
    """One-sided relative normal speeds ``u± = (v± - w).n`` at the projected
    interface point of ``x``.  Returns ``(u_plus, u_minus, pi, n, V)``."""
    _, pi, n = scene.chart.project(t, x)
    V = normal_speed(scene.iface, t, pi)
    up = float(np.dot(scene.v_plus(t, pi), n)) - V
    um = float(np.dot(scene.v_minus(t, pi), n)) - V
    return up, um, pi, n, V


def jump(scene: TwoPhaseScene, t: float, x, selector: str = "velocity"):
    """One-sided jump ``(.)+ - (.)-`` at an interface point.

    ``selector`` picks the jumped quantity: the velocity vector, the scalar
    density, or the normal mass flux ``rho (v - w).n`` whose jump vanishes
    on valid scenes.
    """
    if selector == "velocity":
        return scene.v_plus(t, x) - scene.v_minus(t, x)
    if selector == "density":
        return float(scene.rho_plus(t, x) - scene.rho_minus(t, x))
    if selector == "mass_flux":
        up, um, pi, _, _ = relative_normal_speeds(scene, t, x)
        return float(scene.rho_plus(t, pi)) * up - float(scene.rho_minus(t, pi)) * um
    raise ValueError(f"unknown jump selector {selector!r}")


def validate_no_slip(scene: TwoPhaseScene, t: float, x) -> float:
    """Norm of the tangential velocity jump at an interface point."""
    _, pi, n = scene.chart.project(t, x)
    P = tangent_projector(n)
    return float(np.linalg.norm(P @ (scene.v_plus(t, pi) - scene.v_minus(t, pi))))


def validate_transmission(scene: TwoPhaseScene, t: float, x) -> float:
    """Mass-flux transmission residual at an interface point."""
    up, um, pi, _, _ = relative_normal_speeds(scene, t, x)
    return abs(float(scene.rho_plus(t, pi)) * up - float(scene.rho_minus(t, pi)) * um)


def transversality_sign(scene: TwoPhaseScene, t: float, x) -> int:
    """Common sign of the relative normal speeds: +1, -1 or 0 (grazing).

    Raises :class:`TransversalityViolation` when the two sides carry
    strictly opposite signs beyond the grazing band (attracting interface,
    outside the wellposed regime).  When exactly one side sits inside the
    band, the sign of the other side is returned.
    """
    up, um, pi, _, _ = relative_normal_speeds(scene, t, x)
    tol = scene.grazing_tol(t, pi)
    sp = 0 if abs(up) <= tol else (1 if up > 0 else -1)
    sm = 0 if abs(um) <= tol else (1 if um > 0 else -1)
    if sp * sm == -1:
        raise TransversalityViolation(
            f"relative normal speeds u+={up:.3e}, u-={um:.3e} have opposite "
            f"signs at t={t}",
            t=t, x=np.asarray(x, dtype=float), u_plus=up, u_minus=um,
        )
    if sp == sm:
        return sp
    return sp if sm == 0 else sm


# ---------------------------------------------------------------------------
# interface sampling and scene validation
# ---------------------------------------------------------------------------

def _scan_axis(iface: MovingInterface, t: float, count: int, axis: int,
               samples_per_line: int = 96):
    """Find interface points by bisecting sign changes along grid lines
    parallel to ``axis``.  Returns an (m, n) array, possibly empty."""
    box = iface.domain
    n = iface.dim
    others = [k for k in range(n) if k != axis]

    def line_roots(stations):
        # stations: (S, n-1) coordinates on the other axes
        S = stations.shape[0]
        ts = np.linspace(box.lo[axis], box.hi[axis], samples_per_line)
        pts = np.empty((S, samples_per_line, n))
        for j, k in enumerate(others):
            pts[:, :, k] = stations[:, j][:, None]
        pts[:, :, axis] = ts[None, :]
        vals = np.asarray(iface.phi(t, pts.reshape(-1, n))).reshape(S, samples_per_line)
        sgn = np.sign(vals)
        flips = np.nonzero(sgn[:, :-1] * sgn[:, 1:] < 0)
        if flips[0].size == 0:
            return np.empty((0, n)), np.empty(0, dtype=int)
        lo = pts[flips[0], flips[1]].copy()
        hi = pts[flips[0], flips[1] + 1].copy()
        flo = vals[flips[0], flips[1]].copy()
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            fm = np.asarray(iface.phi(t, mid))
            left = flo * fm > 0
            lo[left] = mid[left]
            flo[left] = fm[left]
            hi[~left] = mid[~left]
        return 0.5 * (lo + hi), flips[0]

    # coarse pass over the whole box, then a refined pass over the span of
    # stations that actually hit the interface
    per_axis = max(count, 32)
    if n == 2:
        grids = [np.linspace(box.lo[others[0]], box.hi[others[0]], per_axis)]
    else:
        side = max(2, int(np.ceil(per_axis ** (1.0 / (n - 1)))))
        grids = [np.linspace(box.lo[k], box.hi[k], side) for k in others]
    mesh = np.meshgrid(*grids, indexing="ij")
    stations = np.stack([m.ravel() for m in mesh], axis=-1)
    roots, hit = line_roots(stations)
    if roots.shape[0] == 0:
        return roots
    if n == 2:
        hit_coords = stations[np.unique(hit), 0]
        spread = hit_coords.max() - hit_coords.min()
        gap = grids[0][1] - grids[0][0]
        if spread < 0.8 * (box.hi[others[0]] - box.lo[others[0]]):
            fine = np.linspace(hit_coords.min() - gap, hit_coords.max() + gap, per_axis)
            roots2, _ = line_roots(fine[:, None])
            if roots2.shape[0] >= roots.shape[0]:
                roots = roots2
    return roots


def sample_interface_points(iface: MovingInterface, t: float, count: int) -> np.ndarray:
    """Deterministically sample up to ``count`` points on the interface at
    time ``t`` by scanning grid lines of the domain box."""
    n = iface.dim
    for axis in [n - 1] + list(range(n - 1)):
        roots = _scan_axis(iface, t, count, axis)
        if roots.shape[0] > 0:
            if roots.shape[0] > count:
                idx = np.round(np.linspace(0, roots.shape[0] - 1, count)).astype(int)
                roots = roots[idx]
            return roots
    return np.empty((0, n))


@dataclass
class CheckResult:
    name: str
    max_residual: float
    tol: float
    passed: bool
    samples: int

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "max_residual": self.max_residual,
            "tol": self.tol,
            "passed": self.passed,
            "samples": self.samples,
        }


@dataclass
class ValidationReport:
    scene: str
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "scene": self.scene,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
        }

    def __str__(self) -> str:
        lines = [f"scene {self.scene}: {'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            lines.append(
                f"  {c.name:<14s} max residual {c.max_residual:.3e}  "
                f"tol {c.tol:.1e}  samples {c.samples:4d}  {status}"
            )
        return "\n".join(lines)


def validate_scene(scene: TwoPhaseScene, n_times: int = 50, n_points: int = 50,
                   t_span: Optional[tuple] = None) -> ValidationReport:
    """Sample the interface graph on a time-by-surface grid and report the
    maximal residuals of the growth, no-slip, transmission and
    transversality conditions."""
    a, b = scene.iface.time_window
    if t_span is None:
        pad = 1e-3 * (b - a)
        t_span = (a + pad, b - pad)
    times = np.linspace(t_span[0], t_span[1], n_times)

    noslip = 0.0
    transm = 0.0
    transv = 0.0
    surf_samples = 0
    for t in times:
        pts = sample_interface_points(scene.iface, float(t), n_points)
        if pts.shape[0] == 0:
            continue
        surf_samples += pts.shape[0]
        _, pis, ns = scene.chart.project(float(t), pts)
        V = np.atleast_1d(normal_speed(scene.iface, float(t), pis))
        vp = np.atleast_2d(scene.v_plus(float(t), pis))
        vm = np.atleast_2d(scene.v_minus(float(t), pis))
        rp = np.atleast_1d(scene.rho_plus(float(t), pis))
        rm = np.atleast_1d(scene.rho_minus(float(t), pis))
        up = np.einsum("ij,ij->i", vp, ns) - V
        um = np.einsum("ij,ij->i", vm, ns) - V
        jumps = vp - vm
        tang = jumps - np.einsum("ij,ij->i", jumps, ns)[:, None] * ns
        noslip = max(noslip, float(np.max(np.linalg.norm(tang, axis=-1))))
        transm = max(transm, float(np.max(np.abs(rp * up - rm * um))))
        vmax = np.maximum(np.linalg.norm(vp, axis=-1), np.linalg.norm(vm, axis=-1))
        tol_g = scene.tol_grazing * (1.0 + vmax)
        strict = (np.abs(up) > tol_g) & (np.abs(um) > tol_g) & (np.sign(up) != np.sign(um))
        if np.any(strict):
            transv = max(transv, float(np.max(
                np.minimum(np.abs(up[strict]), np.abs(um[strict])))))

    # growth check on a bulk grid
    growth = 0.0
    box = scene.iface.domain
    side = 24 if scene.dim == 2 else 10
    axes = [np.linspace(box.lo[k], box.hi[k], side) for k in range(scene.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=-1)
    growth_samples = 0
    for t in times[:: max(1, n_times // 8)]:
        val = np.asarray(scene.iface.phi(float(t), grid))
        for phase, fld in ((Phase.PLUS, scene.v_plus), (Phase.MINUS, scene.v_minus)):
            mask = val > 0 if phase == Phase.PLUS else val < 0
            if not np.any(mask):
                continue
            pts = grid[mask]
            growth_samples += pts.shape[0]
            v = np.atleast_2d(fld(float(t), pts))
            bound = fld.growth_const * (1.0 + np.linalg.norm(pts, axis=-1))
            growth = max(growth, float(np.max(
                np.linalg.norm(v, axis=-1) - bound)))
    growth = max(growth, 0.0)

    checks = [
        CheckResult("growth", growth, 0.0, growth <= 0.0, growth_samples),
        CheckResult("no_slip", noslip, scene.tol_noslip,
                    noslip <= scene.tol_noslip, surf_samples),
        CheckResult("transmission", transm, scene.tol_transmission,
                    transm <= scene.tol_transmission, surf_samples),
        CheckResult("transversality", transv, 0.0, transv <= 0.0, surf_samples),
    ]
    return ValidationReport(scene.name or "<unnamed>", checks)


def reversed_scene(scene: TwoPhaseScene, pivot: float) -> TwoPhaseScene:
    """Scene driving the time-reversed motion: ``t -> 2*pivot - t`` with
    negated velocities.  Interface conditions are preserved with flipped
    relative normal speeds."""
    p = float(pivot)
    iface = scene.iface
    a, b = iface.time_window
    rev_iface = MovingInterface(
        dim=iface.dim,
        phi=lambda t, x: iface.phi(2 * p - t, x),
        phi_grad_x=lambda t, x: iface.phi_grad_x(2 * p - t, x),
        phi_dt=lambda t, x: -np.asarray(iface.phi_dt(2 * p - t, x)),
        phi_hess=lambda t, x: iface.phi_hess(2 * p - t, x),
        time_window=(2 * p - b, 2 * p - a),
        domain=iface.domain,
        grad_floor=iface.grad_floor,
        name=iface.name + "_reversed",
    )
    rev_chart = InterfaceChart(
        rev_iface, scene.chart.width, scene.chart.newton_tol,
        scene.chart.newton_max_iter, scene.chart.chart_tol,
    )
    neg = lambda f: (lambda t, x: -np.asarray(f(2 * p - t, x), dtype=float))
    shift = lambda f: (lambda t, x: f(2 * p - t, x))
    return TwoPhaseScene(
        iface=rev_iface,
        chart=rev_chart,
        v_plus=BulkField(neg(scene.v_plus.eval), scene.v_plus.growth_const,
                         scene.v_plus.lipschitz_hint),
        v_minus=BulkField(neg(scene.v_minus.eval), scene.v_minus.growth_const,
                          scene.v_minus.lipschitz_hint),
        rho_plus=DensityField(shift(scene.rho_plus.eval), scene.rho_plus.lower_bound),
        rho_minus=DensityField(shift(scene.rho_minus.eval), scene.rho_minus.lower_bound),
        tol_interface=scene.tol_interface,
        tol_noslip=scene.tol_noslip,
        tol_transmission=scene.tol_transmission,
        tol_grazing=scene.tol_grazing,
        name=scene.name + "~rev",
        metadata=dict(scene.metadata, reversed_pivot=p),
    )
