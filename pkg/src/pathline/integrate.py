"""Event-detecting integration of two-phase pathlines.

Within a bulk phase the one-sided field is smooth and a standard explicit
Runge-Kutta scheme applies.  Interface crossings are detected by sign
monitoring of the level set at accepted step endpoints, localized on the
cubic-Hermite dense output, and classified by the relative normal speeds
``u± = (v± - Vn).n``:

* common strict sign  -> cross into the phase the motion enters,
* both within the grazing band -> continue on the interface with the
  interface velocity (normal speed times normal plus the shared
  tangential part),
* strictly opposite signs -> :class:`TransversalityViolation` (the
  attracting case is outside the wellposed regime and is not integrated
  as sliding dynamics).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .errors import (
    LeftDomain,
    MaxStepsExceeded,
    SingularJacobian,
    TransversalityViolation,
)
from .fields import Phase, TwoPhaseScene, phase_of, relative_normal_speeds, reversed_scene
from .geometry import normal_speed

__all__ = [
    "IntegratorConfig",
    "CrossingEvent",
    "TrajectorySegment",
    "Trajectory",
    "FlowJacobian",
    "trace",
    "integrate_surface",
    "flow_map",
    "jacobian_flow",
    "normal_evolution_residual",
    "trace_backward",
    "trajectory_to_csv",
    "trajectory_to_json",
]


@dataclass
class IntegratorConfig:
    h: float = 1e-3
    scheme: str = "rk4"            # "rk4" (fixed step) or "rk45" (adaptive)
    tol_event: float = 1e-10
    tol_grazing: float = 1e-10
    max_steps: int = 1_000_000
    dense_output: bool = True
    rtol: float = 1e-10
    atol: float = 1e-12

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("step size must be positive")
        if self.scheme not in ("rk4", "rk45"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass
class CrossingEvent:
    t: float
    x: np.ndarray
    from_phase: Phase
    to_phase: Phase
    u_plus: float
    u_minus: float
    sign: int
    mode: str                      # "CROSS" or "SURFACE"

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "x": [float(v) for v in self.x],
            "from_phase": int(self.from_phase),
            "to_phase": int(self.to_phase),
            "u_plus": self.u_plus,
            "u_minus": self.u_minus,
            "sign": self.sign,
            "mode": self.mode,
        }


@dataclass
class TrajectorySegment:
    phase: Phase
    t: np.ndarray                  # (m,)
    x: np.ndarray                  # (m, n)
    f: np.ndarray                  # (m, n) right-hand side at the samples

    @property
    def t_span(self):
        return float(self.t[0]), float(self.t[-1])


@dataclass
class Trajectory:
    segments: list
    events: list
    diagnostics: dict = dc_field(default_factory=dict)

    @property
    def t_final(self) -> float:
        return float(self.segments[-1].t[-1])

    @property
    def x_final(self) -> np.ndarray:
        return self.segments[-1].x[-1]

    @property
    def t0(self) -> float:
        return float(self.segments[0].t[0])

    def sample_at(self, times) -> np.ndarray:
        """Cubic-Hermite interpolation of the dense output."""
        scalar = np.isscalar(times) or np.asarray(times).ndim == 0
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.empty((times.size, self.segments[0].x.shape[1]))
        forward = self.t_final >= self.t0
        for j, tq in enumerate(times):
            seg = None
            for s in self.segments:
                lo, hi = (s.t[0], s.t[-1]) if forward else (s.t[-1], s.t[0])
                if lo - 1e-12 <= tq <= hi + 1e-12:
                    seg = s
                    break
            if seg is None:
                seg = self.segments[-1]
            ts = seg.t if forward else seg.t[::-1]
            i = int(np.clip(np.searchsorted(ts, tq) - 1, 0, seg.t.size - 2))
            if not forward:
                i = seg.t.size - 2 - i
            out[j] = _hermite(seg.t[i], seg.x[i], seg.f[i],
                              seg.t[i + 1], seg.x[i + 1], seg.f[i + 1], tq)
        return out[0] if scalar else out


@dataclass
class FlowJacobian:
    t: float
    matrix: np.ndarray

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))


def _hermite(t0, x0, f0, t1, x1, f1, tq):
    """Cubic Hermite interpolant on [t0, t1]."""
    h = t1 - t0
    if h == 0:
        return x0
    s = (tq - t0) / h
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * x0 + h10 * h * f0 + h01 * x1 + h11 * h * f1


def _rk4_step(f, t, x, h):
    k1 = f(t, x)
    k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = f(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                   -92097 / 339200, 187 / 2100, 1 / 40])


def _dp54_step(f, t, x, h, rtol, atol):
    """One Dormand-Prince attempt; returns (x_new, err_norm)."""
    k = [f(t, x)]
    for i in range(1, 7):
        xi = x + h * sum(a * ki for a, ki in zip(_DP_A[i], k))
        k.append(f(t + _DP_C[i] * h, xi))
    x5 = x + h * sum(b * ki for b, ki in zip(_DP_B5, k))
    x4 = x + h * sum(b * ki for b, ki in zip(_DP_B4, k))
    scale = atol + rtol * np.maximum(np.abs(x), np.abs(x5))
    err = np.sqrt(np.mean(((x5 - x4) / scale) ** 2))
    return x5, err


class _Stepper:
    """Uniform interface over the fixed and adaptive schemes."""

    def __init__(self, f: Callable, config: IntegratorConfig):
        self.f = f
        self.cfg = config
        self.h = config.h
        self.steps = 0

    def advance(self, t, x, t_end):
        """One accepted step, capped at t_end.  Returns (t_new, x_new)."""
        cfg = self.cfg
        if cfg.scheme == "rk4":
            h = min(cfg.h, t_end - t)
            self._count()
            return t + h, _rk4_step(self.f, t, x, h)
        while True:
            self._count()
            h = min(self.h, t_end - t)
            x_new, err = _dp54_step(self.f, t, x, h, cfg.rtol, cfg.atol)
            if err <= 1.0 or h <= 1e-13 * max(1.0, abs(t)):
                if err > 0:
                    self.h = h * float(np.clip(0.9 * err ** -0.2, 0.2, 5.0))
                else:
                    self.h = h * 5.0
                return t + h, x_new
            self.h = h * float(np.clip(0.9 * err ** -0.2, 0.2, 1.0))

    def _count(self):
        self.steps += 1
        if self.steps > self.cfg.max_steps:
            raise MaxStepsExceeded(f"exceeded {self.cfg.max_steps} steps")


def _grazing_tol(scene, config, t, pi) -> float:
    vp = np.linalg.norm(np.atleast_1d(scene.v_plus(t, pi)))
    vm = np.linalg.norm(np.atleast_1d(scene.v_minus(t, pi)))
    return config.tol_grazing * (1.0 + max(vp, vm))


def _classify_event(scene, config, t, x):
    """Relative normal speeds and continuation decision at an event point.

    Returns (to_phase_or_SURFACE_mode, up, um, sign, pi).
    """
    up, um, pi, _, _ = relative_normal_speeds(scene, t, x)
    tol = _grazing_tol(scene, config, t, pi)
    sp = 0 if abs(up) <= tol else (1 if up > 0 else -1)
    sm = 0 if abs(um) <= tol else (1 if um > 0 else -1)
    if sp * sm == -1:
        raise TransversalityViolation(
            f"attracting interface at t={t}: u+={up:.6e}, u-={um:.6e}",
            t=t, x=x, u_plus=up, u_minus=um)
    s = sp if sp != 0 else sm
    if s == 0:
        return "surface", up, um, 0, pi
    return (Phase.PLUS if s > 0 else Phase.MINUS), up, um, s, pi


def _bulk_segment(scene, config, t0, x0, t_end, phase):
    """Integrate one bulk phase until t_end or an interface crossing."""
    fld = scene.velocity(phase)
    f = lambda t, x: np.asarray(fld(t, x), dtype=float)
    box = scene.iface.domain
    stepper = _Stepper(f, config)
    sgn = 1.0 if phase == Phase.PLUS else -1.0

    ts = [t0]
    xs = [np.asarray(x0, dtype=float)]
    fs = [f(t0, xs[0])]
    t, x = t0, xs[0]
    val_floor = 100.0 * config.tol_event
    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        t_new, x_new = stepper.advance(t, x, t_end)
        if not box.contains(x_new):
            raise LeftDomain(f"trajectory left the domain at t={t_new}",
                             t=t_new, x=x_new)
        val = float(np.asarray(scene.iface.phi(t_new, x_new)))
        gn = float(np.linalg.norm(np.atleast_2d(scene.iface.grad(t_new, x_new))))
        if np.sign(val) == -sgn and abs(val) > val_floor * max(gn, 1e-6):
            t_ev, x_ev = _localize_crossing(scene, config, t, x, f(t, x),
                                            t_new, x_new, f(t_new, x_new))
            ts.append(t_ev)
            xs.append(x_ev)
            fs.append(f(t_ev, x_ev))
            seg = TrajectorySegment(phase, np.array(ts), np.array(xs), np.array(fs))
            target, up, um, s, pi = _classify_event(scene, config, t_ev, x_ev)
            if target == "surface":
                ev = CrossingEvent(t_ev, pi, phase, Phase.INTERFACE,
                                   up, um, 0, "SURFACE")
            else:
                ev = CrossingEvent(t_ev, x_ev, phase, target, up, um, s, "CROSS")
            return seg, ev
        ts.append(t_new)
        xs.append(x_new)
        fs.append(f(t_new, x_new))
        t, x = t_new, x_new
    return TrajectorySegment(phase, np.array(ts), np.array(xs), np.array(fs)), None


def _localize_crossing(scene, config, ta, xa, fa, tb, xb, fb):
    """Root of the level set along the dense output within [ta, tb]."""
    phi = scene.iface.phi

    def g(tau):
        return float(np.asarray(phi(tau, _hermite(ta, xa, fa, tb, xb, fb, tau))))

    ga, gb = g(ta), g(tb)
    if ga * gb > 0:
        # degenerate bracket (event essentially at the left endpoint)
        t_ev = ta
    else:
        t_ev = brentq(g, ta, tb, xtol=1e-15, rtol=8.9e-16, maxiter=100)
    x_ev = _hermite(ta, xa, fa, tb, xb, fb, t_ev)
    d, pi, n = scene.chart.project(t_ev, x_ev)
    if abs(d) > config.tol_event:
        # flat level set along the path: polish along the normal
        x_ev = pi + 0.0 * n
        d = 0.0
    return float(t_ev), x_ev


def _surface_rhs(scene, tangential: bool):
    """Interface velocity field evaluated through the closest-point chart."""

    def f(t, x):
        _, pi, n = scene.chart.project(t, x)
        V = normal_speed(scene.iface, t, pi)
        v = V * n
        if tangential:
            vp = np.asarray(scene.v_plus(t, pi), dtype=float)
            v = v + (vp - np.dot(vp, n) * n)
        return v

    return f


def _surface_segment(scene, config, t0, x0, t_end):
    """Integrate along the interface until a one-sided relative normal
    speed leaves the grazing band."""
    f = _surface_rhs(scene, tangential=True)
    stepper = _Stepper(f, config)
    _, x_proj, _ = scene.chart.project(t0, x0)
    ts = [t0]
    xs = [x_proj]
    fs = [f(t0, x_proj)]
    t, x = t0, x_proj
    drift = 0.0
    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        t_new, x_new = stepper.advance(t, x, t_end)
        d, pi, _ = scene.chart.project(t_new, x_new)
        drift = max(drift, abs(d))
        x_new = pi
        if not scene.iface.domain.contains(x_new):
            raise LeftDomain(f"trajectory left the domain at t={t_new}",
                             t=t_new, x=x_new)
        ts.append(t_new)
        xs.append(x_new)
        fs.append(f(t_new, x_new))
        t, x = t_new, x_new
        up, um, pi2, _, _ = relative_normal_speeds(scene, t, x)
        tol = _grazing_tol(scene, config, t, pi2)
        if max(abs(up), abs(um)) > tol:
            s = np.sign(up if abs(up) >= abs(um) else um)
            sp = 0 if abs(up) <= tol else np.sign(up)
            sm = 0 if abs(um) <= tol else np.sign(um)
            if sp * sm == -1:
                raise TransversalityViolation(
                    f"attracting interface at surface exit, t={t}",
                    t=t, x=x, u_plus=up, u_minus=um)
            to_phase = Phase.PLUS if s > 0 else Phase.MINUS
            seg = TrajectorySegment(Phase.INTERFACE, np.array(ts),
                                    np.array(xs), np.array(fs))
            ev = CrossingEvent(t, x, Phase.INTERFACE, to_phase,
                               up, um, int(s), "CROSS")
            return seg, ev
    return TrajectorySegment(Phase.INTERFACE, np.array(ts),
                             np.array(xs), np.array(fs)), None


def trace(scene: TwoPhaseScene, config: IntegratorConfig,
          t0: float, x0, t_end: float,
          diagnostics: bool = True) -> Trajectory:
    """Absolutely continuous pathline of the two-phase field from
    ``(t0, x0)`` to ``t_end > t0``, with crossing events localized to the
    configured tolerance."""
    if not (scene.iface.contains_time(t0) and scene.iface.contains_time(t_end)):
        raise ValueError("t0 and t_end must lie inside the scene time window")
    if t_end <= t0:
        raise ValueError("trace integrates forward; use trace_backward")
    x0 = np.asarray(x0, dtype=float)
    if not scene.iface.domain.contains(x0):
        raise LeftDomain("initial point outside the domain", t=t0, x=x0)

    label = phase_of(scene, t0, x0)
    if label == Phase.INTERFACE:
        mode, up, um, s, pi = _classify_event(scene, config, t0, x0)
        if mode == "surface":
            x0 = pi
    else:
        mode = label

    segments = []
    events = []
    t, x = t0, x0
    guard = 0
    while True:
        guard += 1
        if guard > 10_000:
            raise MaxStepsExceeded("too many segments (event cascade)")
        if mode == "surface":
            seg, ev = _surface_segment(scene, config, t, x, t_end)
        else:
            seg, ev = _bulk_segment(scene, config, t, x, t_end, mode)
        segments.append(seg)
        if ev is None:
            break
        events.append(ev)
        t, x = ev.t, ev.x
        mode = "surface" if ev.mode == "SURFACE" else ev.to_phase

    traj = Trajectory(segments, events)
    if diagnostics:
        from .regularize import trajectory_residual

        traj.diagnostics["max_inclusion_residual"] = trajectory_residual(scene, traj)
    return traj


def integrate_surface(scene: TwoPhaseScene, config: IntegratorConfig,
                      t0: float, x0, t_end: float) -> Trajectory:
    """Integrate the intrinsic interface velocity ``V n`` with closest-point
    re-projection after every step."""
    f = _surface_rhs(scene, tangential=False)
    stepper = _Stepper(f, config)
    _, x, _ = scene.chart.project(t0, np.asarray(x0, dtype=float))
    ts, xs, fs = [t0], [x], [f(t0, x)]
    t = t0
    drift = 0.0
    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        t_new, x_new = stepper.advance(t, x, t_end)
        d, pi, _ = scene.chart.project(t_new, x_new)
        drift = max(drift, abs(d))
        x_new = pi
        ts.append(t_new)
        xs.append(x_new)
        fs.append(f(t_new, x_new))
        t, x = t_new, x_new
    seg = TrajectorySegment(Phase.INTERFACE, np.array(ts), np.array(xs), np.array(fs))
    return Trajectory([seg], [], {"max_surface_drift": drift})


def flow_map(field: Callable, config: IntegratorConfig,
             t0: float, points, t_target: float) -> np.ndarray:
    """Flow map of a (batch-capable) velocity field: integrate every seed
    point from ``t0`` to ``t_target`` with fixed RK4 steps."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    t = t0
    n_steps = max(1, int(np.ceil(abs(t_target - t0) / config.h - 1e-12)))
    h = (t_target - t0) / n_steps
    f = lambda tt, xx: np.atleast_2d(np.asarray(field(tt, xx), dtype=float))
    for _ in range(n_steps):
        X = _rk4_step(f, t, X, h)
        t += h
    return X if np.asarray(points).ndim > 1 else X[0]


def jacobian_flow(scene: TwoPhaseScene, extension, config: IntegratorConfig,
                  t0: float, y, t_target: float):
    """Co-integrate a pathline of the extended interface velocity and its
    flow Jacobian (variational equation), starting from the identity."""
    y = np.asarray(y, dtype=float)
    n = y.size

    def rhs(t, s):
        x = s[:n]
        J = s[n:].reshape(n, n)
        v = np.asarray(extension(t, x), dtype=float)
        G = extension.gradient(t, x)
        return np.concatenate([v, (G @ J).ravel()])

    s = np.concatenate([y, np.eye(n).ravel()])
    n_steps = max(1, int(np.ceil(abs(t_target - t0) / config.h - 1e-12)))
    h = (t_target - t0) / n_steps
    t = t0
    for _ in range(n_steps):
        s = _rk4_step(rhs, t, s, h)
        t += h
    J = s[n:].reshape(n, n)
    if abs(np.linalg.det(J)) < 1e-12:
        raise SingularJacobian(f"flow Jacobian singular at t={t_target}")
    return s[:n], FlowJacobian(t_target, J)


def normal_evolution_residual(scene: TwoPhaseScene, extension,
                              config: IntegratorConfig,
                              t0: float, y, t_target: float) -> float:
    """Defect of normal transport by the flow Jacobian of the extension:
    ``| n(t, Phi(y)) - DPhi(y) n(t0, y) |`` for a seed on the interface."""
    y = np.asarray(y, dtype=float)
    _, y_pi, n0 = scene.chart.project(t0, y)
    x_end, jac = jacobian_flow(scene, extension, config, t0, y_pi, t_target)
    _, _, n_end = scene.chart.project(t_target, x_end)
    return float(np.linalg.norm(n_end - jac.matrix @ n0))


def trace_backward(scene: TwoPhaseScene, config: IntegratorConfig,
                   t0: float, x0, t_start: float,
                   diagnostics: bool = True) -> Trajectory:
    """Pathline backwards in time: integrates the negated field against the
    time-reflected interface and maps the result back to original time."""
    if t_start >= t0:
        raise ValueError("t_start must precede t0")
    rev = reversed_scene(scene, t0)
    rtraj = trace(rev, config, t0, np.asarray(x0, dtype=float),
                  2 * t0 - t_start, diagnostics=False)
    segments = []
    for seg in rtraj.segments:
        segments.append(TrajectorySegment(
            phase=seg.phase,
            t=2 * t0 - seg.t,
            x=seg.x.copy(),
            f=-seg.f,
        ))
    events = [
        CrossingEvent(2 * t0 - ev.t, ev.x, ev.to_phase, ev.from_phase,
                      -ev.u_plus, -ev.u_minus, -ev.sign, ev.mode)
        for ev in rtraj.events
    ]
    traj = Trajectory(segments, events)
    if diagnostics:
        from .regularize import trajectory_residual

        traj.diagnostics["max_inclusion_residual"] = trajectory_residual(scene, traj)
    return traj


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def trajectory_to_csv(traj: Trajectory) -> str:
    """Dense output as CSV with columns t, x1..xn, phase, event.

    Samples at segment junctions appear once, flagged ``event=1`` and
    labeled with the phase of the segment that ended there.
    """
    n = traj.segments[0].x.shape[1]
    header = "t," + ",".join(f"x{k + 1}" for k in range(n)) + ",phase,event"
    lines = [header]
    n_seg = len(traj.segments)
    for si, seg in enumerate(traj.segments):
        start = 1 if si > 0 else 0
        last = seg.t.size - 1
        for i in range(start, seg.t.size):
            is_event = 1 if (i == last and si < n_seg - 1) else 0
            coords = ",".join(f"{v:.17g}" for v in seg.x[i])
            lines.append(f"{seg.t[i]:.17g},{coords},{int(seg.phase)},{is_event}")
    return "\n".join(lines) + "\n"


def trajectory_to_json(traj: Trajectory) -> dict:
    return {
        "segments": [
            {
                "phase": int(seg.phase),
                "t_start": float(seg.t[0]),
                "t_end": float(seg.t[-1]),
                "samples": int(seg.t.size),
            }
            for seg in traj.segments
        ],
        "events": [ev.to_dict() for ev in traj.events],
        "diagnostics": {k: float(v) for k, v in traj.diagnostics.items()},
    }
