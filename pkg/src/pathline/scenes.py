"""Built-in scene registry.

Pinned analytic scenes used by the test suite, the demos and the CLI:

* ``S0``  uniform upward flow, interface far from the demo pathlines
* ``S1``  moving plane with phase change (piecewise-linear closed form)
* ``S2``  expanding circle with radial phase-change fields
* ``S3``  rigidly rotating ellipse (grazing everywhere: interface-bound
          pathlines)
* ``S4-*`` deliberately broken variants of S1, one per validator
* ``F1``  static flat interface with sinusoidal normal flux (twin and
          Gronwall experiments)

All level sets carry analytic gradients, time derivatives and Hessians,
so chart projections converge at machine precision.
"""

from __future__ import annotations

import numpy as np

from .fields import BulkField, DensityField, TwoPhaseScene
from .geometry import Box, InterfaceChart, MovingInterface
from .verify import flat_scene

__all__ = ["builtin_scene", "builtin_names", "scene_description"]


def _plane_interface(speed: float, offset: float, time_window, domain,
                     width=None, name="plane"):
    """Level set x2 - (offset + speed*t): a horizontal line moving upward."""

    def phi(t, x):
        x = np.asarray(x, dtype=float)
        return x[..., 1] - (offset + speed * t)

    def grad(t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        g = np.zeros_like(x)
        g[..., 1] = 1.0
        return g

    def dt(t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(-speed, x.shape[:-1]).copy()

    def hess(t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.zeros((x.shape[0], 2, 2))

    iface = MovingInterface(2, phi, time_window, domain, phi_grad_x=grad,
                            phi_dt=dt, phi_hess=hess, name=name)
    w = width if width is not None else 0.1 * domain.diameter()
    return iface, InterfaceChart(iface, w)


def _const_field(vec):
    v = np.asarray(vec, dtype=float)

    def f(t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(v, x.shape).copy()

    return f


def _const_scalar(c):
    def f(t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(float(c), x.shape[:-1]).copy()

    return f


def _make_s0():
    domain = Box([-10.0, -10.0], [10.0, 10.0])
    iface, chart = _plane_interface(0.0, 5.0, (-1.0, 10.0), domain, name="S0")
    return TwoPhaseScene(
        iface=iface, chart=chart,
        v_plus=BulkField(_const_field([0.0, 1.0]), growth_const=2.0),
        v_minus=BulkField(_const_field([0.0, 1.0]), growth_const=2.0),
        rho_plus=DensityField(_const_scalar(1.0)),
        rho_minus=DensityField(_const_scalar(1.0)),
        name="S0",
    )


def _s1_base(v_plus, rho_plus, growth_plus=2.0, name="S1"):
    domain = Box([-2.0, -2.0], [2.0, 2.0])
    iface, chart = _plane_interface(0.2, 0.0, (-1.0, 3.0), domain, name=name)
    return TwoPhaseScene(
        iface=iface, chart=chart,
        v_plus=BulkField(v_plus, growth_const=growth_plus),
        v_minus=BulkField(_const_field([0.0, 1.0]), growth_const=2.0),
        rho_plus=DensityField(_const_scalar(rho_plus)),
        rho_minus=DensityField(_const_scalar(1.0)),
        name=name,
    )


def _make_s1():
    # transmission: rho+ (0.6 - 0.2) = rho- (1.0 - 0.2) with rho+ = 2
    return _s1_base(_const_field([0.0, 0.6]), rho_plus=2.0)


def _make_s2():
    R0, c = 1.0, 0.2
    domain = Box([-4.0, -4.0], [4.0, 4.0])

    def phi(t, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x, axis=-1) - (R0 + c * t)

    def grad(t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=-1)
        return x / np.maximum(r, 1e-300)[..., None]

    def dt(t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(-c, x.shape[:-1]).copy()

    def hess(t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.maximum(np.linalg.norm(x, axis=-1), 1e-300)
        n = x / r[..., None]
        eye = np.broadcast_to(np.eye(2), (x.shape[0], 2, 2))
        return (eye - n[:, :, None] * n[:, None, :]) / r[:, None, None]

    iface = MovingInterface(2, phi, (-0.5, 4.0), domain, phi_grad_x=grad,
                            phi_dt=dt, phi_hess=hess, name="S2")
    chart = InterfaceChart(iface, 0.5)

    # radial fields f-(r) = a r, f+(r) = beta + gamma r satisfy the
    # mass-flux condition identically on r = R0 + c t:
    #   rho- (a R - c) = rho+ (beta + gamma R - c)  for all R
    a, rho_m, rho_p = 0.6, 1.0, 2.0
    gamma = rho_m * a / rho_p
    beta = c - rho_m * c / rho_p

    def v_minus(t, x):
        x = np.asarray(x, dtype=float)
        return a * x

    def v_plus(t, x):
        x = np.asarray(x, dtype=float)
        r = np.maximum(np.linalg.norm(x, axis=-1), 1e-300)
        return (beta / r + gamma)[..., None] * x

    return TwoPhaseScene(
        iface=iface, chart=chart,
        v_plus=BulkField(v_plus, growth_const=3.0),
        v_minus=BulkField(v_minus, growth_const=3.0),
        rho_plus=DensityField(_const_scalar(rho_p)),
        rho_minus=DensityField(_const_scalar(rho_m)),
        name="S2",
        metadata={"R0": R0, "c": c, "a": a, "beta": beta, "gamma": gamma},
    )


def _make_s3():
    a, b, omega = 1.5, 0.75, 0.5
    domain = Box([-3.0, -3.0], [3.0, 3.0])

    def body_axes(t):
        th = omega * t
        e1 = np.array([np.cos(th), np.sin(th)])
        e2 = np.array([-np.sin(th), np.cos(th)])
        return e1, e2

    def phi(t, x):
        x = np.asarray(x, dtype=float)
        e1, e2 = body_axes(t)
        u1 = x @ e1
        u2 = x @ e2
        return (u1 / a) ** 2 + (u2 / b) ** 2 - 1.0

    def grad(t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        e1, e2 = body_axes(t)
        u1 = x @ e1
        u2 = x @ e2
        return (2.0 * u1 / a**2)[..., None] * e1 + (2.0 * u2 / b**2)[..., None] * e2

    def dt(t, x):
        x = np.asarray(x, dtype=float)
        e1, e2 = body_axes(t)
        u1 = x @ e1
        u2 = x @ e2
        return 2.0 * omega * u1 * u2 * (1.0 / a**2 - 1.0 / b**2)

    def hess(t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        e1, e2 = body_axes(t)
        H = 2.0 / a**2 * np.outer(e1, e1) + 2.0 / b**2 * np.outer(e2, e2)
        return np.broadcast_to(H, (x.shape[0], 2, 2)).copy()

    iface = MovingInterface(2, phi, (-1.0, 4.0), domain, phi_grad_x=grad,
                            phi_dt=dt, phi_hess=hess, name="S3")
    chart = InterfaceChart(iface, 0.25)

    def rigid(t, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[..., 0] = -omega * x[..., 1]
        out[..., 1] = omega * x[..., 0]
        return out

    # rigid rotation moves the ellipse with itself: the relative normal
    # speeds vanish identically, so pathlines on the interface graze
    return TwoPhaseScene(
        iface=iface, chart=chart,
        v_plus=BulkField(rigid, growth_const=2.0),
        v_minus=BulkField(rigid, growth_const=2.0),
        rho_plus=DensityField(_const_scalar(2.0)),
        rho_minus=DensityField(_const_scalar(1.0)),
        name="S3",
        metadata={"a": a, "b": b, "omega": omega},
    )


def _make_s4_growth():
    def v_plus(t, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., 1] = 0.6 + (x[..., 1] - 0.2 * t) ** 2
        return out

    return _s1_base(v_plus, rho_plus=2.0, growth_plus=0.5, name="S4-growth")


def _make_s4_noslip():
    return _s1_base(_const_field([0.1, 0.6]), rho_plus=2.0, name="S4-noslip")


def _make_s4_transmission():
    return _s1_base(_const_field([0.0, 0.6]), rho_plus=1.0,
                    name="S4-transmission")


def _make_s4_transversality():
    return _s1_base(_const_field([0.0, -0.2]), rho_plus=2.0,
                    name="S4-transversality")


def _make_f1():
    def g_plus(t, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[..., 0] = 0.3 * x[..., 1]
        out[..., 1] = 0.4 + 0.05 * np.sin(x[..., 0]) + 0.1 * x[..., 1]
        return out

    def g_minus(t, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[..., 0] = 0.3 * x[..., 1]
        out[..., 1] = 0.8 + 0.1 * np.sin(x[..., 0]) + 0.1 * x[..., 1]
        return out

    return flat_scene(
        dim=2, g_plus=g_plus, g_minus=g_minus,
        rho_plus=_const_scalar(2.0), rho_minus=_const_scalar(1.0),
        domain=Box([-3.0, -2.0], [3.0, 2.0]), time_window=(-1.0, 5.0),
        name="F1",
    )


_REGISTRY = {
    "S0": _make_s0,
    "S1": _make_s1,
    "S2": _make_s2,
    "S3": _make_s3,
    "S4-growth": _make_s4_growth,
    "S4-noslip": _make_s4_noslip,
    "S4-transmission": _make_s4_transmission,
    "S4-transversality": _make_s4_transversality,
    "F1": _make_f1,
}

_DESCRIPTIONS = {
    "S0": "uniform upward flow; interface plane far above the demo paths",
    "S1": "plane x2 = 0.2 t with phase change (closed-form crossings)",
    "S2": "circle expanding as R = 1 + 0.2 t with radial phase-change fields",
    "S3": "rigidly rotating ellipse; pathlines on the interface graze",
    "S4-growth": "S1 with a quadratically growing plus field (growth check fails)",
    "S4-noslip": "S1 with a tangential slip of 0.1 (no-slip check fails)",
    "S4-transmission": "S1 with mismatched densities (transmission check fails)",
    "S4-transversality": "S1 with an attracting interface (transversality fails)",
    "F1": "static flat interface, sinusoidal normal flux (twin experiments)",
}


def builtin_names() -> list:
    return sorted(_REGISTRY)


def scene_description(name: str) -> str:
    return _DESCRIPTIONS.get(name, "")


def builtin_scene(name: str) -> TwoPhaseScene:
    """Construct a fresh instance of a built-in scene by name."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(
            f"unknown builtin scene {name!r}; available: {', '.join(builtin_names())}"
        ) from None
    return factory()
