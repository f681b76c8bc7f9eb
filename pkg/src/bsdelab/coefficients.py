"""Closed catalog of problem data ``(u0, f, g)`` in one space dimension.

Conventions used throughout the package (d = 1):

* ``u0(x)`` maps ``(...)`` to ``(..., m)``; ``du0``/``d2u0`` likewise.
* ``f(y, z)`` maps ``y, z`` of shape ``(..., m)`` to a scalar velocity ``(...)``.
* ``g(y, z)`` maps to ``(..., m)``; ``None`` means ``g = 0``.
* ``df(y)`` is the y-gradient ``(..., m)``, ``d2f(y)`` the Hessian ``(..., m, m)``.

Every entry declares its constants; :func:`certify` checks them on a
sampling grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import erf

from .errors import CertificationError

Array = np.ndarray


@dataclass(frozen=True)
class InitialData:
    name: str
    m: int
    u0: Callable[[Array], Array]
    lipschitz: float
    sup: float
    component_sup: tuple[float, ...]
    du0: Callable[[Array], Array] | None = None
    d2u0: Callable[[Array], Array] | None = None
    antiderivative: Callable[[Array], Array] | None = None  # scalar data only
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Convection:
    name: str
    f: Callable[[Array, Array], Array]
    lipschitz: float
    df: Callable[[Array], Array] | None = None
    d2f: Callable[[Array], Array] | None = None
    d3f: Callable[[Array], Array] | None = None
    flow_bound: float | None = None  # C1: bound on |grad^k f|, k = 1, 2, 3
    uses_z: bool = False
    min_m: int = 1
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CoefficientSet:
    initial: InitialData
    convection: Convection
    g: Callable[[Array, Array], Array] | None = None
    C_g: float = 0.0
    g_name: str = "zero"

    @property
    def name(self) -> str:
        return f"{self.convection.name}/{self.initial.name}" + ("" if self.g is None else f"/{self.g_name}")

    @property
    def m(self) -> int:
        return self.initial.m

    @property
    def u0(self):
        return self.initial.u0

    @property
    def f(self):
        return self.convection.f

    @property
    def C_u0(self) -> float:
        return self.initial.lipschitz

    @property
    def C_f(self) -> float:
        return self.convection.lipschitz

    @property
    def u0_sup(self) -> float:
        return self.initial.sup

    @property
    def f_uses_z(self) -> bool:
        return self.convection.uses_z

    @property
    def g_zero(self) -> bool:
        return self.g is None

    def driver(self):
        """``g`` as a BSDE driver ``(t, y, z)``."""
        if self.g is None:
            return None
        g = self.g
        return lambda t, y, z: g(y, z)

    def with_initial(self, u0: Callable[[Array], Array], lipschitz: float, sup: float | None = None,
                     component_sup=None, name: str = "interpolated") -> "CoefficientSet":
        comp = tuple(component_sup) if component_sup is not None else self.initial.component_sup
        init = InitialData(name, self.m, u0, float(lipschitz), float(self.u0_sup if sup is None else sup), comp)
        return replace(self, initial=init)


def _stack(*cols):
    return np.stack(cols, axis=-1)


def _sech(x):
    return 1.0 / np.cosh(x)


def _logcosh(x):
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - math.log(2.0)


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------

def neg_tanh(amplitude: float = 1.0) -> InitialData:
    A = float(amplitude)
    return InitialData(
        "neg_tanh", 1,
        u0=lambda x: _stack(-A * np.tanh(x)),
        lipschitz=abs(A), sup=abs(A), component_sup=(abs(A),),
        du0=lambda x: _stack(-A * _sech(x) ** 2),
        d2u0=lambda x: _stack(2 * A * _sech(x) ** 2 * np.tanh(x)),
        antiderivative=lambda x: -A * _logcosh(x),
        params={"amplitude": A},
    )


def gaussian(sigma: float = 1.0, amplitude: float = 1.0) -> InitialData:
    s, A = float(sigma), float(amplitude)

    def e(x):
        return np.exp(-np.asarray(x) ** 2 / (2 * s * s))

    return InitialData(
        "gaussian", 1,
        u0=lambda x: _stack(A * e(x)),
        lipschitz=abs(A) / s * math.exp(-0.5), sup=abs(A), component_sup=(abs(A),),
        du0=lambda x: _stack(-A * x / s**2 * e(x)),
        d2u0=lambda x: _stack(A * (x**2 / s**4 - 1 / s**2) * e(x)),
        antiderivative=lambda x: A * s * math.sqrt(math.pi / 2) * erf(x / (s * math.sqrt(2))),
        params={"sigma": s, "amplitude": A},
    )


def constant_data(c: float = 0.5) -> InitialData:
    c = float(c)
    return InitialData(
        "constant", 1,
        u0=lambda x: np.full(np.shape(x) + (1,), c),
        lipschitz=0.0, sup=abs(c), component_sup=(abs(c),),
        du0=lambda x: np.zeros(np.shape(x) + (1,)),
        d2u0=lambda x: np.zeros(np.shape(x) + (1,)),
        antiderivative=lambda x: c * np.asarray(x, dtype=float),
        params={"c": c},
    )


def sech_bump(amplitude: float = 1.0) -> InitialData:
    A = float(amplitude)
    return InitialData(
        "sech", 1,
        u0=lambda x: _stack(A * _sech(x)),
        lipschitz=abs(A) / 2, sup=abs(A), component_sup=(abs(A),),
        du0=lambda x: _stack(-A * _sech(x) * np.tanh(x)),
        d2u0=lambda x: _stack(A * _sech(x) * (np.tanh(x) ** 2 - _sech(x) ** 2)),
        antiderivative=lambda x: 2 * A * np.arctan(np.tanh(np.asarray(x) / 2)),
        params={"amplitude": A},
    )


def two_component() -> InitialData:
    # |u0| = 1 and |u0'| = sech(x) <= 1 in the Euclidean norm
    return InitialData(
        "two_component", 2,
        u0=lambda x: _stack(-np.tanh(x), _sech(x)),
        lipschitz=1.0, sup=1.0, component_sup=(1.0, 1.0),
        du0=lambda x: _stack(-_sech(x) ** 2, -_sech(x) * np.tanh(x)),
        d2u0=lambda x: _stack(2 * _sech(x) ** 2 * np.tanh(x), _sech(x) * (np.tanh(x) ** 2 - _sech(x) ** 2)),
    )


INITIAL_DATA = {
    "neg_tanh": neg_tanh,
    "gaussian": gaussian,
    "constant": constant_data,
    "sech": sech_bump,
    "two_component": two_component,
}


# ---------------------------------------------------------------------------
# convection
# ---------------------------------------------------------------------------

def _zeros_like_y(y):
    return np.zeros(np.shape(y)[:-1])


def _basis_grad(y, weights):
    w = np.zeros(np.shape(y)[-1])
    w[: len(weights)] = weights
    return np.broadcast_to(w, np.shape(y)).copy()


def zero_convection() -> Convection:
    return Convection(
        "zero", f=lambda y, z: _zeros_like_y(y), lipschitz=0.0,
        df=lambda y: np.zeros(np.shape(y)),
        d2f=lambda y: np.zeros(np.shape(y) + np.shape(y)[-1:]),
        d3f=lambda y: np.zeros(np.shape(y) + np.shape(y)[-1:] * 2),
        flow_bound=0.0,
    )


def constant_convection(c: float = 0.5) -> Convection:
    c = float(c)
    return Convection(
        "constant", f=lambda y, z: np.full(np.shape(y)[:-1], c), lipschitz=0.0,
        df=lambda y: np.zeros(np.shape(y)),
        d2f=lambda y: np.zeros(np.shape(y) + np.shape(y)[-1:]),
        d3f=lambda y: np.zeros(np.shape(y) + np.shape(y)[-1:] * 2),
        flow_bound=0.0, params={"c": c},
    )


def burgers() -> Convection:
    return Convection(
        "burgers", f=lambda y, z: np.asarray(y)[..., 0], lipschitz=1.0,
        df=lambda y: _basis_grad(y, [1.0]),
        d2f=lambda y: np.zeros(np.shape(y) + np.shape(y)[-1:]),
        d3f=lambda y: np.zeros(np.shape(y) + np.shape(y)[-1:] * 2),
        flow_bound=1.0,
    )


def tanh_clamped(a: float = 2.0) -> Convection:
    a = float(a)

    def first_axis(y, val, order):
        out = np.zeros(np.shape(y) + np.shape(y)[-1:] * (order - 1))
        out[(...,) + (0,) * order] = val
        return out

    def df(y):
        u = np.asarray(y)[..., 0] / a
        return first_axis(y, _sech(u) ** 2, 1)

    def d2f(y):
        u = np.asarray(y)[..., 0] / a
        return first_axis(y, -2.0 / a * _sech(u) ** 2 * np.tanh(u), 2)

    def d3f(y):
        u = np.asarray(y)[..., 0] / a
        s2 = _sech(u) ** 2
        return first_axis(y, -2.0 / a**2 * s2 * (s2 - 2 * np.tanh(u) ** 2), 3)

    # sup |f''| = 4 / (3 sqrt 3 a), sup |f'''| = 2 / a^2
    c1 = max(1.0, 4.0 / (3.0 * math.sqrt(3.0) * a), 2.0 / a**2)
    return Convection(
        "tanh_clamped", f=lambda y, z: a * np.tanh(np.asarray(y)[..., 0] / a), lipschitz=1.0,
        df=df, d2f=d2f, d3f=d3f, flow_bound=c1, params={"a": a},
    )


def two_component_mix(w1: float = 0.6, w2: float = 0.4) -> Convection:
    w1, w2 = float(w1), float(w2)
    lip = math.hypot(w1, w2)
    return Convection(
        "two_component_mix",
        f=lambda y, z: w1 * np.asarray(y)[..., 0] + w2 * np.asarray(y)[..., 1],
        lipschitz=lip,
        df=lambda y: _basis_grad(y, [w1, w2]),
        d2f=lambda y: np.zeros(np.shape(y) + np.shape(y)[-1:]),
        d3f=lambda y: np.zeros(np.shape(y) + np.shape(y)[-1:] * 2),
        flow_bound=lip, min_m=2, params={"w1": w1, "w2": w2},
    )


CONVECTION = {
    "zero": zero_convection,
    "constant": constant_convection,
    "burgers": burgers,
    "tanh_clamped": tanh_clamped,
    "two_component_mix": two_component_mix,
}

DEFAULT_INITIAL = {
    "zero": "gaussian",
    "constant": "neg_tanh",
    "burgers": "neg_tanh",
    "tanh_clamped": "neg_tanh",
    "two_component_mix": "two_component",
}


def decay_driver(rate: float = 0.5):
    """g(y, z) = -rate * y, Lipschitz constant |rate|."""
    r = float(rate)
    return (lambda y, z: -r * np.asarray(y)), abs(r)


DRIVERS = {"decay": decay_driver}


def make_coefficients(
    f: str = "burgers",
    u0: str | None = None,
    f_params: dict | None = None,
    u0_params: dict | None = None,
    g: str | None = None,
    g_params: dict | None = None,
) -> CoefficientSet:
    if f not in CONVECTION:
        raise KeyError(f"unknown convection {f!r}; choose from {sorted(CONVECTION)}")
    u0 = u0 or DEFAULT_INITIAL[f]
    if u0 not in INITIAL_DATA:
        raise KeyError(f"unknown initial data {u0!r}; choose from {sorted(INITIAL_DATA)}")
    conv = CONVECTION[f](**(f_params or {}))
    init = INITIAL_DATA[u0](**(u0_params or {}))
    if init.m < conv.min_m:
        raise ValueError(f"convection {f!r} needs at least {conv.min_m} components, {u0!r} has {init.m}")
    if g is None:
        return CoefficientSet(init, conv)
    if g not in DRIVERS:
        raise KeyError(f"unknown driver {g!r}; choose from {sorted(DRIVERS)}")
    gfun, cg = DRIVERS[g](**(g_params or {}))
    return CoefficientSet(init, conv, gfun, cg, g)


# ---------------------------------------------------------------------------
# certification
# ---------------------------------------------------------------------------

def _lipschitz_quotient_1d(fun, x):
    v = np.asarray(fun(x), dtype=float)
    dv = np.linalg.norm(np.diff(v, axis=0), axis=-1)
    return float(np.max(dv / np.diff(x)))


def _sample_box(m: int, radius: float, n: int) -> np.ndarray:
    axis = np.linspace(-radius, radius, n)
    if m == 1:
        return axis[:, None]
    mesh = np.meshgrid(*([axis] * m), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def certify(coeffs: CoefficientSet, x_radius: float = 12.0, n: int = 24001, seed: int = 0) -> dict:
    """Sample the declared constants; raise if any sampled quantity exceeds its declaration."""
    x = np.linspace(-x_radius, x_radius, n)
    m = coeffs.m
    vals = np.asarray(coeffs.u0(x))
    report = {
        "u0_lipschitz": _lipschitz_quotient_1d(coeffs.u0, x),
        "u0_sup": float(np.max(np.linalg.norm(vals, axis=-1))),
        "u0_component_sup": [float(v) for v in np.max(np.abs(vals), axis=0)],
    }
    rng = np.random.default_rng(seed)
    radius = 2.0 * max(coeffs.u0_sup, 1.0)
    y1 = rng.uniform(-radius, radius, (20000, m))
    y2 = y1 + rng.normal(0, 0.05, (20000, m))
    z1 = rng.uniform(-3, 3, (20000, m))
    z2 = z1 + (rng.normal(0, 0.05, (20000, m)) if coeffs.f_uses_z else 0.0)
    num = np.abs(coeffs.f(y1, z1) - coeffs.f(y2, z2))
    den = np.linalg.norm(y1 - y2, axis=-1) + np.linalg.norm(np.atleast_2d(z1 - z2), axis=-1)
    report["f_lipschitz"] = float(np.max(num / np.maximum(den, 1e-300)))
    tol = 1e-9
    problems = []
    if report["u0_lipschitz"] > coeffs.C_u0 * (1 + tol) + tol:
        problems.append(f"u0 Lipschitz {report['u0_lipschitz']:.6g} > declared {coeffs.C_u0}")
    if report["u0_sup"] > coeffs.u0_sup * (1 + tol) + tol:
        problems.append(f"|u0|_inf {report['u0_sup']:.6g} > declared {coeffs.u0_sup}")
    for i, (s, d) in enumerate(zip(report["u0_component_sup"], coeffs.initial.component_sup)):
        if s > d * (1 + tol) + tol:
            problems.append(f"|u0^{i}|_inf {s:.6g} > declared {d}")
    if report["f_lipschitz"] > coeffs.C_f * (1 + tol) + tol:
        problems.append(f"f Lipschitz {report['f_lipschitz']:.6g} > declared {coeffs.C_f}")
    if problems:
        raise CertificationError("; ".join(problems))
    return report


def sampled_flow_constants(coeffs: CoefficientSet, x_radius: float = 12.0, y_radius: float = 6.0,
                           n: int = 4001) -> tuple[float, float]:
    """Sampled (C0, C1): sup of |u0|, |u0'|, |u0''| and of |f'|, |f''|, |f'''|."""
    init, conv = coeffs.initial, coeffs.convection
    if init.du0 is None or init.d2u0 is None or conv.df is None or conv.d2f is None:
        raise ValueError("flow constants need du0, d2u0, df and d2f")
    x = np.linspace(-x_radius, x_radius, n)
    c0 = max(float(np.max(np.linalg.norm(fn(x), axis=-1))) for fn in (init.u0, init.du0, init.d2u0))
    y = _sample_box(coeffs.m, y_radius, n if coeffs.m == 1 else 201)
    norms = [np.max(np.sqrt(np.sum(conv.df(y) ** 2, axis=-1)))]
    norms.append(np.max(np.sqrt(np.sum(conv.d2f(y) ** 2, axis=(-2, -1)))))
    if conv.d3f is not None:
        norms.append(np.max(np.sqrt(np.sum(conv.d3f(y) ** 2, axis=(-3, -2, -1)))))
    return c0, float(max(norms))
