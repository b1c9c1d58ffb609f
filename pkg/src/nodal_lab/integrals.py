"""Volume integrals, the auxiliary function ``f = (1 + lam e^2 + |grad e|^2)^(1/2)``
and the Helmholtz-applied left-hand side ``int |e| (Delta_g + lam) f dV``."""

from __future__ import annotations

import enum
import math

import numpy as np

from .eigenfunctions import EigenfunctionField
from .geometry import ChartDescriptor, ChartKind, QuadratureRule
from .nodal import AuxSelector

DEFAULT_FD_STEP = 1e-4
_CHUNK = 1 << 17


class Integrand(str, enum.Enum):
    ABS_E = "AbsE"
    E_SQUARED = "ESquared"
    GRAD_SQUARED = "GradSquared"


class DomainMismatchError(ValueError):
    pass


def _check_domain(field: EigenfunctionField, rule: QuadratureRule):
    if rule.domain is not field.domain and rule.domain != field.domain:
        raise DomainMismatchError(f"rule built on {rule.domain!r}, field lives on {field.domain!r}")


def _rule_points(rule: QuadratureRule):
    if rule.triangle_ids is not None:
        return rule.triangle_ids, rule.nodes
    return rule.nodes


def volume_integral(field: EigenfunctionField, rule: QuadratureRule, integrand="AbsE") -> float:
    """Weighted sum of ``|e|``, ``e^2`` or ``|grad_g e|^2`` over ``rule``."""
    _check_domain(field, rule)
    which = Integrand(integrand)
    if which is Integrand.GRAD_SQUARED:
        return rule.integrate(field.gradient_norm_sq(_rule_points(rule)))
    if rule.axes is not None:
        u, v, wu, wv = rule.axes
        a, b = field.grid_factors(u, v)
        op = np.abs if which is Integrand.ABS_E else np.square
        a, b = op(a), op(b)
        if a.ndim == 1 and b.ndim == 1:
            # separable integrand: a product of two 1-D sums
            return float((wu @ a) * (b @ wv))
        return float(wu @ (a * b) @ wv)
    vals = field.evaluate(_rule_points(rule))
    return rule.integrate(np.abs(vals) if which is Integrand.ABS_E else vals * vals)


def laplacian_fd(func, chart: ChartDescriptor, points, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Second-order central-difference Laplace-Beltrami operator on a chart.

    Sphere: ``(sin t)^-1 d_t(sin t d_t f) + (sin t)^-2 d_p^2 f`` in flux form.
    Torus: ``d_x^2 f + d_y^2 f``.
    """
    if not 1e-5 <= h <= 1e-2:
        raise ValueError(f"step h must lie in [1e-5, 1e-2], got {h}")
    pts = np.asarray(points, dtype=float)
    e1 = np.array([h, 0.0])
    e2 = np.array([0.0, h])
    f0 = func(pts)
    f_up, f_dn = func(pts + e1), func(pts - e1)
    f_rt, f_lt = func(pts + e2), func(pts - e2)
    if chart.kind is ChartKind.SPHERE_POLAR:
        theta = pts[..., 0]
        if np.any(theta <= 2 * h) or np.any(theta >= math.pi - 2 * h):
            raise ValueError("finite-difference stencil too close to a pole of the sphere chart")
        s = np.sin(theta)
        s_up, s_dn = np.sin(theta + 0.5 * h), np.sin(theta - 0.5 * h)
        radial = (s_up * (f_up - f0) - s_dn * (f0 - f_dn)) / (h * h * s)
        return radial + (f_rt - 2.0 * f0 + f_lt) / (h * h * s * s)
    return (f_up + f_dn + f_rt + f_lt - 4.0 * f0) / (h * h)


class AuxiliaryFunction:
    """``f = (1 + lam e^2 + |grad_g e|^2)^(1/2)`` built on an analytic field."""

    def __init__(self, field: EigenfunctionField, h: float = DEFAULT_FD_STEP):
        if not isinstance(field.domain, ChartDescriptor):
            raise TypeError("the auxiliary function needs a chart-backed (C^2) field")
        self.field = field
        self.h = h

    def __call__(self, points) -> np.ndarray:
        e = self.field.evaluate(points)
        return np.sqrt(1.0 + self.field.eigenvalue * e * e + self.field.gradient_norm_sq(points))

    def laplacian(self, points) -> np.ndarray:
        return laplacian_fd(self, self.field.domain, points, self.h)


def helmholtz_applied_integral(field: EigenfunctionField, rule: QuadratureRule, f_selector="One",
                               h: float = DEFAULT_FD_STEP) -> float:
    """``int_M |e| (Delta_g + lam) f dV`` for ``f = 1`` or the auxiliary function."""
    sel = AuxSelector.parse(f_selector)
    _check_domain(field, rule)
    if sel is AuxSelector.ONE:
        return field.eigenvalue * volume_integral(field, rule, Integrand.ABS_E)
    aux = AuxiliaryFunction(field, h)
    lam = field.eigenvalue
    total = 0.0
    nodes, weights = rule.nodes, rule.weights
    parts = []
    for start in range(0, len(nodes), _CHUNK):
        pts = nodes[start:start + _CHUNK]
        vals = np.abs(field.evaluate(pts)) * (aux.laplacian(pts) + lam * aux(pts))
        parts.append(float(np.dot(weights[start:start + _CHUNK], vals)))
    total = math.fsum(parts)
    return total


def auxiliary_laplacian_magnitude(field: EigenfunctionField, rule: QuadratureRule,
                                  h: float = DEFAULT_FD_STEP) -> float:
    """``int_M |e| |Delta_g f| dV`` for the auxiliary function ``f``."""
    _check_domain(field, rule)
    aux = AuxiliaryFunction(field, h)
    parts = []
    for start in range(0, len(rule.nodes), _CHUNK):
        pts = rule.nodes[start:start + _CHUNK]
        vals = np.abs(field.evaluate(pts)) * np.abs(aux.laplacian(pts))
        parts.append(float(np.dot(rule.weights[start:start + _CHUNK], vals)))
    return math.fsum(parts)
