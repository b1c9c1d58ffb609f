"""Closed-form L2-normalized Laplace-Beltrami eigenfunctions.

Conventions: ``-Delta_g e = lam * e`` and ``int_M e^2 dV_g = 1``.  Three
families are provided: zonal harmonics and (real) highest-weight harmonics on
the unit sphere, and product modes on the flat torus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import SPHERE_CHART, TORUS_CHART, ChartDescriptor, build_sphere_quadrature

ZONAL = "zonal"
HIGHEST_WEIGHT = "highest_weight"
TORUS_PRODUCT = "torus_product"
FAMILIES = (ZONAL, HIGHEST_WEIGHT, TORUS_PRODUCT)


def legendre_eval(l: int, x):
    """Return ``(P_l(x), P_l'(x))`` by the three-term recurrence.

    The derivative uses ``P'_{n+1} = P'_{n-1} + (2n+1) P_n``, which stays
    regular at ``x = +-1``.  ``x`` may be a scalar or an array.
    """
    if l < 0:
        raise ValueError(f"degree must be nonnegative, got {l}")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0):
        raise ValueError("legendre_eval requires |x| <= 1")
    p_prev, p = np.ones_like(x), x.copy()
    dp_prev, dp = np.zeros_like(x), np.ones_like(x)
    if l == 0:
        return _unwrap(p_prev), _unwrap(dp_prev)
    for n in range(1, l):
        p_next = ((2 * n + 1) * x * p - n * p_prev) / (n + 1)
        dp_next = dp_prev + (2 * n + 1) * p
        p_prev, p = p, p_next
        dp_prev, dp = dp, dp_next
    return _unwrap(p), _unwrap(dp)


def _unwrap(a: np.ndarray):
    return float(a) if a.ndim == 0 else a


def legendre_roots(l: int, tol: float = 1e-12) -> np.ndarray:
    """All ``l`` roots of ``P_l``, ascending, by bracketing and bisection.

    Roots interlace with the Chebyshev-like angles ``j*pi/(l+1/2)``, so each
    interval ``theta in [j, j+1] * pi/(l+1/2)`` holds exactly one root.
    """
    if l < 1:
        raise ValueError(f"degree must be >= 1, got {l}")
    m = (l + 1) // 2  # roots with theta in (0, pi/2]
    a = np.arange(m) * math.pi / (l + 0.5)
    b = (np.arange(m) + 1) * math.pi / (l + 0.5)
    b = np.minimum(b, 0.5 * math.pi)
    fa = legendre_eval(l, np.cos(a))[0]
    for _ in range(200):
        if np.all(b - a <= tol):
            break
        c = 0.5 * (a + b)
        fc = legendre_eval(l, np.cos(c))[0]
        left = np.sign(fc) == np.sign(fa)
        a = np.where(left, c, a)
        fa = np.where(left, fc, fa)
        b = np.where(left, b, c)
    upper = np.cos(0.5 * (a + b))
    if l % 2:
        upper[-1] = 0.0
        return np.concatenate([-upper[:-1], upper[::-1]])
    return np.concatenate([-upper, upper[::-1]])


class EigenfunctionField:
    """Evaluable eigenfunction with eigenvalue and metric gradient.

    Subclasses implement ``_evaluate`` and ``_partials`` on chart points
    ``(..., 2)``; mesh-backed fields override the public methods directly.
    """

    family: str = ""
    index: tuple = ()
    eigenvalue: float = 0.0
    domain: object = None
    scale: float = 1.0

    @property
    def tag(self) -> str:
        idx = ",".join(str(i) for i in self.index)
        tag = f"{self.family}[{idx}]"
        return tag if self.scale == 1.0 else f"{tag}*{self.scale!r}"

    @property
    def chart(self) -> ChartDescriptor | None:
        return self.domain if isinstance(self.domain, ChartDescriptor) else None

    @property
    def sup_norm(self) -> float:
        raise NotImplementedError

    def evaluate(self, points) -> np.ndarray:
        return self.scale * self._evaluate(np.asarray(points, dtype=float))

    def partials(self, points) -> tuple[np.ndarray, np.ndarray]:
        d1, d2 = self._partials(np.asarray(points, dtype=float))
        return self.scale * d1, self.scale * d2

    def gradient(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Chart components ``(..., 2)`` and metric norm ``|grad_g e|``."""
        d1, d2 = self.partials(points)
        return np.stack([d1, d2], axis=-1), np.sqrt(self.chart.gradient_norm_sq(points, d1, d2))

    def gradient_norm_sq(self, points) -> np.ndarray:
        d1, d2 = self.partials(points)
        return self.chart.gradient_norm_sq(points, d1, d2)

    def grid_values(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Values on the tensor grid ``u x v`` of chart coordinates."""
        a, b = self.grid_factors(u, v)
        return np.multiply.outer(a, b) if a.ndim == 1 else a * b

    def grid_factors(self, u, v):
        """``(a, b)`` with grid values ``a[i] * b[j]`` for separable fields.

        Non-separable fields return the full 2-D value array and a scalar one.
        """
        a, b = self._factors(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        return self.scale * a, b

    def _factors(self, u, v):
        U, V = np.meshgrid(u, v, indexing="ij")
        return self._evaluate(np.stack([U, V], axis=-1)), np.ones(())

    def scaled(self, c: float) -> "EigenfunctionField":
        """Same field multiplied by the constant ``c`` (not renormalized)."""
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.scale = self.scale * float(c)
        return clone

    def with_scale(self, s: float) -> "EigenfunctionField":
        """Same field with the multiplier set to exactly ``s``."""
        clone = self.scaled(1.0)
        clone.scale = float(s)
        return clone

    def _evaluate(self, points):
        raise NotImplementedError

    def _partials(self, points):
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__} {self.tag} lam={self.eigenvalue:g}>"


class ZonalHarmonic(EigenfunctionField):
    """``sqrt((2l+1)/(4pi)) P_l(cos theta)`` with ``lam = l(l+1)``."""

    family = ZONAL

    def __init__(self, l: int):
        if l < 1:
            raise ValueError(f"zonal degree must be >= 1, got {l}")
        self.l = int(l)
        self.index = (self.l,)
        self.eigenvalue = float(l * (l + 1))
        self.domain = SPHERE_CHART
        self.norm_const = math.sqrt((2 * l + 1) / (4 * math.pi))

    @property
    def sup_norm(self) -> float:
        return abs(self.scale) * self.norm_const

    def _evaluate(self, points):
        x = np.clip(np.cos(points[..., 0]), -1.0, 1.0)
        return self.norm_const * legendre_eval(self.l, x)[0]

    def _factors(self, u, v):
        x = np.clip(np.cos(u), -1.0, 1.0)
        return self.norm_const * legendre_eval(self.l, x)[0], np.ones_like(v)

    def _partials(self, points):
        theta = points[..., 0]
        x = np.clip(np.cos(theta), -1.0, 1.0)
        dp = legendre_eval(self.l, x)[1]
        d_theta = -self.norm_const * np.sin(theta) * dp
        return d_theta, np.zeros_like(d_theta)


class HighestWeightHarmonic(EigenfunctionField):
    """``c_k sin(theta)^k cos(k phi)`` with ``lam = k(k+1)``.

    ``c_k`` is fixed by Gauss-Legendre quadrature of ``(1 - x^2)^k``, which
    is exact once the rule has ``k + 1`` nodes.
    """

    family = HIGHEST_WEIGHT

    def __init__(self, k: int):
        if k < 1:
            raise ValueError(f"highest-weight index must be >= 1, got {k}")
        self.k = int(k)
        self.index = (self.k,)
        self.eigenvalue = float(k * (k + 1))
        self.domain = SPHERE_CHART
        self.norm_const = _highest_weight_constant(self.k)

    @property
    def sup_norm(self) -> float:
        return abs(self.scale) * self.norm_const

    def _evaluate(self, points):
        theta, phi = points[..., 0], points[..., 1]
        return self.norm_const * np.sin(theta) ** self.k * np.cos(self.k * phi)

    def _factors(self, u, v):
        return self.norm_const * np.sin(u) ** self.k, np.cos(self.k * v)

    def _partials(self, points):
        theta, phi = points[..., 0], points[..., 1]
        k, c = self.k, self.norm_const
        s = np.sin(theta)
        s_km1 = s ** (k - 1)
        d_theta = c * k * s_km1 * np.cos(theta) * np.cos(k * phi)
        d_phi = -c * k * s_km1 * s * np.sin(k * phi)
        return d_theta, d_phi

    def gradient_norm_sq(self, points):
        # Closed form avoids the 1/sin^2 factor near the poles.
        points = np.asarray(points, dtype=float)
        theta, phi = points[..., 0], points[..., 1]
        k, c = self.k, self.scale * self.norm_const
        s_km1 = np.sin(theta) ** (k - 1)
        ct, cp, sp = np.cos(theta), np.cos(k * phi), np.sin(k * phi)
        return (c * k * s_km1) ** 2 * (ct * ct * cp * cp + sp * sp)

    def gradient(self, points):
        points = np.asarray(points, dtype=float)
        d1, d2 = self.partials(points)
        return np.stack([d1, d2], axis=-1), np.sqrt(self.gradient_norm_sq(points))


_HW_CONSTANTS: dict[int, float] = {}


def _highest_weight_constant(k: int) -> float:
    if k not in _HW_CONSTANTS:
        rule = np.polynomial.legendre.leggauss(k + 2)
        x, w = rule
        # int_S2 sin^{2k} cos^2(k phi) dV = pi * int_{-1}^{1} (1 - x^2)^k dx
        integral = math.pi * float(np.dot(w, (1.0 - x * x) ** k))
        _HW_CONSTANTS[k] = 1.0 / math.sqrt(integral)
    return _HW_CONSTANTS[k]


class TorusProductMode(EigenfunctionField):
    """``sin(k1 x) sin(k2 y) / pi`` on ``[0, 2pi)^2`` with ``lam = k1^2 + k2^2``."""

    family = TORUS_PRODUCT

    def __init__(self, k1: int, k2: int):
        if k1 < 1 or k2 < 1:
            raise ValueError(f"torus frequencies must be >= 1, got ({k1}, {k2})")
        self.k1, self.k2 = int(k1), int(k2)
        self.index = (self.k1, self.k2)
        self.eigenvalue = float(k1 * k1 + k2 * k2)
        self.domain = TORUS_CHART

    @property
    def sup_norm(self) -> float:
        return abs(self.scale) / math.pi

    def _evaluate(self, points):
        return np.sin(self.k1 * points[..., 0]) * np.sin(self.k2 * points[..., 1]) / math.pi

    def _factors(self, u, v):
        return np.sin(self.k1 * u) / math.pi, np.sin(self.k2 * v)

    def _partials(self, points):
        x, y = points[..., 0], points[..., 1]
        dx = self.k1 * np.cos(self.k1 * x) * np.sin(self.k2 * y) / math.pi
        dy = self.k2 * np.sin(self.k1 * x) * np.cos(self.k2 * y) / math.pi
        return dx, dy


def zonal_harmonic(l: int) -> ZonalHarmonic:
    return ZonalHarmonic(l)


def highest_weight_harmonic(k: int) -> HighestWeightHarmonic:
    return HighestWeightHarmonic(k)


def torus_product_mode(k1: int, k2: int) -> TorusProductMode:
    return TorusProductMode(k1, k2)


def make_field(family: str, index) -> EigenfunctionField:
    """Build a field from a family tag and an index (int or ``(k1, k2)``)."""
    family = family.replace("-", "_")
    if family == ZONAL:
        return ZonalHarmonic(int(index))
    if family == HIGHEST_WEIGHT:
        return HighestWeightHarmonic(int(index))
    if family in (TORUS_PRODUCT, "torus"):
        k1, k2 = (index, index) if np.isscalar(index) else index
        return TorusProductMode(int(k1), int(k2))
    raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")


def analytic_nodal_measure(field: EigenfunctionField) -> float:
    """Exact length of the nodal set for the three analytic families.

    Isolated zeros (the poles of the highest-weight harmonics) carry no
    length and are ignored.
    """
    if isinstance(field, ZonalHarmonic):
        r = legendre_roots(field.l)
        return float(math.fsum(2.0 * math.pi * np.sqrt(1.0 - r * r)))
    if isinstance(field, HighestWeightHarmonic):
        return 2.0 * math.pi * field.k
    if isinstance(field, TorusProductMode):
        return (2 * field.k1 + 2 * field.k2) * 2.0 * math.pi
    raise TypeError(f"no analytic nodal measure for {field!r}")


def converged_rule(field: EigenfunctionField, factor: int = 2):
    """A quadrature rule exact for ``e^2`` and ``|grad e|^2`` of ``field``."""
    from .geometry import build_torus_quadrature

    if field.family in (ZONAL, HIGHEST_WEIGHT):
        n = field.index[0]
        return build_sphere_quadrature(max(factor * n, 8) + 2, max(2 * factor * n, 16) + 4)
    k1, k2 = field.index
    return build_torus_quadrature(max(factor * 2 * k1, 8) + 4, max(factor * 2 * k2, 8) + 4)


DEFAULT_LADDER_INDICES = {
    ZONAL: (8, 11, 16, 23, 32, 45, 64),
    HIGHEST_WEIGHT: (8, 11, 16, 23, 32, 45, 64),
    TORUS_PRODUCT: ((4, 4), (6, 6), (8, 8), (11, 11), (16, 16), (23, 23), (32, 32)),
}


def geometric_indices(lo: int, hi: int, per_octave: int = 2) -> tuple[int, ...]:
    """Integers from ``lo`` to ``hi`` spaced roughly evenly in ``log``."""
    if lo < 1 or hi < lo:
        raise ValueError(f"bad index range {lo}..{hi}")
    if lo == hi:
        return (lo,)
    n = max(1, round(per_octave * math.log2(hi / lo)))
    vals = [round(lo * (hi / lo) ** (i / n)) for i in range(n + 1)]
    out = []
    for v in vals:
        if not out or v > out[-1]:
            out.append(int(v))
    return tuple(out)


@dataclass(frozen=True)
class FamilyLadder:
    """A family evaluated along increasing indices, for exponent fits."""

    family: str
    indices: tuple
    fields: tuple

    def __post_init__(self):
        lams = [f.eigenvalue for f in self.fields]
        if len(lams) == 0:
            raise ValueError("ladder must be nonempty")
        if any(b <= a for a, b in zip(lams, lams[1:])):
            raise ValueError("ladder eigenvalues must be strictly increasing")

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([f.eigenvalue for f in self.fields])

    @property
    def description(self) -> str:
        def fmt(i):
            return "x".join(map(str, i)) if isinstance(i, tuple) else str(i)

        return f"{self.family}:{fmt(self.indices[0])}..{fmt(self.indices[-1])} ({len(self.indices)} indices)"

    def __len__(self):
        return len(self.fields)

    def __iter__(self):
        return iter(self.fields)


def build_ladder(family: str, indices: Sequence | None = None) -> FamilyLadder:
    family = family.replace("-", "_")
    if family == "torus":
        family = TORUS_PRODUCT
    if indices is None:
        indices = DEFAULT_LADDER_INDICES[family]
    norm = []
    for i in indices:
        if family == TORUS_PRODUCT and np.isscalar(i):
            i = (int(i), int(i))
        norm.append(tuple(int(v) for v in i) if isinstance(i, (tuple, list)) else int(i))
    fields = tuple(make_field(family, i) for i in norm)
    return FamilyLadder(family, tuple(norm), fields)
