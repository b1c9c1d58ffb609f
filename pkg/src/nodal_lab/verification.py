"""Structured checks of the nodal-set identity and inequality chain.

Every check returns a plain dataclass report that serializes to JSON with
full binary precision; constants hidden in ``<~`` are fitted as extremal
ratios over ladders, never assumed.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .eigenfunctions import FamilyLadder, EigenfunctionField, converged_rule
from .geometry import ChartDescriptor, ChartKind, build_mesh_quadrature, build_sphere_quadrature, \
    build_torus_quadrature
from .integrals import Integrand, helmholtz_applied_integral, volume_integral
from .nodal import AuxSelector, extract_nodal_curves, nodal_energy, nodal_line_integral

SCHWARZ_SLACK = 1e-3
SOBOLEV_TOLERANCE = 1e-6
RESIDUAL_FLOOR = 1e-12
OBSERVABLES = ("NodalLength", "L1Norm", "NodalEnergy")


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("NODAL_LAB_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items: Iterable) -> list:
    """Ordered map, concurrent up to ``NODAL_LAB_THREADS`` workers."""
    items = list(items)
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def rule_for(field: EigenfunctionField, resolution: int):
    """Quadrature paired with an extraction resolution."""
    dom = field.domain
    if isinstance(dom, ChartDescriptor):
        if dom.kind is ChartKind.SPHERE_POLAR:
            return build_sphere_quadrature(resolution, 2 * resolution)
        return build_torus_quadrature(resolution, resolution)
    return build_mesh_quadrature(dom, degree=4)


# ---------------------------------------------------------------------------
# Report types
# ---------------------------------------------------------------------------


class _Serializable:
    report_type = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["report_type"] = self.report_type
        return d

    def to_json(self) -> str:
        return dumps(self.to_dict())


@dataclass
class IdentityReport(_Serializable):
    field_tag: str
    family: str
    index: list
    eigenvalue: float
    f_selector: str
    lhs: float
    rhs: float
    residual: float
    resolutions: list
    residuals: list
    order: float | None
    tolerance: float | None = None
    holds: bool | None = None
    report_type = "IdentityReport"


@dataclass
class InequalityReport(_Serializable):
    field_tag: str
    family: str
    index: list
    eigenvalue: float
    relation: str
    lhs: float
    rhs: float
    ratio: float
    holds: bool
    slack: float = 0.0
    values: dict = field(default_factory=dict)
    report_type = "InequalityReport"


@dataclass
class ScalingFit(_Serializable):
    ladder: str
    observable: str
    resolution: int
    indices: list
    log_lambda: list
    log_value: list
    slope: float
    slope_stderr: float
    intercept: float
    residual_rms: float
    report_type = "ScalingFit"

    @property
    def n_samples(self) -> int:
        return len(self.log_lambda)


@dataclass
class LadderReport(_Serializable):
    """Per-index inequality reports over a ladder plus fitted constants."""

    ladder: str
    relation: str
    reports: list
    constant: float
    min_ratio: float
    max_ratio: float
    spread: float
    extras: dict = field(default_factory=dict)
    report_type = "LadderReport"

    @property
    def holds(self) -> bool:
        return all(r.holds for r in self.reports)

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["reports"] = [r.to_dict() for r in self.reports]
        d["holds"] = self.holds
        return d


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, repr-exact floats, NaN rejected."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _relative(a: float, b: float) -> float:
    m = max(abs(a), abs(b))
    return 0.0 if m == 0 else abs(a - b) / m


def _index(field: EigenfunctionField) -> list:
    return list(field.index)


# ---------------------------------------------------------------------------
# Measurements
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldMeasurement:
    field_tag: str
    family: str
    index: tuple
    eigenvalue: float
    resolution: int
    nodal_length: float
    l1_norm: float
    nodal_energy: float
    nodal_gradient_integral: float


L1_OVERSAMPLING = 8


def measure_field(field: EigenfunctionField, resolution: int = 512) -> FieldMeasurement:
    """Nodal length, ``int |e|``, nodal energy and ``int_Z |grad e|`` at one resolution.

    ``int |e|`` uses a rule ``L1_OVERSAMPLING`` times finer than the extraction
    grid on charts; tensor rules make it a product of 1-D sums there.
    """
    curves = extract_nodal_curves(field, resolution)
    chart = isinstance(field.domain, ChartDescriptor)
    rule = rule_for(field, L1_OVERSAMPLING * resolution if chart else resolution)
    return FieldMeasurement(
        field_tag=field.tag,
        family=field.family,
        index=tuple(field.index),
        eigenvalue=field.eigenvalue,
        resolution=resolution,
        nodal_length=curves.total_length,
        l1_norm=volume_integral(field, rule, Integrand.ABS_E),
        nodal_energy=nodal_energy(field, curves),
        nodal_gradient_integral=nodal_line_integral(field, curves, AuxSelector.ONE),
    )


def measure_ladder(ladder: FamilyLadder, resolution: int = 512) -> list[FieldMeasurement]:
    return parallel_map(lambda f: measure_field(f, resolution), ladder.fields)


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


def estimate_order(resolutions: Sequence[int], residuals: Sequence[float]) -> float | None:
    """Least-squares slope of ``-log(residual)`` against ``log(resolution)``.

    Residuals at or below the floor carry no rate information and are
    dropped; ``None`` is returned when fewer than two remain.
    """
    pts = [(math.log(r), math.log(e)) for r, e in zip(resolutions, residuals) if e > RESIDUAL_FLOOR]
    if len(pts) < 2:
        return None
    x, y = np.array(pts).T
    return float(-np.polyfit(x, y, 1)[0])


def check_identity(field: EigenfunctionField, f_selector="One", resolutions: Sequence[int] = (512, 1024),
                   h: float = 1e-4, tolerance: float | None = None) -> IdentityReport:
    """``int |e| (Delta + lam) f dV`` against ``2 int_Z |grad e| f dS`` at each resolution."""
    sel = AuxSelector.parse(f_selector)
    resolutions = [int(r) for r in resolutions]
    if len(resolutions) < 2 or any(b <= a for a, b in zip(resolutions, resolutions[1:])):
        raise ValueError("check_identity needs at least two increasing resolutions")
    lhs = rhs = float("nan")
    residuals = []
    for r in resolutions:
        curves = extract_nodal_curves(field, r)
        lhs = helmholtz_applied_integral(field, rule_for(field, r), sel, h=h)
        rhs = 2.0 * nodal_line_integral(field, curves, sel)
        residuals.append(_relative(lhs, rhs))
    return IdentityReport(
        field_tag=field.tag,
        family=field.family,
        index=_index(field),
        eigenvalue=field.eigenvalue,
        f_selector=sel.value,
        lhs=lhs,
        rhs=rhs,
        residual=residuals[-1],
        resolutions=resolutions,
        residuals=residuals,
        order=estimate_order(resolutions, residuals),
        tolerance=tolerance,
        holds=None if tolerance is None else residuals[-1] <= tolerance,
    )


def schwarz_report(field: EigenfunctionField, m: FieldMeasurement, slack: float = SCHWARZ_SLACK) -> InequalityReport:
    lhs = field.eigenvalue * m.l1_norm
    rhs = 2.0 * math.sqrt(m.nodal_length) * math.sqrt(m.nodal_energy)
    ratio = rhs / lhs
    return InequalityReport(
        field_tag=field.tag, family=field.family, index=_index(field), eigenvalue=field.eigenvalue,
        relation="schwarz", lhs=lhs, rhs=rhs, ratio=ratio, holds=ratio >= 1.0 - slack, slack=slack,
        values={"l1_norm": m.l1_norm, "nodal_length": m.nodal_length, "nodal_energy": m.nodal_energy,
                "resolution": m.resolution},
    )


def check_schwarz_chain(field: EigenfunctionField, resolution: int = 512) -> InequalityReport:
    """``lam int|e| <= 2 |Z|^(1/2) (int_Z |grad e|^2)^(1/2)``."""
    return schwarz_report(field, measure_field(field, resolution))


def check_sobolev_h1(field: EigenfunctionField, rule=None, tolerance: float = SOBOLEV_TOLERANCE) -> InequalityReport:
    """Green identity ``int |grad e|^2 dV = lam`` (reported with its relative residual)."""
    if not isinstance(field.domain, ChartDescriptor):
        raise TypeError("check_sobolev_h1 is defined for analytic fields")
    rule = converged_rule(field) if rule is None else rule
    lhs = volume_integral(field, rule, Integrand.GRAD_SQUARED)
    rhs = field.eigenvalue
    residual = _relative(lhs, rhs)
    return InequalityReport(
        field_tag=field.tag, family=field.family, index=_index(field), eigenvalue=field.eigenvalue,
        relation="sobolev_h1", lhs=lhs, rhs=rhs, ratio=rhs / lhs, holds=residual <= tolerance,
        values={"residual": residual, "tolerance": tolerance},
    )


def _spread_report(ladder_desc, relation, measurements, fields, lhs_of, rhs_of, extras=None) -> LadderReport:
    raw = [rhs_of(m) / lhs_of(m) for m in measurements]
    min_ratio = min(raw)
    constant = 1.0 / min_ratio
    reports = []
    for f, m, q in zip(fields, measurements, raw):
        lhs, rhs = lhs_of(m), constant * rhs_of(m)
        reports.append(InequalityReport(
            field_tag=f.tag, family=f.family, index=_index(f), eigenvalue=f.eigenvalue,
            relation=relation, lhs=lhs, rhs=rhs, ratio=rhs / lhs,
            holds=rhs / lhs >= 1.0 - 1e-12,
            values={"raw_ratio": q, "constant": constant, "nodal_length": m.nodal_length,
                    "l1_norm": m.l1_norm, "nodal_energy": m.nodal_energy},
        ))
    return LadderReport(ladder=ladder_desc, relation=relation, reports=reports, constant=constant,
                        min_ratio=min_ratio, max_ratio=max(raw), spread=max(raw) / min_ratio,
                        extras=extras or {})


def check_main_inequality(ladder: FamilyLadder, resolution: int = 512,
                          measurements: list[FieldMeasurement] | None = None) -> LadderReport:
    """``lam^(1/2) (int |e|)^2 <= C |Z|`` with ``C`` the ladder extremum.

    ``extras`` carries the slope of ``log(|Z| / (lam^(1/2) (int|e|)^2))`` in
    ``log lam``.
    """
    ms = measurements or measure_ladder(ladder, resolution)
    rep = _spread_report(
        ladder.description, "main", ms, ladder.fields,
        lhs_of=lambda m: math.sqrt(m.eigenvalue) * m.l1_norm**2,
        rhs_of=lambda m: m.nodal_length,
    )
    lam = np.array([m.eigenvalue for m in ms])
    ratio = np.array([r.values["raw_ratio"] for r in rep.reports])
    if len(ms) >= 2:
        rep.extras["ratio_slope"] = float(stats.linregress(np.log(lam), np.log(ratio)).slope)
    return rep


def check_energy_bound(ladder: FamilyLadder, resolution: int = 512,
                       measurements: list[FieldMeasurement] | None = None) -> LadderReport:
    """``int_Z |grad e|^2 dS <= C lam^(3/2)`` with ``C`` the ladder extremum."""
    ms = measurements or measure_ladder(ladder, resolution)
    return _spread_report(
        ladder.description, "energy", ms, ladder.fields,
        lhs_of=lambda m: m.nodal_energy, rhs_of=lambda m: m.eigenvalue**1.5,
    )


def lower_bound_report(ladders: FamilyLadder | Sequence[FamilyLadder], resolution: int = 512,
                       measurements: dict | None = None) -> dict:
    """``int|e| >= c1 lam^(-1/8)`` and ``|Z| >= c2 lam^(1/4)`` at every index.

    The constants are the minima of the normalized ratios over each ladder;
    the family attaining the overall minimum is named for both bounds.
    """
    if isinstance(ladders, FamilyLadder):
        ladders = [ladders]
    measurements = measurements or {}
    out = {"l1_lower": [], "hausdorff_lower": []}
    for ladder in ladders:
        ms = measurements.get(ladder.family) or measure_ladder(ladder, resolution)
        out["l1_lower"].append(_spread_report(
            ladder.description, "l1_lower", ms, ladder.fields,
            lhs_of=lambda m: m.eigenvalue ** (-1.0 / 8.0), rhs_of=lambda m: m.l1_norm,
            extras={"family": ladder.family}))
        out["hausdorff_lower"].append(_spread_report(
            ladder.description, "hausdorff_lower", ms, ladder.fields,
            lhs_of=lambda m: m.eigenvalue ** 0.25, rhs_of=lambda m: m.nodal_length,
            extras={"family": ladder.family}))
    summary = {}
    for rel, reps in out.items():
        best = min(reps, key=lambda r: r.min_ratio)
        summary[rel] = {
            "constant": best.min_ratio,
            "minimizing_family": best.extras["family"],
            "holds": all(r.holds for r in reps),
            "per_family_constant": {r.extras["family"]: r.min_ratio for r in reps},
        }
    return {"reports": out, "summary": summary}


def fit_scaling_exponent(ladder: FamilyLadder, observable: str = "NodalLength", resolution: int = 512,
                         measurements: list[FieldMeasurement] | None = None) -> ScalingFit:
    """OLS fit of ``log(observable)`` against ``log(lam)`` along a ladder."""
    observable = _parse_observable(observable)
    if len(ladder) < 5:
        raise ValueError(f"scaling fits need >= 5 ladder indices, got {len(ladder)}")
    ms = measurements or measure_ladder(ladder, resolution)
    attr = {"NodalLength": "nodal_length", "L1Norm": "l1_norm", "NodalEnergy": "nodal_energy"}[observable]
    lam = np.array([m.eigenvalue for m in ms])
    val = np.array([getattr(m, attr) for m in ms])
    for m, v in zip(ms, val):
        if not (math.isfinite(v) and v > 0):
            raise ValueError(f"observable {observable} is {v!r} at index {m.index}")
    x, y = np.log(lam), np.log(val)
    fit = stats.linregress(x, y)
    resid = y - (fit.intercept + fit.slope * x)
    return ScalingFit(
        ladder=ladder.description, observable=observable, resolution=ms[0].resolution,
        indices=[list(i) if len(i) > 1 else i[0] for i in (m.index for m in ms)],
        log_lambda=x.tolist(), log_value=y.tolist(), slope=float(fit.slope),
        slope_stderr=float(fit.stderr), intercept=float(fit.intercept),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
    )


def _parse_observable(name: str) -> str:
    key = name.lower().replace("_", "").replace("-", "")
    aliases = {"nodallength": "NodalLength", "length": "NodalLength", "l1norm": "L1Norm", "l1": "L1Norm",
               "nodalenergy": "NodalEnergy", "energy": "NodalEnergy"}
    if key not in aliases:
        raise ValueError(f"unknown observable {name!r}; expected one of {OBSERVABLES}")
    return aliases[key]


def ladder_table_csv(measurements: Sequence[FieldMeasurement]) -> str:
    """Flat CSV of ladder measurements (full precision)."""
    cols = ["field_tag", "family", "index", "eigenvalue", "resolution", "nodal_length", "l1_norm",
            "nodal_energy", "nodal_gradient_integral"]
    lines = [",".join(cols)]
    for m in measurements:
        idx = "x".join(str(i) for i in m.index)
        lines.append(",".join([m.field_tag.replace(",", "x"), m.family, idx, repr(m.eigenvalue), str(m.resolution),
                               repr(m.nodal_length), repr(m.l1_norm), repr(m.nodal_energy),
                               repr(m.nodal_gradient_integral)]))
    return "\n".join(lines) + "\n"
