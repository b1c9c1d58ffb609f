"""The acceptance sweep: eleven numbered checks with tolerances and timings.

Each ``criterion_N`` returns a :class:`CriterionResult` whose ``values`` hold
every number the verdict depends on, so callers can re-check tolerances
independently. Timings are kept out of the serialized record, which makes
``sweep_json`` byte-stable for a fixed :class:`AcceptanceConfig`.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .eigenfunctions import (HIGHEST_WEIGHT, TORUS_PRODUCT, ZONAL, analytic_nodal_measure, build_ladder,
                             geometric_indices, make_field)
from .geometry import build_mesh_quadrature, icosphere, refine_vertex_values
from .integrals import helmholtz_applied_integral
from .nodal import extract_nodal_curves, nodal_line_integral
from .spectral import (FemField, assemble_mass, assemble_stiffness, cluster_eigenvalues, fem_field,
                       project_onto_span, solve_eigenpairs)
from .verification import (check_energy_bound, check_identity, check_main_inequality, check_sobolev_h1,
                           dumps, fit_scaling_exponent, lower_bound_report, measure_field, measure_ladder,
                           parallel_map, schwarz_report)

SPHERE_CLUSTERS = ((0.0, 1), (2.0, 3), (6.0, 5), (12.0, 7))


@dataclass(frozen=True)
class AcceptanceConfig:
    identity_resolution: int = 1024
    aux_resolution: int = 1024
    fd_step: float = 1e-4
    ladder_resolution: int = 512
    ladder_lo: int = 8
    ladder_hi: int = 64
    oracle_resolution: int = 1024
    oracle_max_index: int = 32
    sobolev_max_index: int = 40
    fem_level: int = 5
    fem_count: int = 16

    def ladder_indices(self, family: str) -> tuple:
        if family == TORUS_PRODUCT:
            # (k, k) modes: lam = 2k^2 spans the same range as the sphere ladders at half the index
            return geometric_indices(max(1, self.ladder_lo // 2), max(1, self.ladder_hi // 2))
        return geometric_indices(self.ladder_lo, self.ladder_hi)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    values: dict
    seconds: float = field(default=0.0, compare=False)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.number:2d}: {self.title} ({self.seconds:.1f} s)"

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("seconds")
        return d


IDENTITY_FIELDS = ((ZONAL, 5), (ZONAL, 10), (ZONAL, 20), (HIGHEST_WEIGHT, 5), (HIGHEST_WEIGHT, 10),
                   (HIGHEST_WEIGHT, 20), (TORUS_PRODUCT, (3, 4)), (TORUS_PRODUCT, (5, 12)))
AUX_FIELDS = ((ZONAL, 10), (TORUS_PRODUCT, (3, 4)))


class Sweep:
    """Shared state so later criteria reuse the measurements of earlier ones."""

    def __init__(self, config: AcceptanceConfig | None = None):
        self.config = config or AcceptanceConfig()
        self._ladders = {}
        self._measurements = {}
        self.tested_fields = []

    def ladder(self, family):
        if family not in self._ladders:
            lad = build_ladder(family, self.config.ladder_indices(family))
            self._ladders[family] = lad
            self._measurements[family] = measure_ladder(lad, self.config.ladder_resolution)
        return self._ladders[family], self._measurements[family]

    def _note(self, fields):
        seen = {f.tag for f in self.tested_fields}
        self.tested_fields += [f for f in fields if f.tag not in seen]

    # -- criteria ---------------------------------------------------------

    def criterion_1(self) -> CriterionResult:
        r = self.config.identity_resolution
        fields = [make_field(fam, i) for fam, i in IDENTITY_FIELDS]
        self._note(fields)
        reps = parallel_map(lambda f: check_identity(f, "One", (r // 2, r), tolerance=1e-3), fields)
        vals = {rep.field_tag: rep.residual for rep in reps}
        return CriterionResult(1, "identity with f = 1, residual <= 1e-3", all(rep.holds for rep in reps),
                               {"tolerance": 1e-3, "resolution": r, "residuals": vals,
                                "orders": {rep.field_tag: rep.order for rep in reps}})

    def criterion_2(self) -> CriterionResult:
        r = self.config.aux_resolution
        fields = [make_field(fam, i) for fam, i in AUX_FIELDS]
        self._note(fields)
        reps = parallel_map(lambda f: check_identity(f, "Auxiliary", (r // 2, r), h=self.config.fd_step,
                                                     tolerance=1e-2), fields)
        vals = {rep.field_tag: rep.residual for rep in reps}
        return CriterionResult(2, "identity with the auxiliary f, residual <= 1e-2", all(rep.holds for rep in reps),
                               {"tolerance": 1e-2, "resolution": r, "fd_step": self.config.fd_step,
                                "residuals": vals})

    def sobolev_fields(self):
        top = self.config.sobolev_max_index
        ks = sorted({1, 2, 3, 5, 8, 10, 13, 20, 27, top})
        ks = [k for k in ks if k <= top]
        pairs = [(a, b) for a in ks for b in ks if a <= b][::3]
        return ([make_field(ZONAL, k) for k in ks] + [make_field(HIGHEST_WEIGHT, k) for k in ks]
                + [make_field(TORUS_PRODUCT, p) for p in pairs])

    def criterion_3(self) -> CriterionResult:
        fields = self.sobolev_fields()
        self._note(fields)
        reps = [check_sobolev_h1(f, tolerance=1e-6) for f in fields]
        worst = max(reps, key=lambda rep: rep.values["residual"])
        return CriterionResult(3, "Green identity int |grad e|^2 = lam within 1e-6", all(rep.holds for rep in reps),
                               {"tolerance": 1e-6, "n_fields": len(reps),
                                "max_residual": worst.values["residual"], "worst_field": worst.field_tag,
                                "residuals": {rep.field_tag: rep.values["residual"] for rep in reps}})

    def criterion_4(self) -> CriterionResult:
        lad, ms = self.ladder(ZONAL)
        self._note(lad.fields)
        fit = fit_scaling_exponent(lad, "NodalLength", measurements=ms)
        main = check_main_inequality(lad, measurements=ms)
        ok = abs(fit.slope - 0.5) <= 0.02 and main.spread <= 3.0
        return CriterionResult(4, "zonal |Z| slope 0.50 +/- 0.02, main-ratio spread <= 3", ok,
                               {"slope": fit.slope, "slope_stderr": fit.slope_stderr, "spread": main.spread,
                                "constant": main.constant, "fit": fit.to_dict(), "main": main.to_dict()})

    def criterion_5(self) -> CriterionResult:
        lad, ms = self.ladder(HIGHEST_WEIGHT)
        self._note(lad.fields)
        fit = fit_scaling_exponent(lad, "L1Norm", measurements=ms)
        band = [m.l1_norm * m.eigenvalue**0.125 for m in ms]
        spread = max(band) / min(band)
        ok = abs(fit.slope + 0.125) <= 0.02 and spread <= 2.0
        return CriterionResult(5, "highest-weight L1 slope -0.125 +/- 0.02, band spread <= 2", ok,
                               {"slope": fit.slope, "slope_stderr": fit.slope_stderr, "band": band,
                                "band_spread": spread, "fit": fit.to_dict()})

    def criterion_6(self) -> CriterionResult:
        lad, ms = self.ladder(HIGHEST_WEIGHT)
        fit = fit_scaling_exponent(lad, "NodalEnergy", measurements=ms)
        energy = check_energy_bound(lad, measurements=ms)
        ok = abs(fit.slope - 1.5) <= 0.05
        return CriterionResult(6, "highest-weight nodal energy slope 1.50 +/- 0.05", ok,
                               {"slope": fit.slope, "slope_stderr": fit.slope_stderr, "fit": fit.to_dict(),
                                "energy_constant": energy.constant, "energy_spread": energy.spread})

    def criterion_7(self) -> CriterionResult:
        measured = {}
        for fam in (ZONAL, HIGHEST_WEIGHT, TORUS_PRODUCT):
            lad, ms = self.ladder(fam)
            measured.update({f.tag: (f, m) for f, m in zip(lad.fields, ms)})
        rest = [f for f in self.tested_fields if f.tag not in measured]
        ms = parallel_map(lambda f: measure_field(f, self.config.ladder_resolution), rest)
        measured.update({f.tag: (f, m) for f, m in zip(rest, ms)})
        reps = [schwarz_report(f, m) for f, m in measured.values()]
        worst = min(reps, key=lambda rep: rep.ratio)
        return CriterionResult(7, "Schwarz chain ratio >= 1 - 1e-3 on every tested field",
                               all(rep.holds for rep in reps),
                               {"slack": 1e-3, "n_fields": len(reps), "min_ratio": worst.ratio,
                                "worst_field": worst.field_tag,
                                "ratios": {rep.field_tag: rep.ratio for rep in sorted(reps, key=lambda r: r.field_tag)}})

    def criterion_8(self) -> CriterionResult:
        ladders = [self.ladder(fam)[0] for fam in (ZONAL, HIGHEST_WEIGHT, TORUS_PRODUCT)]
        rep = lower_bound_report(ladders, measurements=dict(self._measurements))
        summ = rep["summary"]
        ok = all(s["holds"] and s["constant"] > 0 for s in summ.values())
        return CriterionResult(8, "lower bounds hold with positive constants; minimizing family named", ok,
                               {"summary": summ,
                                "l1_minimizing_family": summ["l1_lower"]["minimizing_family"],
                                "hausdorff_minimizing_family": summ["hausdorff_lower"]["minimizing_family"]})

    def oracle_fields(self):
        top = self.config.oracle_max_index
        ks = [k for k in (1, 2, 5) + geometric_indices(8, 64) if k <= top]
        pairs = [(1, 1), (3, 4), (5, 12), (7, 2)] + [(k, k) for k in geometric_indices(4, 32) if k <= top]
        return ([make_field(ZONAL, k) for k in ks] + [make_field(HIGHEST_WEIGHT, k) for k in ks]
                + [make_field(TORUS_PRODUCT, p) for p in pairs])

    def criterion_9(self) -> CriterionResult:
        r = self.config.oracle_resolution
        fields = self.oracle_fields()

        def err(f):
            exact = analytic_nodal_measure(f)
            return abs(extract_nodal_curves(f, r).total_length - exact) / exact

        errs = dict(zip((f.tag for f in fields), parallel_map(err, fields)))
        worst = max(errs, key=errs.get)
        return CriterionResult(9, "extracted nodal length within 1e-3 of the closed form",
                               errs[worst] <= 1e-3,
                               {"tolerance": 1e-3, "resolution": r, "max_error": errs[worst],
                                "worst_field": worst, "errors": errs})

    def criterion_10(self) -> CriterionResult:
        return fem_acceptance(self.config.fem_level, self.config.fem_count)

    def run(self, numbers=range(1, 11)) -> list[CriterionResult]:
        out = []
        for n in numbers:
            t = time.perf_counter()
            res = getattr(self, f"criterion_{n}")()
            res.seconds = time.perf_counter() - t
            out.append(res)
        return out


def fem_acceptance(level: int = 5, count: int = 16) -> CriterionResult:
    """Icosphere spectrum clusters, l = 3 nodal-length stability and the identity on a FEM field."""
    mesh = icosphere(level)
    M = assemble_mass(mesh)
    pairs = solve_eigenpairs(assemble_stiffness(mesh), M, count, mesh_hash=mesh.digest())
    lams = [p.eigenvalue for p in pairs]
    clusters = cluster_eigenvalues(lams)
    sizes = [len(c) for c in clusters]
    expect = [m for _, m in SPHERE_CLUSTERS]
    cluster_err = []
    for (target, _), c in zip(SPHERE_CLUSTERS, clusters):
        mean = float(np.mean([lams[i] for i in c]))
        cluster_err.append(abs(mean) if target == 0 else abs(mean - target) / target)
    spectrum_ok = sizes[:len(expect)] == expect and max(cluster_err) <= 1e-2
    residual_max = max(p.residual for p in pairs)

    # first computed member of the seven-fold cluster, carried to the next level
    l3 = clusters[3][0] if len(clusters) > 3 else None
    values = {"eigenvalues": lams, "cluster_sizes": sizes, "cluster_errors": cluster_err,
              "max_residual": residual_max}
    ok = spectrum_ok and residual_max <= 1e-8 and l3 is not None
    if l3 is not None:
        coarse = fem_field(mesh, pairs[l3], index=l3)
        fine_mesh = icosphere(level + 1)
        fine_M = assemble_mass(fine_mesh)
        fine_pairs = solve_eigenpairs(assemble_stiffness(fine_mesh), fine_M, count, mesh_hash=fine_mesh.digest())
        fine_clusters = cluster_eigenvalues([p.eigenvalue for p in fine_pairs])
        span = next((c for c in fine_clusters if len(c) == 7), None)
        rule = build_mesh_quadrature(mesh, degree=4)
        curves = extract_nodal_curves(coarse, 8)
        lhs = helmholtz_applied_integral(coarse, rule, "One")
        rhs = 2.0 * nodal_line_integral(coarse, curves, "One")
        identity_residual = abs(lhs - rhs) / max(abs(lhs), abs(rhs))
        values.update({"l3_index": l3, "coarse_length": curves.total_length, "identity_lhs": lhs,
                       "identity_rhs": rhs, "identity_residual": identity_residual})
        if span is None:
            ok = False
        else:
            basis = np.stack([fine_pairs[i].coefficients for i in span], axis=1)
            prolonged = refine_vertex_values(mesh, coarse.coefficients)
            fine = FemField(fine_mesh, project_onto_span(prolonged, basis, fine_M.matrix),
                            float(np.mean([fine_pairs[i].eigenvalue for i in span])), index=l3)
            fine_length = extract_nodal_curves(fine, 8).total_length
            change = abs(fine_length - curves.total_length) / curves.total_length
            values.update({"fine_length": fine_length, "length_change": change})
            ok = ok and change <= 2e-2 and identity_residual <= 5e-2
    return CriterionResult(10, "FEM clusters within 1%, l = 3 length stable to 2%, identity within 5%", ok,
                           values)


def sweep_json(results) -> str:
    return dumps({"criteria": [r.to_dict() for r in results],
                  "passed": all(r.passed for r in results)})


def determinism_check(config: AcceptanceConfig, reference=None, numbers=range(1, 11)) -> CriterionResult:
    """Re-run the sweep from scratch and compare its JSON bytes with ``reference``.

    ``reference`` is a list of earlier results for the same ``numbers``; when
    omitted the sweep is run twice.
    """
    numbers = list(numbers)
    a = sweep_json(reference if reference is not None else Sweep(config).run(numbers))
    b = sweep_json(Sweep(config).run(numbers))
    return CriterionResult(11, "repeated sweeps serialize to identical bytes", a == b,
                           {"criteria": numbers, "bytes": len(a.encode())})


def quick_config() -> AcceptanceConfig:
    """Small configuration for smoke runs of the sweep."""
    return replace(AcceptanceConfig(), identity_resolution=256, aux_resolution=128, ladder_resolution=128,
                   ladder_hi=32, oracle_resolution=128, oracle_max_index=8, sobolev_max_index=10, fem_level=4)


def run_sweep(config: AcceptanceConfig | None = None, determinism: bool = True):
    config = config or AcceptanceConfig()
    results = Sweep(config).run()
    if determinism:
        t = time.perf_counter()
        det = determinism_check(config, reference=results)
        det.seconds = time.perf_counter() - t
        results.append(det)
    return results


__all__ = ["AcceptanceConfig", "CriterionResult", "Sweep", "fem_acceptance", "sweep_json", "determinism_check",
           "quick_config", "run_sweep"]
