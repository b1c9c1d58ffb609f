"""Command-line interface: ``nodal-lab <command> [options]``.

Exit status is 0 when every check holds, 2 when a check fails (reports are
still written) and 1 on usage or input errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from . import acceptance
from .eigenfunctions import FAMILIES, TORUS_PRODUCT, build_ladder, geometric_indices, make_field
from .geometry import MeshError, build_mesh_quadrature, icosphere, load_mesh
from .integrals import helmholtz_applied_integral, laplacian_fd
from .nodal import AuxSelector, extract_nodal_curves, nodal_line_integral
from .spectral import EigenSolveError, assemble_mass, assemble_stiffness, cluster_eigenvalues, fem_field, \
    solve_eigenpairs
from .svg import emit_svg_loglog
from .verification import (check_identity, check_schwarz_chain, check_sobolev_h1, dumps, fit_scaling_exponent,
                           ladder_table_csv, measure_field, measure_ladder)

log = logging.getLogger("nodal_lab")

OK, FAILED, USAGE = 0, 2, 1
FORMATS = ("csv", "json", "svg")
COMMANDS = ("families", "measure", "verify", "scaling", "fem", "report")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = ""
    family: str = "zonal"
    index: tuple = (1,)
    index_range: tuple = (8, 64)
    resolution: int | None = None  # per command: 512 on charts, 8 (native) for fem
    resolutions: tuple = (512, 1024)
    f: str = "One"
    fd_step: float = 1e-4
    check: str = "identity"
    tolerance: float | None = None
    observable: str = "NodalLength"
    mesh: str | None = None
    level: int = 5
    count: int = 16
    shift: float = 0.0
    out: str | None = None
    formats: tuple = FORMATS
    seed: int = 0
    quick: bool = False

    def validate(self):
        lo, hi = self.index_range
        if lo < 1 or hi < lo:
            raise UsageError(f"index range {lo}..{hi} is empty")
        if list(self.resolutions) != sorted(self.resolutions):
            raise UsageError("resolutions must be sorted ascending")
        bad = set(self.formats) - set(FORMATS)
        if bad:
            raise UsageError(f"unknown output format(s): {', '.join(sorted(bad))}")
        if self.out is not None:
            os.makedirs(self.out, exist_ok=True)
            if not os.access(self.out, os.W_OK):
                raise UsageError(f"output directory {self.out} is not writable")


# -- value parsers ---------------------------------------------------------


def _family(text: str) -> str:
    key = text.strip().lower().replace("-", "_")
    key = {"torus": TORUS_PRODUCT, "hw": "highest_weight"}.get(key, key)
    if key not in FAMILIES:
        raise UsageError(f"unknown family {text!r}; choose from {', '.join(FAMILIES)}")
    return key


def _index(text: str) -> tuple:
    try:
        return tuple(int(t) for t in str(text).replace("x", ",").split(",") if t.strip())
    except ValueError:
        raise UsageError(f"bad index {text!r}") from None


def _range(text: str) -> tuple:
    parts = str(text).split("..")
    try:
        lo, hi = (int(parts[0]), int(parts[1])) if len(parts) == 2 else (int(parts[0]),) * 2
    except (ValueError, IndexError):
        raise UsageError(f"bad range {text!r}; expected LO..HI") from None
    return lo, hi


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise UsageError(f"bad integer list {text!r}") from None


def _str_list(text: str) -> tuple:
    return tuple(t.strip().lower() for t in str(text).split(",") if t.strip())


_CONVERTERS = {
    "family": _family, "index": _index, "index_range": _range, "range": _range, "resolution": int,
    "resolutions": _int_list, "f": lambda s: AuxSelector.parse(s).value, "fd_step": float, "h": float,
    "check": str, "tolerance": float, "observable": str, "mesh": str, "level": int, "count": int,
    "shift": float, "out": str, "formats": _str_list, "seed": int, "quick": lambda s: str(s).lower() in
    ("1", "true", "yes", "on"),
}
_ALIASES = {"range": "index_range", "h": "fd_step"}


def read_config_file(path: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONVERTERS:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[_ALIASES.get(key, key)] = _CONVERTERS[key](val)
    return out


# -- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nodal-lab", description="Nodal sets of Laplace eigenfunctions on surfaces.")
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="command")

    def common(sp, *names):
        # defaults are None so config-file values survive unless a flag is given
        opts = {
            "family": dict(help="zonal | highest-weight | torus"),
            "index": dict(help="l, k or k1,k2"),
            "range": dict(dest="index_range", help="ladder index range LO..HI"),
            "resolution": dict(help="extraction grid size"),
            "resolutions": dict(help="comma-separated, ascending"),
            "f": dict(help="test function: one | aux"),
            "h": dict(dest="fd_step", help="finite-difference step"),
            "check": dict(help="identity | schwarz | sobolev | all"),
            "tolerance": dict(help="override the identity tolerance"),
            "observable": dict(help="NodalLength | L1Norm | NodalEnergy"),
            "level": dict(help="icosphere subdivision level"),
            "count": dict(help="number of eigenpairs"),
            "shift": dict(help="spectral shift"),
            "out": dict(help="output directory"),
            "formats": dict(help="comma-separated subset of csv,json,svg (default: all)"),
            "seed": dict(help="seed for sampled invariant checks"),
        }
        for name in names:
            sp.add_argument(f"--{name}", default=None, **opts[name])

    sub.add_parser("families", help="list available eigenfunction ladders")
    common(sub.add_parser("measure", help="nodal length, L1 norm and nodal energy of one field"),
           "family", "index", "resolution", "out", "formats")
    common(sub.add_parser("verify", help="identity and inequality checks for one field"),
           "family", "index", "f", "resolutions", "h", "check", "tolerance", "out", "formats", "seed")
    common(sub.add_parser("scaling", help="scaling-exponent fit along a ladder"),
           "family", "range", "observable", "resolution", "out", "formats")
    fem = sub.add_parser("fem", help="mesh eigenpairs and nodal measurements")
    fem.add_argument("mesh", nargs="?", default=None, help="OFF mesh file (default: icosphere --level)")
    common(fem, "level", "count", "shift", "resolution", "out", "formats")
    rep = sub.add_parser("report", help="full acceptance sweep")
    rep.add_argument("--quick", action="store_const", const="1", default=None, help="small smoke configuration")
    common(rep, "out", "formats")
    return p


def make_config(args: argparse.Namespace) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for key in ("family", "index", "index_range", "resolution", "resolutions", "f", "fd_step", "check",
                "tolerance", "observable", "mesh", "level", "count", "shift", "out", "formats", "seed", "quick"):
        raw = getattr(args, key, None)
        if raw is not None:
            values[key] = _CONVERTERS[key](raw) if isinstance(raw, str) and key != "mesh" else raw
    names = {f.name for f in fields(RunConfig)}
    cfg = replace(RunConfig(command=args.command), **{k: v for k, v in values.items() if k in names})
    cfg.validate()
    return cfg


# -- output helpers --------------------------------------------------------


def g6(x) -> str:
    return f"{x:.6g}" if isinstance(x, float) else str(x)


def _write(cfg: RunConfig, name: str, text: str):
    if cfg.out is None:
        return
    path = os.path.join(cfg.out, name)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None
    log.info("wrote %s", path)


def _table(rows, out):
    for key, val in rows:
        print(f"{key:<24} {g6(val)}", file=out)


def _field_index(cfg: RunConfig):
    idx = cfg.index
    if cfg.family == TORUS_PRODUCT:
        return idx * 2 if len(idx) == 1 else idx
    if len(idx) != 1:
        raise UsageError(f"family {cfg.family} takes a single index, got {','.join(map(str, idx))}")
    return idx[0]


# -- commands --------------------------------------------------------------


def cmd_families(cfg, out) -> int:
    desc = {
        "zonal": "sqrt((2l+1)/4pi) P_l(cos t) on S^2, lam = l(l+1)",
        "highest_weight": "c_k sin^k t cos(k p) on S^2, lam = k(k+1)",
        "torus_product": "(1/pi) sin(k1 x) sin(k2 y) on T^2, lam = k1^2 + k2^2",
    }
    for fam in FAMILIES:
        lad = build_ladder(fam)
        print(f"{fam:<16} {desc[fam]}", file=out)
        print(f"{'':<16} default ladder {lad.description}", file=out)
    return OK


def cmd_measure(cfg, out) -> int:
    f = make_field(cfg.family, _field_index(cfg))
    m = measure_field(f, cfg.resolution or 512)
    rows = [("field", m.field_tag), ("eigenvalue", m.eigenvalue), ("resolution", m.resolution),
            ("nodal_length", m.nodal_length), ("l1_norm", m.l1_norm), ("nodal_energy", m.nodal_energy),
            ("nodal_gradient_integral", m.nodal_gradient_integral)]
    _table(rows, out)
    if "json" in cfg.formats:
        _write(cfg, f"measure_{_slug(f.tag)}.json", dumps(dict(rows, report_type="FieldMeasurement")))
    if "csv" in cfg.formats:
        _write(cfg, f"measure_{_slug(f.tag)}.csv", ladder_table_csv([m]))
    return OK


def _slug(tag: str) -> str:
    return tag.replace("[", "_").replace("]", "").replace(",", "x").replace("*", "_s")


def cmd_verify(cfg, out) -> int:
    f = make_field(cfg.family, _field_index(cfg))
    checks = ("identity", "schwarz", "sobolev") if cfg.check == "all" else (cfg.check,)
    reports = []
    for c in checks:
        if c == "identity":
            sel = AuxSelector.parse(cfg.f)
            tol = cfg.tolerance if cfg.tolerance is not None else (1e-3 if sel is AuxSelector.ONE else 1e-2)
            rep = check_identity(f, sel, cfg.resolutions, h=cfg.fd_step, tolerance=tol)
            _table([("identity", rep.field_tag), ("f", rep.f_selector), ("lhs", rep.lhs), ("rhs", rep.rhs),
                    ("residual", rep.residual), ("order", rep.order if rep.order is not None else "n/a"),
                    ("holds", rep.holds)], out)
        elif c == "schwarz":
            rep = check_schwarz_chain(f, cfg.resolutions[-1])
            _table([("schwarz", rep.field_tag), ("lhs", rep.lhs), ("rhs", rep.rhs), ("ratio", rep.ratio),
                    ("holds", rep.holds)], out)
        elif c == "sobolev":
            rep = check_sobolev_h1(f)
            _table([("sobolev_h1", rep.field_tag), ("lhs", rep.lhs), ("rhs", rep.rhs),
                    ("residual", rep.values["residual"]), ("holds", rep.holds)], out)
        else:
            raise UsageError(f"unknown check {c!r}; expected identity, schwarz, sobolev or all")
        reports.append(rep)
        _write(cfg, f"{c}_{_slug(f.tag)}.json", rep.to_json())
    if cfg.check == "sobolev" or cfg.check == "all":
        # spot-check the eigen-equation at seeded random interior points
        rng = np.random.default_rng(cfg.seed)
        lo, hi = f.chart.ranges[0]
        pts = np.column_stack([rng.uniform(lo + 0.1, hi - 0.1, 32), rng.uniform(0.0, 2 * np.pi, 32)])
        defect = float(np.max(np.abs(laplacian_fd(f.evaluate, f.chart, pts, 1e-4) + f.eigenvalue * f.evaluate(pts))))
        print(f"{'eigen_defect_max':<24} {g6(defect)}", file=out)
    return OK if all(r.holds for r in reports) else FAILED


def cmd_scaling(cfg, out) -> int:
    lo, hi = cfg.index_range
    idx = geometric_indices(lo, hi)
    if len(idx) < 5:
        raise UsageError(f"range {lo}..{hi} yields {len(idx)} indices; scaling fits need at least 5")
    lad = build_ladder(cfg.family, idx)
    ms = measure_ladder(lad, cfg.resolution or 512)
    fit = fit_scaling_exponent(lad, cfg.observable, measurements=ms)
    _table([("ladder", fit.ladder), ("observable", fit.observable), ("slope", fit.slope),
            ("slope_stderr", fit.slope_stderr), ("intercept", fit.intercept), ("residual_rms", fit.residual_rms)],
           out)
    stem = f"scaling_{cfg.family}_{fit.observable}"
    if "json" in cfg.formats:
        _write(cfg, stem + ".json", fit.to_json())
    if "csv" in cfg.formats:
        _write(cfg, f"ladder_{cfg.family}.csv", ladder_table_csv(ms))
    if "svg" in cfg.formats and cfg.out is not None:
        emit_svg_loglog(fit, os.path.join(cfg.out, stem + ".svg"))
    return OK


def cmd_fem(cfg, out) -> int:
    if cfg.mesh:
        try:
            with open(cfg.mesh, "rb") as fh:
                mesh = load_mesh(fh.read())
        except OSError as exc:
            raise UsageError(f"cannot read mesh {cfg.mesh}: {exc.strerror}") from None
    else:
        mesh = icosphere(cfg.level)
    K, M = assemble_stiffness(mesh), assemble_mass(mesh)
    for w in K.warnings:
        log.warning("negative cotangent weight on edge (%d, %d): %.3g", *w)
    try:
        pairs = solve_eigenpairs(K, M, cfg.count, shift=cfg.shift, mesh_hash=mesh.digest())
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rule = build_mesh_quadrature(mesh, degree=4)
    rows, ok = [], True
    for i, p in enumerate(pairs):
        row = {"index": i, "eigenvalue": p.eigenvalue, "residual": p.residual}
        ok = ok and p.residual <= 1e-8
        if p.eigenvalue > 1e-8 and p.residual <= 1e-8:
            fld = fem_field(mesh, p, index=i)
            curves = extract_nodal_curves(fld, cfg.resolution or 8)
            lhs = helmholtz_applied_integral(fld, rule, "One")
            rhs = 2.0 * nodal_line_integral(fld, curves, "One")
            row.update(nodal_length=curves.total_length, identity_lhs=lhs, identity_rhs=rhs,
                       identity_residual=abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
        rows.append(row)
    print(f"mesh {mesh.n_vertices} vertices, {mesh.n_triangles} triangles, digest {mesh.digest()[:12]}", file=out)
    print(f"{'i':>3} {'eigenvalue':>12} {'residual':>12} {'nodal_length':>12} {'identity_res':>12}", file=out)
    for r in rows:
        print(f"{r['index']:>3} {g6(r['eigenvalue']):>12} {g6(r['residual']):>12} "
              f"{g6(r.get('nodal_length', '-')):>12} {g6(r.get('identity_residual', '-')):>12}", file=out)
    clusters = cluster_eigenvalues([p.eigenvalue for p in pairs])
    print("clusters " + " ".join(f"{g6(float(np.mean([pairs[i].eigenvalue for i in c])))}x{len(c)}"
                                 for c in clusters), file=out)
    if "json" in cfg.formats:
        _write(cfg, "fem.json", dumps({"report_type": "FemReport", "mesh_hash": mesh.digest(),
                                       "eigenpairs": rows, "clusters": clusters}))
    if "csv" in cfg.formats:
        cols = ["index", "eigenvalue", "residual", "nodal_length", "identity_residual"]
        lines = [",".join(cols)] + [",".join(repr(r[c]) if c in r else "" for c in cols) for r in rows]
        _write(cfg, "fem.csv", "\n".join(lines))
    return OK if ok else FAILED


def cmd_report(cfg, out) -> int:
    config = acceptance.quick_config() if cfg.quick else acceptance.AcceptanceConfig()
    results = acceptance.run_sweep(config)
    for r in results:
        print(r.line(), file=out)
    _write(cfg, "report.json", acceptance.sweep_json(results))
    return OK if all(r.passed for r in results) else FAILED


HANDLERS = {"families": cmd_families, "measure": cmd_measure, "verify": cmd_verify, "scaling": cmd_scaling,
            "fem": cmd_fem, "report": cmd_report}


def run(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return OK if exc.code == 0 else USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = make_config(args)
        return HANDLERS[cfg.command](cfg, out)
    except (UsageError, MeshError, EigenSolveError, ValueError, TypeError, OSError) as exc:
        print(f"nodal-lab: error: {exc}", file=sys.stderr)
        return USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
