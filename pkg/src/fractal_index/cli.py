"""Command-line entry point: ``fractal-index <subcommand> ...``.

Exit status 0 on success, 1 on validation failures (bad input, failed
invariant, exceeded caps) and 2 on numerical failures.
"""

from __future__ import annotations

import argparse
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .carpet import (CarpetGenerator, carpet_from_config, carpet_preset, check_all, dimension_report,
                     resistance_scaling)
from .config import ConfigError, RunConfig, load_config, parse_floats, parse_levels, parse_vector
from .dimension import blowup_search, default_basis, index_report, rank_spectrum
from .harmonic import (ConvergenceError, harmonic_extension, solve_renormalization_scalar,
                       validate_harmonic_structure_matrix, verify_harmonic_structure, energy)
from .io import decimal_text, fraction_text, input_hash, write_csv, write_json, write_plot_data
from .measures import cell_energy_measure, kusuoka_table, mutual_cell_measure, phi_eigenvalues, phi_field
from .structure import StructureError, index_word

THREADS_ENV = "FRACTAL_INDEX_THREADS"  # read in the package __init__


class CheckFailed(Exception):
    """An invariant check did not hold; the message names it."""


# -- helpers -------------------------------------------------------------------------

def _config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "preset", None):
        cfg.structure = {"preset": args.preset}
    if getattr(args, "levels", None):
        cfg.levels = parse_levels(args.levels)
    if getattr(args, "eps", None):
        cfg.epsilons = parse_floats(args.eps)
    if getattr(args, "out", None):
        cfg.output = args.out
    if getattr(args, "vertex_cap", None):
        cfg.vertex_cap = args.vertex_cap
    return cfg.validate()


def _basis(args, cfg, s, hs):
    if getattr(args, "basis", None):
        vectors = [parse_vector(v) for v in args.basis.split(";")]
    elif cfg.basis is not None:
        vectors = cfg.basis
    else:
        return default_basis(s, hs), [",".join("1" if a == i else "0" for a in range(s.n_boundary))
                                      for i in range(s.n_boundary - 1)]
    for v in vectors:
        if len(v) != s.n_boundary:
            raise ConfigError(f"basis vector {v} needs {s.n_boundary} entries")
    fs = [harmonic_extension(s, hs, v, 0) for v in vectors]
    return fs, [",".join(fraction_text(x) for x in v) for v in vectors]


def _boundary(text, s):
    u = parse_vector(text)
    if len(u) != s.n_boundary:
        raise ConfigError(f"--boundary needs {s.n_boundary} values, got {len(u)}")
    return u


def _words(m, S):
    return [index_word(k, m, S) for k in range(S ** m)]


# -- subcommands -----------------------------------------------------------------------
# Each writes its artifacts into ``out`` and returns a dict of named invariant checks.

def cmd_verify_hs(args, cfg, out: Path):
    s = cfg.build_structure()
    checks = {}
    if args.solve_r:
        D = cfg.harmonic["D"] if cfg.harmonic else None
        if D is None:
            from .harmonic import triangle_laplacian
            D = triangle_laplacian(s.n_boundary)
        r = solve_renormalization_scalar(s, D)
        if not isinstance(r, Fraction):
            raise ConvergenceError(f"no exact rational r found (float estimate {r})")
        from .harmonic import HarmonicStructure
        hs = HarmonicStructure.uniform(D, r, s.n_symbols)
    else:
        hs = cfg.build_harmonic(s)
    validity = validate_harmonic_structure_matrix(hs.D)
    checks["boundary_matrix_valid"] = validity.valid
    ok, residual = verify_harmonic_structure(s, hs)
    checks["trace_fixed_point"] = ok
    report = {"structure": s.name, "r": list(hs.r), "D": [list(row) for row in hs.D],
              "residual": residual, "valid": ok and validity.valid, "matrix_failures": validity.failures}
    write_json(out / "verify_hs.json", report)
    print("residual (trace of E^(1) minus E^(0)):")
    for row in residual:
        print("  " + "  ".join(fraction_text(x) for x in row))
    return checks


def cmd_extend(args, cfg, out: Path):
    s = cfg.build_structure()
    hs = cfg.build_harmonic(s)
    u = _boundary(args.boundary, s)
    f = harmonic_extension(s, hs, u, args.level)
    coords = s.vertex_coordinates(args.level)
    dim = len(coords[0]) if coords else 0
    header = ["vertex"] + [f"x{i}_exact" for i in range(dim)] + ["value_exact", "value_decimal"]
    rows = []
    for v, val in enumerate(f.values):
        c = [fraction_text(x) for x in coords[v]] if coords else []
        rows.append([v, *c, fraction_text(val), decimal_text(val)])
    write_csv(out / "extend.csv", header, rows)
    write_json(out / "extend.json", {"structure": s.name, "level": args.level, "boundary": u,
                                      "energy": energy(f), "n_vertices": len(f.values)})
    return {"boundary_values_kept": list(f.values[:s.n_boundary]) == list(u)}


def cmd_energy_table(args, cfg, out: Path):
    s = cfg.build_structure()
    hs = cfg.build_harmonic(s)
    f = harmonic_extension(s, hs, _boundary(args.boundary, s), 0)
    m = args.level
    if args.with_boundary:
        g = harmonic_extension(s, hs, _boundary(args.with_boundary, s), 0)
        table = mutual_cell_measure(f, g, m)
        from .harmonic import mutual_energy
        expected = 2 * mutual_energy(f, g)
    else:
        table = cell_energy_measure(f, m)
        expected = 2 * energy(f)
    vals = table.values()
    write_csv(out / "energy_table.csv", ["word", "nu_exact", "nu_decimal"],
              ([w, fraction_text(v), decimal_text(v)] for w, v in zip(_words(m, s.n_symbols), vals)))
    total = sum(vals, Fraction(0))
    child_ok = m == 0 or table.coarsen(1).equals(
        (mutual_cell_measure(f, g, m - 1) if args.with_boundary else cell_energy_measure(f, m - 1)))
    checks = {"total_equals_twice_energy": total == expected, "child_sum": bool(child_ok)}
    write_json(out / "energy_table.json", {"structure": s.name, "level": m, "total": total,
                                            "twice_energy": expected, "checks": checks})
    return checks


def _phi_rows(phi, m, S):
    d = phi.d
    gram = phi.gram.to_object().reshape(-1, d * d)
    trace = phi.trace.to_object().reshape(-1)
    ev = phi_eigenvalues(phi)
    kus = phi.kusuoka.values()
    for k, w in enumerate(_words(m, S)):
        t = int(trace[k])
        entries = [Fraction(d * int(x), t) if t else Fraction(0) for x in gram[k]]
        row = [w, fraction_text(kus[k]), decimal_text(kus[k])]
        row += [fraction_text(x) for x in entries] + [decimal_text(x) for x in entries]
        row += [repr(float(x)) for x in ev[k]]
        yield row


def cmd_phi_field(args, cfg, out: Path):
    s = cfg.build_structure()
    hs = cfg.build_harmonic(s)
    fs, names = _basis(args, cfg, s, hs)
    m = args.level
    phi = phi_field(fs, m)
    d = phi.d
    idx = [f"{i}{j}" for i in range(d) for j in range(d)]
    header = (["word", "kusuoka_exact", "kusuoka_decimal"] + [f"phi_{p}_exact" for p in idx]
              + [f"phi_{p}_decimal" for p in idx] + [f"lambda_{i}" for i in range(d)])
    write_csv(out / "phi_field.csv", header, _phi_rows(phi, m, s.n_symbols))
    # trace = d on every cell with positive mass, checked on exact integers
    acc = phi.gram[:, 0, 0]
    for i in range(1, d):
        acc = acc + phi.gram[:, i, i]
    trace_ok = bool(acc.equals(phi.trace)[phi.defined].all())
    checks = {"trace_equals_d": trace_ok,
              "kusuoka_total": phi.kusuoka.total() == kusuoka_table(fs, 0).total()}
    write_json(out / "phi_field.json", {"structure": s.name, "level": m, "basis": names, "checks": checks})
    return checks


def cmd_rank_spectrum(args, cfg, out: Path):
    s = cfg.build_structure()
    hs = cfg.build_harmonic(s)
    fs, names = _basis(args, cfg, s, hs)
    summary = {"structure": s.name, "basis": names, "levels": cfg.levels, "spectra": []}
    masses = {eps: [] for eps in cfg.epsilons}
    for m in cfg.levels:
        phi = phi_field(fs, m)
        for j, eps in enumerate(cfg.epsilons):
            rep = rank_spectrum(fs, m, eps, phi=phi)
            masses[eps].append(rep.mass_above)
            summary["spectra"].append(rep.summary())
            if j == 0:
                header = ["word", "weight_decimal", "rank"] + [f"lambda_{i}" for i in range(rep.d)]
                words = _words(m, s.n_symbols)
                write_csv(out / f"rank_spectrum_m{m}.csv", header,
                          ([words[k], repr(float(rep.weights[k])), int(rep.ranks[k])]
                           + [repr(float(x)) for x in rep.eigenvalues[k]] for k in range(len(words))))
    checks = {}
    for eps, ms in masses.items():
        write_plot_data(out / f"mass_above_eps{eps:g}.dat", cfg.levels, ms,
                        comment=f"level  nu-mass of cells with lambda2/lambda1 > {eps:g}")
        checks[f"mass_decreasing_eps{eps:g}"] = all(b < a for a, b in zip(ms, ms[1:]))
    summary["mass_above"] = {f"{eps:g}": ms for eps, ms in masses.items()}
    summary["checks"] = checks
    write_json(out / "rank_spectrum.json", summary)
    return checks


def cmd_blowup(args, cfg, out: Path):
    s = cfg.build_structure()
    hs = cfg.build_harmonic(s)
    fs, names = _basis(args, cfg, s, hs)
    k = parse_floats(args.k) if args.k else None
    trace = blowup_search(fs, args.a, k, args.max_level)
    data = trace.summary()
    data.update(structure=s.name, basis=names)
    write_json(out / "blowup.json", data)
    levels = sorted(trace.candidate_mass)
    write_plot_data(out / "blowup_candidate_mass.dat", levels, [trace.candidate_mass[n] for n in levels],
                    comment="level  nu-mass of cells with det >= a")
    return {"nondegenerate_target": not trace.degenerate}


def cmd_index_report(args, cfg, out: Path):
    s = cfg.build_structure()
    hs = cfg.build_harmonic(s)
    fs, names = _basis(args, cfg, s, hs)
    rep = index_report(s, hs, fs, cfg.levels, cfg.epsilons, names)
    write_json(out / "index_report.json", rep)
    print(f"index estimate: {rep['estimate']} ({rep['caveat']})")
    return {"stable_across_epsilon": rep["stable_across_epsilon"]}


def _carpet(args, cfg) -> CarpetGenerator:
    if args.carpet_preset:
        return carpet_preset(args.carpet_preset)
    return carpet_from_config(cfg.carpet)


def cmd_carpet(args, cfg, out: Path):
    g = _carpet(args, cfg)
    if args.carpet_cmd == "check":
        res = check_all(g)
        write_json(out / "carpet_check.json", {"name": g.name, "D": g.D, "l": g.l, "M": g.M, "checks": res})
        for k, v in res.items():
            print(f"{k}: {'pass' if v else 'fail'}")
        return {k: v for k, v in res.items() if k != "nondiagonality_rectangles"}
    levels = parse_levels(args.levels) if args.levels else [1, 2, 3]
    if args.carpet_cmd == "dims" and args.r is not None:
        rep = dimension_report(g, args.r)
        ratios = []
    else:
        sc = resistance_scaling(g, min(levels), max(levels), cap=cfg.vertex_cap, rtol=cfg.rtol)
        write_csv(out / "resistance.csv", ["level", "resistance_decimal", "ratio_decimal"],
                  ([n, repr(R), "" if rho is None else repr(rho)] for n, R, rho in sc.rows()))
        write_plot_data(out / "resistance_ratio.dat", sc.levels[1:], sc.ratios, comment="level  R_n / R_(n-1)")
        ratios = sc.ratios
        if args.carpet_cmd == "resistance":
            write_json(out / "resistance.json", {"name": g.name, "levels": sc.levels, "resistances": sc.resistances,
                                                 "ratios": sc.ratios, "r_hat": sc.r_hat, "caveat": sc.caveat})
            print(f"r_hat = {sc.r_hat!r}")
            return {"resistance_positive": all(R > 0 for R in sc.resistances)}
        rep = dimension_report(g, sc.r_hat, ratios)
    write_json(out / "dimension_report.json", rep.to_dict())
    print(f"d_H = {rep.d_H:.6f}  d_w = {rep.d_w:.6f}  d_s = {rep.d_s:.6f}  bound: {rep.branch}")
    return {"dimension_identity": rep.identity_residual < 1e-12}


COMMANDS = {
    "verify-hs": cmd_verify_hs,
    "extend": cmd_extend,
    "energy-table": cmd_energy_table,
    "phi-field": cmd_phi_field,
    "rank-spectrum": cmd_rank_spectrum,
    "blowup": cmd_blowup,
    "index-report": cmd_index_report,
    "carpet": cmd_carpet,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fractal-index", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--preset", help="structure preset (sg2, sg3, pentagasket)")
    common.add_argument("--out", help="output directory (default: out)")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("verify-hs", parents=[common], help="check the harmonic-structure fixed point")
    q.add_argument("--solve-r", action="store_true", help="solve for a uniform r first")

    q = sub.add_parser("extend", parents=[common], help="harmonic extension to V_m as CSV")
    q.add_argument("--boundary", required=True, help="comma-separated boundary values, e.g. 1,0,0")
    q.add_argument("--level", type=int, default=1)

    q = sub.add_parser("energy-table", parents=[common], help="cell energy measure table")
    q.add_argument("--boundary", required=True)
    q.add_argument("--with-boundary", help="second function for the mutual measure")
    q.add_argument("--level", type=int, default=2)

    basis_help = "basis boundary vectors separated by ';' (default: e_0, ..., e_{n-2})"
    q = sub.add_parser("phi-field", parents=[common], help="cell ratio matrices of a basis")
    q.add_argument("--basis", help=basis_help)
    q.add_argument("--level", type=int, default=4)

    q = sub.add_parser("rank-spectrum", parents=[common], help="epsilon-rank statistics over levels")
    q.add_argument("--basis", help=basis_help)
    q.add_argument("--levels", help="e.g. 4,6,8 or 4..8")
    q.add_argument("--eps", help="comma-separated thresholds in (0, 1)")

    q = sub.add_parser("blowup", parents=[common], help="search for a nondegenerate blowup target")
    q.add_argument("--basis", help=basis_help)
    q.add_argument("--a", type=float, default=0.01, help="determinant threshold")
    q.add_argument("--k", help="neighbourhood schedule k_1,k_2,... (default k_n = n)")
    q.add_argument("--max-level", type=int, default=6)

    q = sub.add_parser("index-report", parents=[common], help="index estimate with caveats")
    q.add_argument("--basis", help=basis_help)
    q.add_argument("--levels")
    q.add_argument("--eps")

    q = sub.add_parser("carpet", help="generalised Sierpinski carpets")
    csub = q.add_subparsers(dest="carpet_cmd", required=True)
    for name, helptext in [("check", "geometric generator checks"), ("resistance", "resistance scaling"),
                           ("dims", "dimension report")]:
        c = csub.add_parser(name, parents=[common], help=helptext)
        c.add_argument("--carpet-preset", choices=["carpet2d", "carpet3d"])
        if name != "check":
            c.add_argument("--levels", help="level range a..b (default 1..3)")
            c.add_argument("--vertex-cap", type=int)
        if name == "dims":
            c.add_argument("--r", type=float, help="use this r instead of estimating it")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    try:
        cfg = _config(args)
        out = Path(cfg.output)
        sub = args.command + (f" {args.carpet_cmd}" if args.command == "carpet" else "")
        checks = COMMANDS[args.command](args, cfg, out)
        opts = {k: v for k, v in vars(args).items() if k not in ("out", "config")}
        payload = {"options": opts, "config": cfg.as_dict()}
        manifest = {"tool": "fractal-index", "version": __version__, "subcommand": sub,
                    "input_hash": input_hash(payload), "checks": checks,
                    "all_checks_passed": all(checks.values()),
                    "timing_seconds": round(time.perf_counter() - t0, 6)}
        write_json(out / "manifest.json", manifest)
        failed = [k for k, v in checks.items() if not v]
        if failed:
            raise CheckFailed(f"invariant failed: {failed[0]}")
    except (CheckFailed, ConfigError, StructureError, MemoryError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1
    except (ConvergenceError, ZeroDivisionError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
