"""Command-line pipeline: run, verify, probe-analyticity, sweep-g, suite.

Reports come in two layers: a flat key=value summary for machines and a
prose digest for humans; numerical tables are emitted as columnar text.
Identical config and seed give byte-identical machine-readable reports
(probe nodes may be evaluated concurrently, but results are merged in index
order).

Exit codes: 0 all checks pass, 1 configuration error, 2 acceptance failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import fock, kernels, symmetry
from .feshbach import CutoffSpec, first_feshbach, isospectrality_suite
from .model import InfraredError, ModelSpec, build_hamiltonian, verify_hypotheses
from .oracle import compare, dense_spectrum, perturbation_scaling
from .rg import (
    RGConfig,
    build_eigenprojection,
    build_eigenvectors,
    iterate_to_fixed_point,
)

_RG_KEYS = ("rho", "mu", "c_chi", "n_iter_max", "tol_z", "tol_fixed_point",
            "window_factor", "schur_tol", "check_winding", "polydisc_strict",
            "secant_max_iter")


@dataclass
class ProbeSpec:
    contour_radius: float = 0.05
    contour_nodes: int = 16
    cr_step: float = 1e-3
    reflection_pairs: int = 2


@dataclass
class RunConfig:
    model_source: str
    rg: RGConfig = field(default_factory=RGConfig)
    probe: ProbeSpec = field(default_factory=ProbeSpec)
    sweep: tuple = (0.02, 0.04, 0.08, 0.16)
    seed: int = 0
    jobs: int = 1


def load_run_config(path_or_name: str,
                    validate: bool = True) -> tuple[RunConfig, ModelSpec]:
    """Accept either a run-config JSON ({"model": ...}) or directly a model
    config (fixture name or file)."""
    name = str(path_or_name)
    doc = None
    if name not in cfgmod.FIXTURES and Path(name).exists():
        with open(name, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise cfgmod.ConfigError(f"invalid JSON in {name}: {exc}") from None
        if not isinstance(doc, dict) or not doc:
            raise cfgmod.ConfigError(f"empty or malformed config {name}")
    if doc is not None and "model" in doc:
        cfgmod._require_keys(
            doc, ["schema_version", "model"],
            ["rg", "probe", "sweep", "seed", "jobs"], where="run config")
        if doc["schema_version"] != cfgmod.SCHEMA_VERSION:
            raise cfgmod.ConfigError(
                f"unsupported schema_version {doc['schema_version']}")
        rg_doc = doc.get("rg", {})
        cfgmod._require_keys(rg_doc, [], _RG_KEYS, where="rg")
        rg = RGConfig(**rg_doc)
        probe_doc = doc.get("probe", {})
        cfgmod._require_keys(probe_doc, [],
                             ("contour_radius", "contour_nodes", "cr_step",
                              "reflection_pairs"), where="probe")
        probe = ProbeSpec(**probe_doc)
        run = RunConfig(str(doc["model"]), rg, probe,
                        tuple(doc.get("sweep", (0.02, 0.04, 0.08, 0.16))),
                        int(doc.get("seed", 0)), int(doc.get("jobs", 1)))
        spec = cfgmod.load_model(run.model_source, validate=validate)
    else:
        spec = cfgmod.load_model(name, validate=validate)
        run = RunConfig(name)
    run.rg = replace(run.rg, rho=spec.grid.ratio, mu=spec.mu)
    return run, spec


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


class Report:
    """Flat key-value accumulator with a prose digest alongside."""

    def __init__(self):
        self.kv = {}
        self.digest = []
        self.failures = []

    def put(self, key: str, value):
        if isinstance(value, (complex, np.complexfloating)):
            self.kv[key + ".re"] = _fmt(float(np.real(value)))
            self.kv[key + ".im"] = _fmt(float(np.imag(value)))
        else:
            self.kv[key] = _fmt(value)

    def check(self, key: str, passed: bool, detail: str = ""):
        self.kv[f"check.{key}"] = "pass" if passed else "fail"
        if not passed:
            self.failures.append(key)
        self.digest.append(f"[{'ok' if passed else 'FAIL'}] {key}"
                           + (f": {detail}" if detail else ""))

    def say(self, text: str):
        self.digest.append(text)

    @property
    def all_passed(self) -> bool:
        return not self.failures

    def kv_text(self) -> str:
        lines = [f"{k}={self.kv[k]}" for k in sorted(self.kv)]
        return "\n".join(lines) + "\n"

    def digest_text(self) -> str:
        return "\n".join(self.digest) + "\n"


def _write(out_dir: str | None, name: str, text: str):
    if out_dir is None:
        return
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / name).write_text(text, encoding="utf-8")


def _spectrum_dump(rep) -> str:
    lines = ["# index re im"]
    for i, ev in enumerate(rep.eigenvalues):
        lines.append(f"{i} {ev.real:.17g} {ev.imag:.17g}")
    return "\n".join(lines) + "\n"


def _kernel_dump(ext) -> str:
    """Columnar diagonal-kernel dump: r then re/im of each matrix entry."""
    ker = ext.kernel
    d = ker.dim
    head = "# r " + " ".join(f"re{a}{b} im{a}{b}"
                             for a in range(d) for b in range(d))
    lines = [head]
    for i, r in enumerate(ker.r_grid):
        row = [f"{r:.17g}"]
        for a in range(d):
            for b in range(d):
                v = ker.values[i, a, b]
                row.append(f"{v.real:.17g}")
                row.append(f"{v.imag:.17g}")
        lines.append(" ".join(row))
    return "\n".join(lines) + "\n"


def run_pipeline(run: RunConfig, spec: ModelSpec, report: Report,
                 out_dir: str | None = None) -> None:
    """verify -> first decimation sanity -> flow to the fixed point ->
    eigenvectors -> oracle comparison -> eigenprojection."""
    cfg = run.rg
    s = spec.s0
    report.put("model", spec.name)
    report.put("seed", run.seed)
    report.put("rho", cfg.rho)
    report.put("mu", spec.mu)
    report.put("xi", cfg.xi)
    report.put("window_threshold", cfg.window_threshold)
    report.put("channel_weight", spec.grid.channel_weight)
    report.put("theory.c_gamma_rho_mu", cfg.c_gamma * cfg.rho**cfg.mu)
    report.put("theory.contraction_admissible", cfg.contraction_admissible)

    hyp = verify_hypotheses(spec)
    for e in hyp.entries:
        report.put(f"hyp.{e.name}.residual", e.residual)
        if e.applicable:
            report.check(f"hyp.{e.name}", e.passed, e.detail)
    report.say(f"hypotheses: {'all pass' if hyp.all_passed else 'FAILURES'}")

    ff = first_feshbach(spec, s, spec.e_at(s))
    report.put("first.neumann_discrepancy", ff.neumann_discrepancy)
    report.put("first.neumann_terms", ff.neumann_terms)
    report.put("first.neumann_tail_bound", ff.neumann_tail_bound)
    report.put("first.contraction", ff.pair_report.contraction_left)
    report.put("first.t_margin", ff.pair_report.t_margin)
    report.check("first_feshbach_consistency", ff.neumann_discrepancy < 1e-10,
                 f"direct vs Neumann discrepancy {ff.neumann_discrepancy:.3e}")

    res = iterate_to_fixed_point(spec, s, cfg)
    report.put("z_inf", res.z_inf)
    report.put("n_levels", res.n_levels)
    report.put("tail_bound_theoretical", res.tail_bound)
    report.put("fitted_rate", res.trace.fitted_rate())
    report.check("converged", res.converged,
                 f"{res.n_levels} levels, z_inf = {res.z_inf}")
    worst_schur = max(r.schur_deviation for r in res.trace.records)
    worst_sym = max(r.symmetry_residual for r in res.trace.records)
    scale = max(1.0, max(abs(r.z) for r in res.trace.records))
    report.put("max_schur_deviation", worst_schur)
    report.put("max_symmetry_residual", worst_sym)
    report.check("schur_scalarization", worst_schur <= cfg.schur_tol * scale)
    report.check("symmetry_preserved", worst_sym <= 1e-9)
    windings = [r.winding for r in res.trace.records if r.winding is not None]
    report.check("winding_unique_root",
                 all(w == 1 for w in windings) if windings else True)
    _write(out_dir, "trace.txt", "\n".join(res.trace.lines()) + "\n")

    ev = build_eigenvectors(spec, s, res.z_inf, cfg)
    report.put("eigvec.depth", ev.depth)
    report.put("eigvec.max_residual", max(ev.residuals))
    report.put("eigvec.gram_ratio", ev.gram_smallest_sv / ev.gram_largest_sv)
    report.check("eigenvectors_residual", max(ev.residuals) <= 1e-7)
    report.check("eigenvectors_independent", ev.independent)

    h_full = build_hamiltonian(spec, s)
    oracle_rep = dense_spectrum(h_full)
    cmp_rep = compare(res.z_inf, ev.vectors, oracle_rep,
                      ground_state_expected=h_full.selfadjoint_known
                      and abs(np.imag(s)) == 0.0)
    report.put("oracle.lowest", oracle_rep.lowest)
    report.put("oracle.multiplicity", oracle_rep.multiplicity)
    report.put("oracle.gap", oracle_rep.gap)
    report.put("oracle.eigenvalue_error", cmp_rep.eigenvalue_error)
    report.put("oracle.max_angle", cmp_rep.max_angle)
    report.check("eigenvalue_matches_oracle", cmp_rep.eigenvalue_error < 1e-7,
                 f"|z_inf - nearest| = {cmp_rep.eigenvalue_error:.3e}")
    report.check("eigenspace_matches_oracle", cmp_rep.max_angle < 1e-5,
                 f"max principal angle {cmp_rep.max_angle:.3e}")
    report.check("oracle_multiplicity", oracle_rep.multiplicity == spec.d
                 and oracle_rep.gap > 10 * oracle_rep.cluster_tol,
                 f"multiplicity {oracle_rep.multiplicity}, gap {oracle_rep.gap:.3e}")
    if cmp_rep.ground_state_error is not None:
        report.put("oracle.ground_state_error", cmp_rep.ground_state_error)
        report.check("ground_state_identity",
                     cmp_rep.ground_state_error < 1e-8)
    _write(out_dir, "spectrum.txt", _spectrum_dump(oracle_rep))
    _write(out_dir, "kernel.txt", _kernel_dump(
        kernels.extract_w00(res.final_ladder.levels[0].h)))

    if spec.complex_selfadjoint and spec.jconj is not None:
        jfull = np.kron(spec.jconj, np.eye(ff.full_basis.size))
        proj = build_eigenprojection(ev.vectors, "conjugation", jmatrix=jfull,
                                     h_full=h_full.mat, z=res.z_inf)
    elif spec.reflection_symmetric and abs(np.imag(s)) == 0.0:
        proj = build_eigenprojection(ev.vectors, "reflection",
                                     psis_conj=ev.vectors,
                                     h_full=h_full.mat, z=res.z_inf)
    else:
        proj = None
    if proj is not None:
        report.put("projection.idempotency", proj.idempotency)
        report.put("projection.rank", proj.rank)
        report.put("projection.eigen_residual", proj.eigen_residual)
        report.check("projection_idempotent", proj.idempotency <= 1e-9)
        report.check("projection_rank", proj.rank == spec.d)
        report.check("projection_eigen", proj.eigen_residual <= 1e-8)

    report.say(f"z_inf = {res.z_inf} after {res.n_levels} levels "
               f"(oracle error {cmp_rep.eigenvalue_error:.2e})")


def analyticity_probe(run: RunConfig, spec: ModelSpec, report: Report) -> None:
    """Contour integral, Cauchy-Riemann differences and Schwarz reflection
    for s -> E_g(s); nodes are independent flow runs merged in index order."""
    cfg = replace(run.rg, check_winding=False)
    s0 = spec.s0
    pr = run.probe
    if pr.contour_radius >= spec.region_radius:
        raise cfgmod.ConfigError("probe contour leaves the declared region")

    def e_of_s(s):
        return iterate_to_fixed_point(spec, s, cfg).z_inf

    thetas = 2 * np.pi * np.arange(pr.contour_nodes) / pr.contour_nodes
    nodes = [s0 + pr.contour_radius * np.exp(1j * t) for t in thetas]
    h = pr.cr_step
    cr_nodes = [s0 + h, s0 - h, s0 + 1j * h, s0 - 1j * h]
    refl = [s0 + pr.contour_radius * np.exp(1j * np.pi / (k + 3))
            for k in range(pr.reflection_pairs)]
    all_nodes = nodes + cr_nodes + refl + [np.conj(s) for s in refl]
    with ThreadPoolExecutor(max_workers=max(1, run.jobs)) as ex:
        values = list(ex.map(e_of_s, all_nodes))
    ev = values[: pr.contour_nodes]
    e_xp, e_xm, e_yp, e_ym = values[pr.contour_nodes: pr.contour_nodes + 4]
    refl_vals = values[pr.contour_nodes + 4:]

    dz = 1j * pr.contour_radius * np.exp(1j * thetas) * (2 * np.pi / pr.contour_nodes)
    integral = complex(np.sum(np.array(ev) * dz))
    scale = pr.contour_radius * max(abs(v) for v in ev)
    contour_resid = abs(integral) / max(scale, 1e-300)
    report.put("probe.contour_integral_abs", abs(integral))
    report.put("probe.contour_residual", contour_resid)
    report.check("contour_integral", contour_resid < 1e-6,
                 f"relative residual {contour_resid:.3e}")

    fx = (e_xp - e_xm) / (2 * h)
    fy = (e_yp - e_ym) / (2 * h)
    cr_resid = abs(fx + 1j * fy)
    report.put("probe.cauchy_riemann_residual", cr_resid)
    report.check("cauchy_riemann", cr_resid < 1e-4,
                 f"residual {cr_resid:.3e}")

    if spec.reflection_symmetric:
        n = len(refl)
        worst = max(abs(np.conj(refl_vals[k]) - refl_vals[n + k])
                    for k in range(n))
        report.put("probe.reflection_residual", worst)
        report.check("schwarz_reflection", worst < 1e-8,
                     f"max |conj(E(s)) - E(sbar)| = {worst:.3e}")
    report.say(f"probe at r_c = {pr.contour_radius}: contour {contour_resid:.2e}, "
               f"CR {cr_resid:.2e}")


def sweep_g(run: RunConfig, spec: ModelSpec, report: Report) -> None:
    """Weak-coupling sweep: oracle scaling fit plus flow cross-check."""
    scaling = perturbation_scaling(spec, spec.s0, run.sweep)
    report.put("sweep.exponent", scaling.exponent)
    for i, g in enumerate(scaling.g_values):
        report.put(f"sweep.g{i}", float(g))
        report.put(f"sweep.energy_error{i}", float(scaling.energy_errors[i]))
        report.put(f"sweep.vector_distance{i}", float(scaling.vector_distances[i]))
    report.check("sweep_exponent", 1.9 <= scaling.exponent <= 2.1
                 if spec.d == spec.d_at else scaling.exponent >= 1.9,
                 f"fitted exponent {scaling.exponent:.4f}")
    report.check("sweep_distances_decreasing", scaling.distances_decreasing)
    cfg = replace(run.rg, check_winding=False)
    worst = 0.0
    for g in run.sweep:
        res = iterate_to_fixed_point(spec, spec.s0, cfg, g=float(g))
        rep = dense_spectrum(build_hamiltonian(spec, spec.s0, float(g)))
        worst = max(worst, float(np.min(np.abs(rep.eigenvalues - res.z_inf))))
    report.put("sweep.max_flow_oracle_error", worst)
    report.check("sweep_flow_matches_oracle", worst < 1e-7)


def property_suite(run: RunConfig, spec: ModelSpec, report: Report) -> None:
    """Cross-module invariant battery with the configured seed; failures are
    data (reported, never raised)."""
    rng = np.random.default_rng(run.seed)
    basis = fock.build_fock_basis(spec.grid, spec.n_max, spec.e_cut, spec.d_at)
    J = spec.grid.levels

    G = [rng.standard_normal((spec.d_at, spec.d_at))
         + 1j * rng.standard_normal((spec.d_at, spec.d_at)) for _ in range(J)]
    crea = fock.creation_op(basis, G).mat
    anni = fock.annihilation_op(basis, G).mat
    report.check("fock_adjoint", float(np.abs(anni - crea.conj().T).max()) <= 1e-14)
    hf = fock.field_energy(basis).mat
    nop = fock.number_op(basis).mat
    report.check("fock_hf_number_commute",
                 float(np.abs(hf @ nop - nop @ hf).max()) == 0.0)
    dil = fock.dilation(basis, spec.grid.ratio)
    gam = dil.matrix()
    hf_t = fock.field_energy(dil.target.with_atomic_dim(spec.d_at)).mat
    report.check("fock_dilation_intertwines",
                 float(np.abs(hf_t @ gam - gam @ hf / spec.grid.ratio).max()) <= 1e-12)
    pt = max(fock.verify_pull_through(basis, lambda r: 1.0 / (r + 2.0), j)
             for j in range(J))
    report.check("fock_pull_through", pt <= 1e-12, f"max residual {pt:.2e}")
    rb = fock.relative_bound_check(basis, G, n_samples=100, seed=run.seed)
    report.check("fock_relative_bounds", rb.passed)

    worst = 0.0
    for _ in range(100):
        t = rng.standard_normal((basis.dim, basis.dim)) \
            + 1j * rng.standard_normal((basis.dim, basis.dim))
        lhs = symmetry.vacuum_expectation(t.conj().T, spec.d_at, basis.size)
        rhs = symmetry.vacuum_expectation(t, spec.d_at, basis.size).conj().T
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    report.check("symmetry_vacuum_adjoint", worst == 0.0)

    reports = []
    for k in range(20):
        n = int(rng.integers(6, 20))
        frame, _ = np.linalg.qr(rng.standard_normal((n, n))
                                + 1j * rng.standard_normal((n, n)))
        hfvals = np.sort(rng.uniform(0, 2, n))
        cut = CutoffSpec(1.0)
        chi = frame @ np.diag(cut.chi(hfvals).astype(complex)) @ frame.conj().T
        cbar = frame @ np.diag(cut.chibar(hfvals).astype(complex)) @ frame.conj().T
        tvals = hfvals + 0.3 + 0.1j * rng.standard_normal(n)
        t = frame @ np.diag(tvals.astype(complex)) @ frame.conj().T
        w = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        w *= 0.1 / np.linalg.norm(w, 2)
        reports.extend(isospectrality_suite(t + w, t, chi, cbar))
    id_res = max(max(r.inverse_identity_h, r.inverse_identity_f)
                 for r in reports)
    report.check("feshbach_inverse_identities", id_res < 1e-9,
                 f"max residual {id_res:.2e}")
    report.check("feshbach_kernel_dims",
                 all(r.kernel_dims_match for r in reports))

    # Schur scalarization of the first decimation under the declared group
    ff = first_feshbach(spec, spec.s0, spec.e_at(spec.s0))
    c, dev = symmetry.schur_scalar(ff.h0.mat, spec.d, ff.reduced_basis.size)
    limit = run.rg.schur_tol * max(1.0, abs(c))
    if spec.d >= 2:
        frame = spec.atomic_frame()
        try:
            from .model import validate_generators
            validate_generators(spec)
            gens = [g.restricted(frame) for g in spec.generators]
            irr = symmetry.is_irreducible(gens, dim=spec.d)
        except ValueError as exc:
            irr = False
            report.say(f"symmetry validation failed: {exc}")
        report.check("suite_group_irreducible", irr)
        report.check("suite_schur_scalar", dev <= limit,
                     f"deviation {dev:.2e} (c = {c})")
    else:
        report.check("suite_schur_scalar", dev <= limit)

    ext = kernels.extract_w00(ff.h0)
    rebuilt = kernels.kernel_c1_of_hf(ext.kernel, ff.reduced_basis)
    gamma_hat = float(np.linalg.norm(ff.h0.mat - rebuilt, 2))
    report.put("suite.gamma_hat0", gamma_hat)
    report.say("suite complete")


def _load_or_exit(path: str, validate: bool = True):
    try:
        return load_run_config(path, validate=validate)
    except (cfgmod.ConfigError, InfraredError, FileNotFoundError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        raise SystemExit(1)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="specrg",
        description="spectral renormalization pipeline for generalized "
                    "spin-boson models on truncated Fock spaces")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "full pipeline with oracle comparison"),
                        ("verify", "hypothesis verification only"),
                        ("probe-analyticity", "contour/CR/reflection probes"),
                        ("sweep-g", "weak-coupling sweep"),
                        ("suite", "cross-module property suite")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True,
                       help="model config path, fixture name, or run config")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--format", choices=("kv", "digest"), default="kv")
        p.add_argument("--jobs", type=int, default=None)
    args = ap.parse_args(argv)

    # the property suite treats broken symmetry declarations as data
    run, spec = _load_or_exit(args.config, validate=args.command != "suite")
    if args.seed is not None:
        run.seed = args.seed
    if args.jobs is not None:
        run.jobs = args.jobs
    report = Report()
    stem = {"run": "run", "verify": "verify", "probe-analyticity": "probe",
            "sweep-g": "sweep", "suite": "suite"}[args.command]
    try:
        if args.command == "run":
            run_pipeline(run, spec, report, args.out)
        elif args.command == "verify":
            hyp = verify_hypotheses(spec)
            for e in hyp.entries:
                report.put(f"hyp.{e.name}.residual", e.residual)
                if e.applicable:
                    report.check(f"hyp.{e.name}", e.passed, e.detail)
        elif args.command == "probe-analyticity":
            analyticity_probe(run, spec, report)
        elif args.command == "sweep-g":
            sweep_g(run, spec, report)
        elif args.command == "suite":
            property_suite(run, spec, report)
    except InfraredError as exc:
        print(f"configuration error: infrared failure: {exc}", file=sys.stderr)
        return 1
    except cfgmod.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1

    report.put("command", args.command)
    report.put("all_passed", report.all_passed)
    _write(args.out, f"{stem}.kv", report.kv_text())
    _write(args.out, f"{stem}.txt", report.digest_text())
    sys.stdout.write(report.kv_text() if args.format == "kv"
                     else report.digest_text())
    return 0 if report.all_passed else 2


if __name__ == "__main__":
    raise SystemExit(main())
