"""Renormalization flow: decimate below scale rho, rescale, repeat.

One step maps an operator on the reduced space of a J-shell grid to one on
the (J-1)-shell grid: Feshbach map at cutoff scale rho with the re-extracted
diagonal part as the unperturbed operator, then the exact shell-shift
dilation and division by rho.  On a truncated grid the flow terminates: after
J steps only the bare degenerate subspace is left and the energy function's
zero is an exact eigenvalue of the truncated Hamiltonian (every step is
kernel-preserving at the matrix level).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .feshbach import (
    CutoffSpec,
    FeshbachPairError,
    FeshbachPairReport,
    feshbach_map,
    first_feshbach,
    q_ops,
    verify_pair,
)
from .fock import DilationMap, OperatorMatrix, dilation
from .kernels import PolydiscCheck, PolydiscParams, extract_w00, kernel_c1_of_hf, polydisc_check
from .model import ModelSpec, build_hamiltonian
from .symmetry import is_symmetry_of, schur_scalar


@dataclass
class RGConfig:
    """Scale, window and stopping parameters of the flow."""

    rho: float = 0.5
    mu: float = 0.5
    c_chi: float = 1.0
    n_iter_max: int = 24
    tol_z: float = 1e-12            # secant target for |E^(n)(z_n)|
    tol_fixed_point: float = 1e-9   # stop when |z_n - z_{n-1}| is below
    window_factor: float = 0.125    # threshold = window_factor * rho
    schur_tol: float = 1e-9
    check_winding: bool = True
    polydisc_strict: bool = False   # abort (True) or warn (False) on exit
    secant_max_iter: int = 50

    def __post_init__(self):
        if not (0.0 < self.rho < 0.8):
            raise ValueError(f"rho must lie in (0, 4/5), got {self.rho}")
        if self.window_factor not in (0.125, 0.5):
            # both thresholds from the construction are supported
            raise ValueError("window_factor must be 1/8 or 1/2")

    @property
    def xi(self) -> float:
        return float(np.sqrt(self.rho) / (4.0 * self.c_chi))

    @property
    def window_threshold(self) -> float:
        return self.rho * self.window_factor

    @property
    def c_beta(self) -> float:
        return 1.5 * self.c_chi

    @property
    def c_gamma(self) -> float:
        return 128.0 * self.c_chi**2

    @property
    def contraction_admissible(self) -> bool:
        return self.c_gamma * self.rho**self.mu < 1.0

    def gate_params(self) -> PolydiscParams:
        return PolydiscParams(self.rho / 2, self.rho / 8, self.rho / 8,
                              rho=self.rho, mu=self.mu, c_chi=self.c_chi)


def param_step(alpha: float, beta: float, gamma: float, cfg: RGConfig):
    """One step of the theoretical polydisc recursion:
    alpha' = C_beta gamma^2 / rho, beta' = beta + alpha', gamma' = C_gamma rho^mu gamma.

    Returns ((alpha', beta', gamma'), admissible) where admissible reflects
    the sustained-iteration budget beta' , gamma' <= rho/(8 C_chi).
    """
    shift = cfg.c_beta * gamma**2 / cfg.rho
    nxt = (shift, beta + shift, cfg.c_gamma * cfg.rho**cfg.mu * gamma)
    budget = cfg.rho / (8.0 * cfg.c_chi)
    admissible = nxt[1] <= budget and nxt[2] <= budget
    return nxt, admissible


class WindowExitError(ValueError):
    """z left the admissible window at some flow depth."""

    def __init__(self, level: int, value: complex, threshold: float):
        self.level = level
        self.value = value
        self.threshold = threshold
        super().__init__(
            f"|E^({level})(z)| = {abs(value):.3e} exceeds window threshold "
            f"{threshold:.3e}")


@dataclass
class RGStepInfo:
    pair_report: FeshbachPairReport | None
    polydisc: PolydiscCheck | None
    trivial: bool = False
    dilation_map: DilationMap | None = None
    polydisc_violation: bool = False


def rg_step(h: OperatorMatrix, cfg: RGConfig, collect_q: bool = False):
    """One renormalization step; returns (next operator, info[, q]).

    The unperturbed part is re-extracted from the matrix, so the pair is
    valid independently of extraction error; on the vacuum-only terminal
    space the step degenerates to exact division by rho.
    """
    basis = h.basis
    if basis.grid.levels == 0:
        info = RGStepInfo(None, None, trivial=True)
        out = OperatorMatrix(h.mat / cfg.rho, basis)
        if collect_q:
            return out, info, np.eye(h.mat.shape[0], dtype=complex)
        return out, info

    ext = extract_w00(h)
    t = kernel_c1_of_hf(ext.kernel, basis)
    cut = CutoffSpec(cfg.rho)
    chi, chibar = cut.matrices(basis)

    chk = polydisc_check(h, cfg.gate_params())
    violation = not chk.member
    if violation and cfg.polydisc_strict:
        raise FeshbachPairError(
            verify_pair(h.mat, t, chi, chibar),
            f"polydisc gate failed: measured ({chk.alpha_hat:.3g}, "
            f"{chk.beta_hat:.3g}, {chk.gamma_hat:.3g})")

    report = verify_pair(h.mat, t, chi, chibar)
    if not (report.t_margin > 0 and report.h_margin > 0):
        raise FeshbachPairError(report)
    f = feshbach_map(h.mat, t, chi, chibar, check=False)
    dil = dilation(basis, cfg.rho)
    out = OperatorMatrix(dil.conjugate(f) / cfg.rho, dil.target)
    info = RGStepInfo(report, chk, dilation_map=dil,
                      polydisc_violation=violation)
    if collect_q:
        q, _ = q_ops(h.mat, t, chi, chibar)
        return out, info, q
    return out, info


@dataclass
class LadderLevel:
    n: int
    h: OperatorMatrix
    e_value: complex
    schur_deviation: float
    symmetry_residual: float
    step_info: RGStepInfo | None   # margins of the step INTO this level
    polydisc: PolydiscCheck        # measured radii of this level's operator

    @property
    def gamma_hat(self) -> float:
        return self.polydisc.gamma_hat


@dataclass
class Ladder:
    levels: list
    first: object            # FirstFeshbachResult
    qs: list | None = None   # per-level auxiliary operators when collected

    @property
    def top(self) -> LadderLevel:
        return self.levels[-1]


def run_ladder(spec: ModelSpec, s: complex, z: complex, n_levels: int,
               cfg: RGConfig, g: float | None = None,
               check_windows: bool = True, collect_q: bool = False) -> Ladder:
    """First decimation followed by n_levels flow steps at fixed z.

    Windows gate the descent: going from depth k to k+1 requires
    |E^(k)(z)| <= threshold; violation raises WindowExitError(k).
    """
    first = first_feshbach(spec, s, z, g=g)
    d = spec.d
    levels = []
    qs = [] if collect_q else None
    h = first.h0
    gens_cache = {}

    def make_level(n, h_op, info):
        c, dev = schur_scalar(h_op.mat, d, h_op.basis.size)
        key = h_op.basis.grid.levels
        if spec.generators:
            if key not in gens_cache:
                gens_cache[key] = spec.reduced_generators(h_op.basis)
            worst = 0.0
            for gen in gens_cache[key]:
                _, r = is_symmetry_of(gen, h_op.mat)
                worst = max(worst, r)
        else:
            worst = 0.0
        chk = polydisc_check(h_op, cfg.gate_params())
        return LadderLevel(n, h_op, c, dev, worst, info, chk)

    levels.append(make_level(0, h, None))
    for n in range(1, n_levels + 1):
        prev = levels[-1]
        if check_windows and abs(prev.e_value) > cfg.window_threshold:
            raise WindowExitError(prev.n, prev.e_value, cfg.window_threshold)
        if collect_q:
            h, info, q = rg_step(prev.h, cfg, collect_q=True)
            qs.append(q)
        else:
            h, info = rg_step(prev.h, cfg)
        levels.append(make_level(n, h, info))
    return Ladder(levels, first, qs)


def energy_function(spec: ModelSpec, s: complex, n: int, cfg: RGConfig,
                    g: float | None = None, check_windows: bool = True):
    """E^(n)(z) = tr<H^(n)[z]>_Omega / d as a callable of z."""

    def e_of_z(z: complex) -> complex:
        lad = run_ladder(spec, s, z, n, cfg, g=g, check_windows=check_windows)
        return lad.top.e_value

    return e_of_z


@dataclass
class RootResult:
    z: complex
    e_abs: float
    iterations: int
    winding: int | None
    ladder: Ladder


def find_zn(spec: ModelSpec, s: complex, n: int, cfg: RGConfig,
            z_start: complex, g: float | None = None) -> RootResult:
    """Secant root of E^(n) from z_start, with a slope-prior first step
    (dE/dz ~ -rho^-n) and window-violation backtracking; uniqueness is
    cross-checked by the image winding of E^(n) on a small circle."""

    ladders = {}

    def e_val(z):
        lad = run_ladder(spec, s, z, n, cfg, g=g)
        ladders[z] = lad
        return lad.top.e_value

    z0 = complex(z_start)
    e0 = e_val(z0)
    iters = 1
    if abs(e0) >= cfg.tol_z:
        z1 = z0 + e0 * cfg.rho**n
        z_prev, e_prev = z0, e0
        z_cur = z1
        while True:
            try:
                e_cur = e_val(z_cur)
            except WindowExitError:
                z_cur = 0.5 * (z_cur + z_prev)   # backtrack toward last good
                iters += 1
                if iters > cfg.secant_max_iter:
                    raise ArithmeticError(
                        f"secant failed to stay inside the window at depth {n}")
                continue
            iters += 1
            if abs(e_cur) < cfg.tol_z:
                z0, e0 = z_cur, e_cur
                break
            if iters > cfg.secant_max_iter:
                raise ArithmeticError(
                    f"secant did not converge in {cfg.secant_max_iter} "
                    f"evaluations at depth {n} (|E| = {abs(e_cur):.3e})")
            denom = e_cur - e_prev
            if denom == 0:
                raise ArithmeticError(f"secant stalled at depth {n}")
            z_next = z_cur - e_cur * (z_cur - z_prev) / denom
            z_prev, e_prev = z_cur, e_cur
            z_cur = z_next

    winding = None
    if cfg.check_winding:
        winding = _winding_count(spec, s, n, cfg, z0, g)
        if winding != 1:
            raise ArithmeticError(
                f"argument-principle count at depth {n} gave winding "
                f"{winding}, expected a unique simple zero")
    return RootResult(z0, abs(e0), iters, winding, ladders[z0])


def _winding_count(spec, s, n, cfg, z_center, g, n_nodes: int = 16):
    """Winding of E^(n) around 0 along a small circle inside the window."""
    radius = cfg.rho ** (n + 1) / 16.0
    for _ in range(5):
        try:
            vals = []
            for k in range(n_nodes):
                zc = z_center + radius * np.exp(2j * np.pi * k / n_nodes)
                lad = run_ladder(spec, s, zc, n, cfg, g=g)
                vals.append(lad.top.e_value)
            vals = np.array(vals)
            if np.any(vals == 0):
                radius *= 0.5
                continue
            ratios = np.roll(vals, -1) / vals
            total = float(np.sum(np.angle(ratios)))
            return int(round(total / (2 * np.pi)))
        except WindowExitError:
            radius *= 0.5
    raise ArithmeticError("winding check could not stay inside the window")


@dataclass
class TraceRecord:
    n: int
    z: complex
    dz: float
    e_abs: float
    alpha_hat: float
    beta_hat: float
    gamma_hat: float
    schur_deviation: float
    symmetry_residual: float
    t_margin: float
    contraction_left: float
    gamma_ratio: float
    winding: int | None
    secant_iterations: int = 0

    def line(self) -> str:
        w = "-" if self.winding is None else str(self.winding)
        return (f"n={self.n} z_re={self.z.real:.16e} z_im={self.z.imag:.16e} "
                f"dz={self.dz:.3e} e_abs={self.e_abs:.3e} "
                f"alpha_hat={self.alpha_hat:.6e} beta_hat={self.beta_hat:.6e} "
                f"gamma_hat={self.gamma_hat:.6e} "
                f"schur_dev={self.schur_deviation:.3e} "
                f"sym_res={self.symmetry_residual:.3e} "
                f"t_margin={self.t_margin:.6e} "
                f"contraction={self.contraction_left:.6e} "
                f"gamma_ratio={self.gamma_ratio:.6e} winding={w}")


@dataclass
class RGTrace:
    """Append-only per-iteration record of one pipeline run."""

    records: list = field(default_factory=list)
    window_threshold: float = 0.0
    theoretical_note: str = ""

    def append(self, rec: TraceRecord):
        self.records.append(rec)

    def lines(self):
        head = [f"# window_threshold={self.window_threshold:.6e}"]
        if self.theoretical_note:
            head.append(f"# {self.theoretical_note}")
        return head + [r.line() for r in self.records]

    def fitted_rate(self, n_lo: int = 2, n_hi: int = 6) -> float:
        """Geometric rate of |z_n - z_{n-1}| over n in [n_lo, n_hi]."""
        pts = [(r.n, r.dz) for r in self.records
               if n_lo <= r.n <= n_hi and r.dz > 0]
        if len(pts) < 2:
            return 0.0
        ns = np.array([p[0] for p in pts], dtype=float)
        ys = np.log(np.array([p[1] for p in pts]))
        slope = np.polyfit(ns, ys, 1)[0]
        return float(np.exp(slope))


@dataclass
class PipelineResult:
    z_inf: complex
    trace: RGTrace
    converged: bool
    n_levels: int
    final_ladder: Ladder
    tail_bound: float


def iterate_to_fixed_point(spec: ModelSpec, s: complex, cfg: RGConfig,
                           g: float | None = None) -> PipelineResult:
    """Cascade the per-depth roots z_n until |z_n - z_{n-1}| < tolerance
    with healthy pair margins; z_inf is the last root."""
    z = spec.e_at(s)
    trace = RGTrace(window_threshold=cfg.window_threshold)
    word = ("admissible" if cfg.contraction_admissible
            else "inadmissible; running on measured contraction")
    trace.theoretical_note = (
        f"theoretical contraction C_gamma rho^mu = "
        f"{cfg.c_gamma * cfg.rho ** cfg.mu:.4g} ({word})")
    converged = False
    result = None
    prev_gamma = 0.0
    for n in range(cfg.n_iter_max + 1):
        root = find_zn(spec, s, n, cfg, z_start=z, g=g)
        lad = root.ladder
        top = lad.top
        info = top.step_info
        ghat = top.gamma_hat
        pairrep = info.pair_report if info and info.pair_report else None
        rec = TraceRecord(
            n=n, z=root.z, dz=abs(root.z - z) if n > 0 else 0.0,
            e_abs=root.e_abs,
            alpha_hat=cfg.c_beta * prev_gamma**2 / cfg.rho,
            beta_hat=top.polydisc.beta_hat,
            gamma_hat=ghat,
            schur_deviation=top.schur_deviation,
            symmetry_residual=top.symmetry_residual,
            t_margin=pairrep.t_margin if pairrep else np.inf,
            contraction_left=pairrep.contraction_left if pairrep else 0.0,
            gamma_ratio=(ghat / prev_gamma) if prev_gamma > 0 else 0.0,
            winding=root.winding,
            secant_iterations=root.iterations,
        )
        trace.append(rec)
        prev_gamma = ghat
        margins_ok = pairrep.passed if pairrep else True
        if n >= 1 and abs(root.z - z) < cfg.tol_fixed_point and margins_ok:
            converged = True
            z = root.z
            result = root
            break
        z = root.z
        result = root
    # conservative distance-to-limit bound rho^n exp(sum alpha_k / (2 rho eps^2))
    alphas = [r.alpha_hat for r in trace.records]
    eps = 0.5 - cfg.rho / 2 - (alphas[1] if len(alphas) > 1 else 0.0)
    if eps > 0:
        tail = cfg.rho ** len(trace.records) * float(
            np.exp(sum(alphas) / (2 * cfg.rho * eps**2)))
    else:
        tail = np.inf
    return PipelineResult(z, trace, converged, len(trace.records) - 1,
                          result.ladder, tail)


@dataclass
class EigenvectorResult:
    vectors: list                 # eigenvectors of the truncated H_g(s)
    residuals: list
    gram_smallest_sv: float
    gram_largest_sv: float
    depth: int
    tail_estimate: float
    reduced_vectors: list         # kernel vectors of H^(0)[z_inf]

    @property
    def independent(self) -> bool:
        return self.gram_smallest_sv > 1e-3 * self.gram_largest_sv


def build_eigenvectors(spec: ModelSpec, s: complex, z_inf: complex,
                       cfg: RGConfig, g: float | None = None,
                       basis_vectors=None) -> EigenvectorResult:
    """Assemble d eigenvectors from the truncated auxiliary-operator product
    Q_0 Gamma* Q_1 ... Q_n (v (x) Omega), then lift through the first
    decimation.  On a truncated grid the product stabilizes exactly at the
    terminal depth."""
    depth = spec.grid.levels + 1
    lad = run_ladder(spec, s, z_inf, depth, cfg, g=g,
                     check_windows=False, collect_q=True)
    d = spec.d
    if basis_vectors is None:
        basis_vectors = [np.eye(d)[:, j] for j in range(d)]
    # gammas[k]: dilation taking level k to level k+1 (None for trivial steps)
    gammas = [lvl.step_info.dilation_map for lvl in lad.levels[1:]]
    n_star = depth - 1  # deepest level whose auxiliary operator was collected
    start_basis = lad.levels[n_star].h.basis

    h_full = build_hamiltonian(spec, s, spec.g if g is None else g).mat
    vectors = []
    reduced = []
    residuals = []
    for v in basis_vectors:
        # phi = Q_0 Gamma* Q_1 Gamma* ... Gamma* Q_{n*} (v (x) Omega)
        vec = lad.qs[n_star] @ np.kron(v, start_basis.vacuum_vector())
        for k in range(n_star - 1, -1, -1):
            dil = gammas[k]
            if dil is not None:
                vec = dil.matrix().conj().T @ vec
            vec = lad.qs[k] @ vec
        phi0 = vec  # now on the level-0 reduced space
        reduced.append(phi0)
        psi = lad.first.q_full @ (lad.first.frame @ phi0)
        if lad.first.hyp5_u is not None:
            psi = np.kron(lad.first.hyp5_u,
                          np.eye(lad.first.full_basis.size)) @ psi
        nrm = np.linalg.norm(psi)
        residuals.append(float(np.linalg.norm(h_full @ psi - z_inf * psi)
                               / max(nrm, 1e-300)))
        vectors.append(psi)
    gram = np.array([[np.vdot(a, b) for b in vectors] for a in vectors])
    sv = np.linalg.svd(gram, compute_uv=False)
    gammas_hat = [lvl.gamma_hat for lvl in lad.levels]
    xi = cfg.xi
    c = (8 / cfg.rho) * (xi / (1 - xi)) * float(
        np.exp((8 / cfg.rho) * (xi / (1 - xi)) * sum(gammas_hat)))
    tail = c * sum(gammas_hat[depth:]) if len(gammas_hat) > depth else 0.0
    return EigenvectorResult(vectors, residuals, float(sv[-1]), float(sv[0]),
                             depth, tail, reduced)


@dataclass
class ProjectionResult:
    projection: np.ndarray
    idempotency: float
    rank: int
    eigen_residual: float
    gram_condition: float


def build_eigenprojection(psis, mode: str, psis_conj=None, jmatrix=None,
                          h_full=None, z=None) -> ProjectionResult:
    """Rank-d spectral projection from eigenvectors.

    mode "reflection": pairing <psi_a(sbar), psi_b(s)>; needs psis_conj, the
    eigenvectors at the conjugate parameter.  mode "conjugation": pairing
    <J psi_a, psi_b> for the antiunitary J given by jmatrix (x) conj."""
    k = len(psis)
    if mode == "reflection":
        if psis_conj is None:
            raise ValueError("reflection pairing needs conjugate-point vectors")
        duals = psis_conj
    elif mode == "conjugation":
        if jmatrix is None:
            raise ValueError("conjugation pairing needs the antiunitary matrix")
        duals = [jmatrix @ np.conj(p) for p in psis]
    else:
        raise ValueError(f"unknown pairing mode '{mode}'")
    m = np.array([[np.vdot(duals[a], psis[b]) for b in range(k)]
                  for a in range(k)])
    sv = np.linalg.svd(m, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise np.linalg.LinAlgError(
            "degenerate pairing matrix; the bilinear form is singular on the "
            "eigenspace")
    minv = np.linalg.inv(m)
    p = np.zeros((psis[0].size, psis[0].size), dtype=complex)
    for a in range(k):
        for b in range(k):
            p += minv[a, b] * np.outer(psis[a], np.conj(duals[b]))
    idem = float(np.linalg.norm(p @ p - p) / max(1.0, np.linalg.norm(p)))
    rank = int(round(float(np.real(np.trace(p)))))
    resid = 0.0
    if h_full is not None and z is not None:
        resid = float(np.linalg.norm(h_full @ p - z * p) / max(1.0, np.linalg.norm(p)))
    return ProjectionResult(p, idem, rank, resid, float(sv[0] / sv[-1]))
