"""Smooth Feshbach-Schur map and the first decimation step.

The map F(H, T) = H_chi - chi W chibar (H_chibar|_Ran chibar)^-1 chibar W chi
with W = H - T, chi^2 + chibar^2 = 1, preserves kernel dimension and bounded
invertibility.  Restricted inverses are computed on an orthonormal basis of
Ran chibar obtained from a rank-revealing SVD.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fock import FockBasis, OperatorMatrix, build_fock_basis
from .model import ModelSpec, WindowError, build_h0, build_hamiltonian, hyp5_frame

RANK_THRESHOLD = 1e-10


def smoothstep(t):
    """Quintic smoothstep: C^2 ramp with vanishing endpoint derivatives."""
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t * t)


@dataclass(frozen=True)
class CutoffSpec:
    """Smooth cutoff pair at scale rho: chi = 1 below 3 rho/4, 0 above rho,
    a cosine-of-smoothstep ramp in between; chibar = sqrt(1 - chi^2) so the
    partition identity is exact in floating point.

    The ramp is C^2 rather than C^infinity; only finitely many derivative
    orders matter numerically.
    """

    rho: float = 1.0

    def chi(self, r):
        r = np.asarray(r, dtype=float) / self.rho
        out = np.where(r <= 0.75, 1.0,
                       np.where(r >= 1.0, 0.0,
                                np.cos(0.5 * np.pi * smoothstep(4.0 * r - 3.0))))
        return out

    def chibar(self, r):
        c = self.chi(r)
        return np.sqrt(1.0 - c * c)

    def fock_diagonals(self, basis: FockBasis):
        """(chi(H_f), chibar(H_f)) as diagonal vectors on the full product
        basis (identity on the atomic factor)."""
        chi = np.kron(np.ones(basis.d_at), self.chi(basis.hf_values))
        cbar = np.kron(np.ones(basis.d_at), self.chibar(basis.hf_values))
        return chi, cbar

    def matrices(self, basis: FockBasis):
        chi, cbar = self.fock_diagonals(basis)
        return np.diag(chi.astype(complex)), np.diag(cbar.astype(complex))


@dataclass
class FeshbachPairReport:
    """Quantitative pair-condition check: commutation residuals, the
    invertibility margin of T (and H_chibar) on Ran chibar, and the two
    contraction norms whose smallness certifies the Neumann expansion."""

    comm_chi: float
    comm_chibar: float
    t_margin: float
    h_margin: float
    contraction_left: float
    contraction_right: float
    rank_chibar: int
    conditioning_warning: bool = False

    @property
    def contractions_ok(self) -> bool:
        return self.contraction_left < 1.0 and self.contraction_right < 1.0

    @property
    def passed(self) -> bool:
        return self.t_margin > 0.0 and self.h_margin > 0.0 and self.contractions_ok


class _PairPieces:
    """Shared factorizations for one (H, T, chi, chibar) quadruple."""

    def __init__(self, h, t, chi, chibar, thresh=RANK_THRESHOLD):
        self.h = np.asarray(h, dtype=complex)
        self.t = np.asarray(t, dtype=complex)
        self.chi = np.asarray(chi, dtype=complex)
        self.chibar = np.asarray(chibar, dtype=complex)
        self.w = self.h - self.t
        u, sv, _ = np.linalg.svd(self.chibar)
        scale = sv[0] if sv.size and sv[0] > 0 else 1.0
        self.rank = int(np.sum(sv > thresh * scale))
        self.near_threshold = bool(np.any((sv > 0.1 * thresh * scale)
                                          & (sv <= 10 * thresh * scale)))
        self.v = u[:, : self.rank]
        self.h_bar = self.t + self.chibar @ self.w @ self.chibar
        self.m_h = self.v.conj().T @ self.h_bar @ self.v
        self.m_t = self.v.conj().T @ self.t @ self.v

    def invariance_leak(self) -> float:
        """How far H_chibar maps Ran chibar outside itself (0 when the
        commutation conditions hold)."""
        if self.rank == 0:
            return 0.0
        img = self.h_bar @ self.v
        return float(np.linalg.norm(img - self.v @ (self.v.conj().T @ img)))

    def restricted_inverse_h(self) -> np.ndarray:
        """(H_chibar|_Ran chibar)^-1 as a full-space matrix V M^-1 V^dag."""
        if self.rank == 0:
            return np.zeros_like(self.h)
        return self.v @ np.linalg.solve(self.m_h, self.v.conj().T)

    def restricted_inverse_t(self) -> np.ndarray:
        if self.rank == 0:
            return np.zeros_like(self.h)
        return self.v @ np.linalg.solve(self.m_t, self.v.conj().T)


def verify_pair(h, t, chi, chibar, thresh=RANK_THRESHOLD) -> FeshbachPairReport:
    """Check the sufficient pair conditions and report margins.

    Margins are smallest singular values of the restrictions to Ran chibar;
    contraction norms are ||T^-1 chibar W chibar|| and ||chibar W T^-1 chibar||.
    """
    p = _PairPieces(h, t, chi, chibar, thresh)
    comm_chi = float(np.linalg.norm(p.chi @ p.t - p.t @ p.chi))
    comm_chibar = float(np.linalg.norm(p.chibar @ p.t - p.t @ p.chibar))
    if p.rank == 0:
        return FeshbachPairReport(comm_chi, comm_chibar, np.inf, np.inf,
                                  0.0, 0.0, 0, p.near_threshold)
    t_margin = float(np.linalg.svd(p.m_t, compute_uv=False)[-1])
    h_margin = float(np.linalg.svd(p.m_h, compute_uv=False)[-1])
    if t_margin > 0:
        rt = p.restricted_inverse_t()
        mid = p.chibar @ p.w @ p.chibar
        left = float(np.linalg.norm(rt @ mid, 2))
        right = float(np.linalg.norm(mid @ rt, 2))
    else:
        left = right = np.inf
    return FeshbachPairReport(comm_chi, comm_chibar, t_margin, h_margin,
                              left, right, p.rank, p.near_threshold)


class FeshbachPairError(ArithmeticError):
    def __init__(self, report: FeshbachPairReport, msg=""):
        self.report = report
        super().__init__(msg or f"Feshbach pair conditions failed: {report}")


def feshbach_map(h, t, chi, chibar, check: bool = True,
                 thresh=RANK_THRESHOLD) -> np.ndarray:
    """F(H, T) = T + chi W chi - chi W chibar (H_chibar|)^-1 chibar W chi."""
    p = _PairPieces(h, t, chi, chibar, thresh)
    if check:
        rep = verify_pair(h, t, chi, chibar, thresh)
        if not (rep.t_margin > 0 and rep.h_margin > 0):
            raise FeshbachPairError(rep)
    rinv = p.restricted_inverse_h()
    return (p.t + p.chi @ p.w @ p.chi
            - p.chi @ p.w @ p.chibar @ rinv @ p.chibar @ p.w @ p.chi)


def q_ops(h, t, chi, chibar, thresh=RANK_THRESHOLD):
    """Auxiliary operators mapping ker F -> ker H and back:
    Q = chi - chibar H_chibar^-1 chibar W chi and its sharp partner."""
    p = _PairPieces(h, t, chi, chibar, thresh)
    rinv = p.restricted_inverse_h()
    q = p.chi - p.chibar @ rinv @ p.chibar @ p.w @ p.chi
    q_sharp = p.chi - p.chi @ p.w @ p.chibar @ rinv @ p.chibar
    return q, q_sharp


def kernel_dim(mat, rel_thresh=RANK_THRESHOLD) -> int:
    sv = np.linalg.svd(np.asarray(mat), compute_uv=False)
    scale = sv[0] if sv.size and sv[0] > 0 else 1.0
    return int(np.sum(sv <= rel_thresh * scale))


@dataclass
class IsospectralityReport:
    inverse_identity_h: float
    inverse_identity_f: float
    kernel_dim_h: int
    kernel_dim_f: int
    invertibility_consistent: bool

    @property
    def kernel_dims_match(self) -> bool:
        return self.kernel_dim_h == self.kernel_dim_f


def isospectrality_suite(h, t, chi, chibar, probe_shifts=(0.0,),
                         thresh=RANK_THRESHOLD):
    """Exercise the two inverse identities and the kernel-dimension equality
    for each probe shift z (the pair becomes (H - z, T - z)).

    Identities, in the full-matrix embedding (F (+) T on the chi-null
    coordinates):  H^-1 = Q F^-1 Q# + chibar H_chibar^-1 chibar   and
    F^-1 = chi H^-1 chi + chibar T^-1 chibar.
    """
    h = np.asarray(h, dtype=complex)
    t = np.asarray(t, dtype=complex)
    eye = np.eye(h.shape[0])
    reports = []
    for z in probe_shifts:
        hz, tz = h - z * eye, t - z * eye
        p = _PairPieces(hz, tz, chi, chibar, thresh)
        f = feshbach_map(hz, tz, chi, chibar, check=False, thresh=thresh)
        q, q_sharp = q_ops(hz, tz, chi, chibar, thresh)
        kd_h = kernel_dim(hz, thresh)
        kd_f = kernel_dim(f, thresh)
        res_h = res_f = np.nan
        sv_h = np.linalg.svd(hz, compute_uv=False)
        sv_f = np.linalg.svd(f, compute_uv=False)
        invertible_h = sv_h[-1] > thresh * sv_h[0]
        invertible_f = sv_f[-1] > thresh * sv_f[0]
        if invertible_h and invertible_f:
            hinv = np.linalg.inv(hz)
            finv = np.linalg.inv(f)
            rhs = q @ finv @ q_sharp + p.chibar @ p.restricted_inverse_h() @ p.chibar
            res_h = float(np.linalg.norm(hinv - rhs) / np.linalg.norm(hinv))
            rhs2 = p.chi @ hinv @ p.chi + p.chibar @ p.restricted_inverse_t() @ p.chibar
            res_f = float(np.linalg.norm(finv - rhs2) / np.linalg.norm(finv))
        reports.append(IsospectralityReport(
            res_h, res_f, kd_h, kd_f, invertible_h == invertible_f))
    return reports


@dataclass
class FirstFeshbachResult:
    """First decimation of the full Hamiltonian onto
    Ran(P_at (x) 1_{H_f <= 1}), with diagnostics."""

    h0: OperatorMatrix
    e_at: complex
    z: complex
    pair_report: FeshbachPairReport
    neumann_discrepancy: float
    neumann_terms: int
    neumann_tail_bound: float
    invariance_leak: float
    full_basis: FockBasis
    reduced_basis: FockBasis
    frame: np.ndarray            # (d_at * n_full) x (d * n_red) isometry
    q_full: np.ndarray           # ker H^(0) -> ker (H_g - z) lift
    atomic_frame: np.ndarray
    hyp5_u: np.ndarray | None = None


def reduced_frame(spec: ModelSpec, full_basis: FockBasis,
                  reduced_basis: FockBasis, atomic_frame: np.ndarray) -> np.ndarray:
    """Isometry embedding C^d (x) (reduced Fock states) into the full space."""
    n_full = full_basis.size
    inject = np.zeros((n_full, reduced_basis.size))
    for i, occ in enumerate(reduced_basis.states):
        inject[full_basis.index[occ], i] = 1.0
    return np.kron(atomic_frame, inject)


def first_feshbach(spec: ModelSpec, s: complex, z: complex,
                   basis: FockBasis | None = None, g: float | None = None,
                   neumann_max_terms: int = 30,
                   neumann_tol: float = 1e-13) -> FirstFeshbachResult:
    """Decimate (H_g(s) - z, H_0(s) - z) with the projection-weighted cutoff
    P_at (x) chi_1(H_f), restricted to the reduced space.

    The result is computed by direct block inversion and cross-checked
    against the truncated Neumann expansion of the same object, with an
    a-posteriori tail bound from the measured contraction norm.
    """
    if g is None:
        g = spec.g
    if not spec.in_window(s, z):
        raise WindowError(f"(s, z) = ({s}, {z}) outside the declared window")
    if basis is None:
        basis = spec.full_basis()

    hyp5_u = None
    p0 = spec.p_at(spec.s0)
    h_full = build_hamiltonian(spec, s, g, basis).mat
    if np.linalg.norm(spec.p_at(s) - p0) > 1e-12:
        u = hyp5_frame(spec, s)
        hyp5_u = u
        uf = np.kron(u, np.eye(basis.size))
        ufinv = np.kron(np.linalg.inv(u), np.eye(basis.size))
        h_full = ufinv @ h_full @ uf
        h0_full = ufinv @ build_h0(spec, s, basis) @ uf
    else:
        h0_full = build_h0(spec, s, basis)

    cut = CutoffSpec(1.0)
    chi_f = cut.chi(basis.hf_values)
    cbar_f = cut.chibar(basis.hf_values)
    pbar0 = np.eye(spec.d_at) - p0
    chi_bold = np.kron(p0, np.diag(chi_f.astype(complex)))
    chibar_bold = (np.kron(pbar0, np.eye(basis.size))
                   + np.kron(p0, np.diag(cbar_f.astype(complex))))

    eye = np.eye(basis.dim)
    hz = h_full - z * eye
    tz = h0_full - z * eye
    pieces = _PairPieces(hz, tz, chi_bold, chibar_bold)
    report = verify_pair(hz, tz, chi_bold, chibar_bold)
    if not (report.t_margin > 0 and report.h_margin > 0):
        raise FeshbachPairError(report)
    leak = pieces.invariance_leak()

    f_direct = feshbach_map(hz, tz, chi_bold, chibar_bold, check=False)

    # Neumann expansion of the same Schur complement:
    # F = T + chi W chi - sum_{L>=1} (-1)^(L-1) chi W chibar (R0 chibar W chibar)^(L-1) R0 chibar W chi
    # with R0 the restricted inverse of T on Ran chibar and W = g W(s).
    w = pieces.w
    r0 = pieces.restricted_inverse_t()
    lead = chi_bold @ w @ chibar_bold
    inner = chibar_bold @ w @ chibar_bold
    contraction = float(np.linalg.norm(r0 @ inner, 2))
    scale = max(1.0, float(np.linalg.norm(f_direct)))
    series = np.zeros_like(f_direct)
    cur = r0 @ (chibar_bold @ w @ chi_bold)
    n_terms = 0
    last_norm = 0.0
    for L in range(1, neumann_max_terms + 1):
        term = lead @ cur
        series += ((-1) ** (L - 1)) * term
        n_terms = L
        last_norm = float(np.linalg.norm(term, 2))
        if last_norm < neumann_tol * scale:
            break
        cur = r0 @ (inner @ cur)
    if contraction < 1.0:
        tail_bound = last_norm * contraction / (1.0 - contraction)
    else:
        tail_bound = np.inf
    f_neumann = tz + chi_bold @ w @ chi_bold - series
    discrepancy = float(np.linalg.norm(f_direct - f_neumann) / scale)

    reduced_fock = spec.reduced_fock_basis()
    vat = spec.atomic_frame()
    frame = reduced_frame(spec, basis, reduced_fock, vat)
    h0_red = frame.conj().T @ f_direct @ frame
    e_at = spec.e_at(s)
    q_full, _ = q_ops(hz, tz, chi_bold, chibar_bold)
    return FirstFeshbachResult(
        h0=OperatorMatrix(h0_red, reduced_fock),
        e_at=e_at, z=z, pair_report=report,
        neumann_discrepancy=discrepancy, neumann_terms=n_terms,
        neumann_tail_bound=tail_bound, invariance_leak=leak,
        full_basis=basis, reduced_basis=reduced_fock, frame=frame,
        q_full=q_full, atomic_frame=vat, hyp5_u=hyp5_u,
    )
