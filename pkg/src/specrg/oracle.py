"""Brute-force ground truth by dense diagonalization of the truncated model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import subspace_angles

from .fock import OperatorMatrix

DIM_BUDGET = 20000


@dataclass
class OracleReport:
    eigenvalues: np.ndarray       # sorted by real part
    eigenvectors: np.ndarray      # columns, same order
    lowest: complex
    multiplicity: int
    gap: float                    # distance from the lowest cluster to the next
    cluster_tol: float
    max_residual: float
    hermitian: bool

    def cluster_vectors(self) -> np.ndarray:
        return self.eigenvectors[:, : self.multiplicity]


def dense_spectrum(h, hermitian: bool | None = None,
                   cluster_tol_factor: float = 1e-8) -> OracleReport:
    """Full eigen-decomposition; Hermitian fast path when flagged.

    Multiplicity of the lowest eigenvalue is the number of eigenvalues
    within cluster_tol_factor * max(1, |lowest|); that tolerance only
    absorbs floating-point scatter of an exact symmetry degeneracy.
    """
    if isinstance(h, OperatorMatrix):
        mat = h.mat
        if hermitian is None:
            hermitian = h.selfadjoint_known
    else:
        mat = np.asarray(h, dtype=complex)
    n = mat.shape[0]
    if n > DIM_BUDGET:
        raise ValueError(f"dimension {n} exceeds the dense budget {DIM_BUDGET}")
    if hermitian:
        vals, vecs = np.linalg.eigh(mat)
        vals = vals.astype(complex)
    else:
        vals, vecs = np.linalg.eig(mat)
    order = np.argsort(vals.real)
    vals, vecs = vals[order], vecs[:, order]
    scale = max(1.0, float(np.linalg.norm(mat, 2)))
    res = float(np.max(np.linalg.norm(mat @ vecs - vecs * vals[None, :], axis=0)))
    lowest = complex(vals[0])
    tol = cluster_tol_factor * max(1.0, abs(lowest))
    mult = int(np.sum(np.abs(vals - lowest) <= tol))
    gap = float(np.abs(vals[mult] - lowest)) if mult < n else np.inf
    return OracleReport(vals, vecs, lowest, mult, gap, tol, res / scale,
                        bool(hermitian))


@dataclass
class ComparisonReport:
    eigenvalue_error: float       # |z_inf - nearest oracle eigenvalue|
    nearest: complex
    principal_angles: np.ndarray
    max_angle: float
    ground_state_error: float | None  # |z_inf - min| for self-adjoint real runs

    @property
    def subspace_distance(self) -> float:
        return float(np.sin(self.max_angle))


def compare(z_inf: complex, psis, oracle: OracleReport,
            ground_state_expected: bool = False) -> ComparisonReport:
    """Distance of the flow output to the dense ground truth."""
    errs = np.abs(oracle.eigenvalues - z_inf)
    k = int(np.argmin(errs))
    nearest = complex(oracle.eigenvalues[k])
    angles = np.array([])
    if psis:
        a = np.column_stack([p / np.linalg.norm(p) for p in psis])
        b = oracle.cluster_vectors()
        angles = subspace_angles(a, b)
    gs_err = abs(z_inf - oracle.lowest) if ground_state_expected else None
    return ComparisonReport(float(errs[k]), nearest, angles,
                            float(np.max(angles)) if angles.size else 0.0,
                            gs_err)


@dataclass
class ScalingReport:
    g_values: np.ndarray
    energy_errors: np.ndarray     # |E_g - E_at|
    exponent: float
    vector_distances: np.ndarray  # subspace distance to the decoupled limit
    distances_decreasing: bool


def perturbation_scaling(spec, s: complex, g_values) -> ScalingReport:
    """Weak-coupling scaling of the ground cluster, by dense diagonalization.

    Fits the log-log slope of |E_g - E_at| against g (second-order
    perturbation theory predicts 2) and tracks the subspace distance between
    the ground cluster and (eigenspace) (x) vacuum, which must shrink
    monotonically as g decreases.
    """
    from .model import build_hamiltonian

    g_values = np.asarray(sorted(g_values), dtype=float)
    if g_values.size < 4:
        raise ValueError("need at least 4 coupling values in the sweep")
    if np.any(g_values <= 0):
        raise ValueError("sweep couplings must be positive")
    basis = spec.full_basis()
    e_at = spec.e_at(s)
    frame = spec.atomic_frame()
    vac = basis.vacuum_vector()
    limit = np.column_stack([np.kron(frame[:, j], vac) for j in range(spec.d)])
    errs = np.empty(g_values.size)
    dists = np.empty(g_values.size)
    for i, g in enumerate(g_values):
        h = build_hamiltonian(spec, s, g, basis)
        rep = dense_spectrum(h)
        errs[i] = abs(rep.lowest - e_at)
        angles = subspace_angles(limit, rep.cluster_vectors()
                                 if rep.multiplicity >= spec.d
                                 else rep.eigenvectors[:, : spec.d])
        dists[i] = np.sin(np.max(angles))
    slope = float(np.polyfit(np.log(g_values), np.log(errs), 1)[0])
    decreasing = bool(np.all(np.diff(dists) > 0))  # dists indexed by growing g
    return ScalingReport(g_values, errs, slope, dists, decreasing)
