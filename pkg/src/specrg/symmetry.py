"""Unitary/antiunitary symmetry algebra and the scalarization machinery.

An antiunitary operator is stored as (matrix, flag) and acts as
psi -> U conj(psi); it is never collapsed to a bare matrix, so all
conjugation code branches on the flag explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_UNITARITY_TOL = 1e-12


@dataclass
class SymmetryOp:
    """A unitary or antiunitary operator.

    Action: psi -> U psi (unitary) or psi -> U conj(psi) (antiunitary).
    Optional factorization (atomic_part, fock_part) is kept for operators
    assembled as S1 (x) S2; fock_part is the matrix of S2 in the occupation
    basis (conjugation acts entrywise there, which is basis-real).
    """

    matrix: np.ndarray
    antiunitary: bool = False
    atomic_part: np.ndarray | None = None
    fock_part: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n):
            raise ValueError("symmetry matrix must be square")
        dev = np.linalg.norm(self.matrix @ self.matrix.conj().T - np.eye(n))
        if dev > _UNITARITY_TOL * max(1.0, n):
            raise ValueError(f"matrix part is not unitary (deviation {dev:g})")
        if (self.atomic_part is None) != (self.fock_part is None):
            raise ValueError("factorization needs both atomic and fock parts")
        if self.atomic_part is not None:
            self.atomic_part = np.asarray(self.atomic_part, dtype=complex)
            self.fock_part = np.asarray(self.fock_part, dtype=complex)
            rebuilt = np.kron(self.atomic_part, self.fock_part)
            if np.linalg.norm(rebuilt - self.matrix) > 1e-10 * max(1.0, n):
                raise ValueError("factorization does not reproduce the full matrix")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, psi: np.ndarray) -> np.ndarray:
        if self.antiunitary:
            return self.matrix @ np.conj(psi)
        return self.matrix @ psi

    def compose(self, other: "SymmetryOp") -> "SymmetryOp":
        """self o other; antiunitary o antiunitary is unitary."""
        if self.antiunitary:
            m = self.matrix @ np.conj(other.matrix)
        else:
            m = self.matrix @ other.matrix
        return SymmetryOp(m, self.antiunitary != other.antiunitary)

    def inverse(self) -> "SymmetryOp":
        if self.antiunitary:
            return SymmetryOp(self.matrix.T, True)
        return SymmetryOp(self.matrix.conj().T, False)

    def restricted(self, frame: np.ndarray, tol: float = 1e-10) -> "SymmetryOp":
        """Restriction to the subspace spanned by the orthonormal columns of
        frame.  Raises if the subspace is not invariant (residual > tol)."""
        img = self.matrix @ (np.conj(frame) if self.antiunitary else frame)
        leak = np.linalg.norm(img - frame @ (frame.conj().T @ img))
        if leak > tol:
            raise ValueError(f"subspace not invariant under symmetry (leak {leak:g})")
        return SymmetryOp(frame.conj().T @ img, self.antiunitary)


def conjugate(s: SymmetryOp, t: np.ndarray) -> np.ndarray:
    """S T S^* as a matrix: U T U^dag, or U conj(T) U^dag when antiunitary."""
    t = np.asarray(t, dtype=complex)
    if t.shape[0] != s.dim:
        raise ValueError("dimension mismatch between symmetry and operator")
    u = s.matrix
    if s.antiunitary:
        return u @ np.conj(t) @ u.conj().T
    return u @ t @ u.conj().T


def is_symmetry_of(s: SymmetryOp, t: np.ndarray, tol: float = 1e-12):
    """True iff S T S^* equals T (unitary) resp. T^* (antiunitary).

    Returns (flag, relative residual)."""
    t = np.asarray(t, dtype=complex)
    target = t.conj().T if s.antiunitary else t
    res = np.linalg.norm(conjugate(s, t) - target) / max(1.0, np.linalg.norm(t))
    return bool(res <= tol), float(res)


class SymmetryGroup:
    """Finite group generated by a list of SymmetryOp, closed up to a cap."""

    def __init__(self, generators, cap: int = 64, tol: float = 1e-10):
        self.generators = list(generators)
        self.cap = cap
        self.tol = tol
        if self.generators:
            dim = self.generators[0].dim
            if any(g.dim != dim for g in self.generators):
                raise ValueError("generators act on different dimensions")
        self.elements = self._close()

    def _key(self, op: SymmetryOp):
        m = np.round(op.matrix / self.tol) * self.tol + 0.0  # kill -0.0
        return (op.antiunitary, m.tobytes())

    def _close(self):
        if not self.generators:
            return []
        dim = self.generators[0].dim
        elems = [SymmetryOp(np.eye(dim), False)]
        seen = {self._key(elems[0])}
        frontier = list(elems)
        gens = self.generators + [g.inverse() for g in self.generators]
        while frontier:
            nxt = []
            for e in frontier:
                for g in gens:
                    c = e.compose(g)
                    k = self._key(c)
                    if k not in seen:
                        seen.add(k)
                        elems.append(c)
                        nxt.append(c)
                        if len(elems) > self.cap:
                            raise ValueError(
                                f"group closure exceeded cap of {self.cap} elements"
                            )
            frontier = nxt
        return elems

    def __len__(self):
        return len(self.elements)

    def is_symmetry_of(self, t: np.ndarray, tol: float = 1e-12):
        """Worst residual of the symmetry condition over all generators."""
        worst = 0.0
        for g in self.generators:
            _, res = is_symmetry_of(g, t, tol)
            worst = max(worst, res)
        return worst <= tol, worst


def _commutant_nullspace(ops, dim: int, tol: float = 1e-10):
    """Real-linear solution space of S M = M S (unitary) and
    U conj(M) = M U (antiunitary), returned as a list of d x d matrices."""
    n2 = dim * dim
    rows = []
    eye = np.eye(dim)
    # row-major vec: vec(U M) = (U (x) I) m, vec(M U) = (I (x) U^T) m
    for op in ops:
        u = op.matrix
        a = np.kron(u, eye)
        b = np.kron(eye, u.T)
        if op.antiunitary:
            # U conj(M) - M U = 0, real-linear in m = x + i y
            top = np.hstack([np.real(a) - np.real(b), np.imag(a) + np.imag(b)])
            bot = np.hstack([np.imag(a) - np.imag(b), -np.real(a) - np.real(b)])
        else:
            c = a - b  # U M - M U = 0, complex-linear
            top = np.hstack([np.real(c), -np.imag(c)])
            bot = np.hstack([np.imag(c), np.real(c)])
        rows.append(top)
        rows.append(bot)
    if not rows:
        system = np.zeros((1, 2 * n2))
    else:
        system = np.vstack(rows)
    _, sv, vt = np.linalg.svd(system)
    scale = sv[0] if sv.size and sv[0] > 0 else 1.0
    null = [vt[i] for i in range(vt.shape[0]) if i >= len(sv) or sv[i] <= tol * scale]
    mats = []
    for v in null:
        m = v[:n2].reshape(dim, dim) + 1j * v[n2:].reshape(dim, dim)
        mats.append(m)
    return mats


def is_irreducible(ops, dim: int | None = None, tol: float = 1e-10) -> bool:
    """Whether the (anti)unitary set acts with no proper invariant subspace.

    Decision: an invariant subspace exists iff the real-linear commutant of
    the set contains a non-scalar Hermitian element (its spectral projections
    are invariant).  The commutant is computed as a nullspace; each basis
    element is Hermitized and compared against the identity.  This remains
    correct for antiunitary-containing sets, where the raw commutant can be
    quaternionic without any invariant subspace existing.
    """
    ops = list(ops)
    if dim is None:
        if not ops:
            raise ValueError("need ops or an explicit dimension")
        dim = ops[0].dim
    if dim == 1:
        return True
    for m in _commutant_nullspace(ops, dim, tol):
        h = m + m.conj().T
        dev = np.linalg.norm(h - (np.trace(h) / dim) * np.eye(dim))
        if dev > tol * max(1.0, np.linalg.norm(h)):
            return False
    return True


def vacuum_expectation(t: np.ndarray, d: int, n_fock: int,
                       vacuum_index: int = 0) -> np.ndarray:
    """<T>_Omega: the d x d matrix <e_a (x) Omega, T e_b (x) Omega>."""
    t = np.asarray(t, dtype=complex)
    idx = np.arange(d) * n_fock + vacuum_index
    return t[np.ix_(idx, idx)].copy()


def schur_scalar(t: np.ndarray, d: int, n_fock: int):
    """Scalarize the vacuum block: c = tr<T>_Omega / d.

    Returns (c, deviation) with deviation = ||<T>_Omega - c 1||; a large
    deviation signals broken symmetry upstream and is data, not an error.
    """
    m = vacuum_expectation(t, d, n_fock)
    c = complex(np.trace(m) / d)
    dev = float(np.linalg.norm(m - c * np.eye(d), 2))
    return c, dev


@dataclass
class TransformationResult:
    """Conjugating family U(s) along a parameter path, with diagnostics."""

    path: np.ndarray
    u: list
    v: list
    max_projection_residual: float = field(default=0.0)
    max_inverse_residual: float = field(default=0.0)


def transformation_function(p, s0: complex, s1: complex, n_steps: int,
                            proj_tol: float = 1e-8) -> TransformationResult:
    """Integrate U' = Q U, U(s0) = 1 with Q = P'P - PP' along the straight
    path from s0 to s1; then U(s) P(s0) U(s)^{-1} = P(s).

    p is a callable returning the projection matrix at a complex parameter;
    P' uses 4th-order central differences, the stepper is classic RK4, so the
    conjugation residual is O(h^4).  The left-inverse family V' = -V Q is
    integrated alongside and V U = U V = 1 is monitored.
    """
    s0 = complex(s0)
    s1 = complex(s1)
    if n_steps < 1:
        raise ValueError("need at least one step")
    h = (s1 - s0) / n_steps

    p0 = np.asarray(p(s0), dtype=complex)
    dim = p0.shape[0]
    if np.linalg.norm(p0 @ p0 - p0) > proj_tol * max(1.0, np.linalg.norm(p0)):
        raise ValueError("input family is not a projection at the base point")

    def q_at(s):
        ps = np.asarray(p(s), dtype=complex)
        dp = (-np.asarray(p(s + 2 * h), dtype=complex)
              + 8 * np.asarray(p(s + h), dtype=complex)
              - 8 * np.asarray(p(s - h), dtype=complex)
              + np.asarray(p(s - 2 * h), dtype=complex)) / (12 * h)
        return dp @ ps - ps @ dp

    path = s0 + h * np.arange(n_steps + 1)
    u = np.eye(dim, dtype=complex)
    v = np.eye(dim, dtype=complex)
    us = [u.copy()]
    vs = [v.copy()]
    for k in range(n_steps):
        s = path[k]
        q1 = q_at(s)
        q2 = q_at(s + 0.5 * h)
        q4 = q_at(s + h)
        k1 = q1 @ u
        k2 = q2 @ (u + 0.5 * h * k1)
        k3 = q2 @ (u + 0.5 * h * k2)
        k4 = q4 @ (u + h * k3)
        u = u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        l1 = -v @ q1
        l2 = -(v + 0.5 * h * l1) @ q2
        l3 = -(v + 0.5 * h * l2) @ q2
        l4 = -(v + h * l3) @ q4
        v = v + (h / 6.0) * (l1 + 2 * l2 + 2 * l3 + l4)
        us.append(u.copy())
        vs.append(v.copy())

    max_proj = 0.0
    max_inv = 0.0
    eye = np.eye(dim)
    for s, uk, vk in zip(path, us, vs):
        ps = np.asarray(p(s), dtype=complex)
        if np.linalg.norm(ps @ ps - ps) > proj_tol * max(1.0, np.linalg.norm(ps)):
            raise ValueError(f"input family is not a projection at s={s}")
        if abs(np.linalg.det(uk)) == 0.0:
            raise ArithmeticError(f"conjugating family became singular at s={s}")
        max_proj = max(max_proj, np.linalg.norm(uk @ p0 @ np.linalg.inv(uk) - ps))
        max_inv = max(max_inv, np.linalg.norm(vk @ uk - eye),
                      np.linalg.norm(uk @ vk - eye))
    return TransformationResult(path, us, vs, float(max_proj), float(max_inv))
