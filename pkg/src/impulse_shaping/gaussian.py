"""Gaussian moments, system matrices and quantum validity checks.

Quadratures are ordered as ``(q_1..q_n, p_1..p_n)`` throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDimensionError, ShapeError, ValidityError

TOL_PSD = 1e-10
TOL_SYM = 1e-9


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


def symmetrize(S):
    """Return ``(S + S.T) / 2``."""
    S = np.asarray(S, dtype=float)
    return 0.5 * (S + S.T)


def _psd_floor(S, tol_psd):
    d = S.shape[0]
    scale = max(abs(np.trace(S)) / d, 1.0) if d else 1.0
    return -tol_psd * scale


def is_symmetric(S, tol=TOL_SYM):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        return False
    scale = max(np.max(np.abs(S)), 1.0) if S.size else 1.0
    return bool(np.max(np.abs(S - S.T), initial=0.0) <= tol * scale)


def is_psd(S, tol_psd=TOL_PSD):
    """True if the smallest eigenvalue of ``S`` exceeds ``-tol_psd * trace(S)/d``."""
    S = symmetrize(S)
    return bool(np.linalg.eigvalsh(S)[0] >= _psd_floor(S, tol_psd))


@dataclass(frozen=True)
class SymplecticForm:
    """Canonical symplectic matrix for ``n`` bosonic modes."""

    n: int
    J: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return 2 * self.n


def build_symplectic(n):
    """Build ``J = [[0, I], [-I, 0]]`` for ``n`` modes.

    Parameters
    ----------
    n : int
        Number of modes, at least 1.

    Returns
    -------
    SymplecticForm
    """
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidDimensionError(f"number of modes must be a positive integer, got {n!r}")
    n = int(n)
    eye = np.eye(n)
    zero = np.zeros((n, n))
    J = np.block([[zero, eye], [-eye, zero]])
    return SymplecticForm(n=n, J=_frozen(J))


@dataclass(frozen=True)
class GaussianMoments:
    """Mean vector and covariance of a conditional Gaussian state at time ``t``."""

    mean: np.ndarray
    cov: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ShapeError(f"mean of length {mean.size} does not match covariance {cov.shape}")
        if not is_symmetric(cov):
            raise ValidityError("covariance is not symmetric")
        cov = symmetrize(cov)
        if not is_psd(cov):
            raise ValidityError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "cov", _frozen(cov))
        object.__setattr__(self, "t", float(self.t))

    @property
    def dim(self):
        return self.mean.size


@dataclass(frozen=True)
class SystemMatrices:
    """Drift ``A``, measurement ``C``, process noise ``Q``, cross term ``N``, efficiencies ``eta``.

    ``A`` and ``Q`` are ``d x d`` with ``d = 2n``; ``C`` and ``N`` are ``m x d``;
    ``eta`` is stored as an ``m x m`` diagonal matrix but may be given as a
    scalar or a length-``m`` vector.
    """

    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    N: np.ndarray | None = None
    eta: np.ndarray | float = 1.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        d = A.shape[0]
        if A.shape != (d, d):
            raise ShapeError(f"A must be square, got {A.shape}")
        if Q.shape != (d, d):
            raise ShapeError(f"Q must be {d}x{d}, got {Q.shape}")
        if C.shape[1] != d:
            raise ShapeError(f"C must have {d} columns, got {C.shape}")
        m = C.shape[0]
        N = np.zeros((m, d)) if self.N is None else np.atleast_2d(np.asarray(self.N, dtype=float))
        if N.shape != (m, d):
            raise ShapeError(f"N must be {m}x{d}, got {N.shape}")
        eta = np.asarray(self.eta, dtype=float)
        if eta.ndim == 0:
            eta = np.full(m, float(eta))
        if eta.ndim == 1:
            if eta.size != m:
                raise ShapeError(f"eta needs {m} entries, got {eta.size}")
            eta = np.diag(eta)
        if eta.shape != (m, m):
            raise ShapeError(f"eta must be {m}x{m}, got {eta.shape}")
        if np.any(eta - np.diag(np.diag(eta))):
            raise ValidityError("eta must be diagonal")
        if np.any(np.diag(eta) < 0) or np.any(np.diag(eta) > 1):
            raise ValidityError("efficiencies must lie in [0, 1]")
        if not is_symmetric(Q):
            raise ValidityError("Q is not symmetric")
        Q = symmetrize(Q)
        if not is_psd(Q, 1e-12):
            raise ValidityError("Q is not positive semidefinite")
        for name, val in (("A", A), ("C", C), ("Q", Q), ("N", N), ("eta", eta)):
            if not np.all(np.isfinite(val)):
                raise ValidityError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, _frozen(val))

    @property
    def dim(self):
        return self.A.shape[0]

    @property
    def n_outputs(self):
        return self.C.shape[0]


@dataclass(frozen=True)
class CollapseSet:
    """Quadratic Hamiltonian matrix, collapse vectors (as columns) and efficiencies."""

    H: np.ndarray
    c: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        c = np.asarray(self.c, dtype=complex)
        if c.ndim == 1:
            c = c[:, None]
        eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        d = H.shape[0]
        if H.shape != (d, d) or d % 2:
            raise ShapeError(f"H must be square of even size, got {H.shape}")
        if c.shape[0] != d:
            raise ShapeError(f"collapse vectors must have length {d}, got {c.shape[0]}")
        if eta.size == 1 and c.shape[1] > 1:
            eta = np.full(c.shape[1], eta[0])
        if eta.size != c.shape[1]:
            raise ShapeError(f"{c.shape[1]} channels but {eta.size} efficiencies")
        if not is_symmetric(H):
            raise ValidityError("H is not symmetric")
        if np.any(eta < 0) or np.any(eta > 1):
            raise ValidityError("efficiencies must lie in [0, 1]")
        object.__setattr__(self, "H", _frozen(symmetrize(H)))
        object.__setattr__(self, "c", _frozen(c, complex))
        object.__setattr__(self, "eta", _frozen(eta))


def matrices_from_collapse(cs):
    """Map a quadratic Hamiltonian and linear collapse operators to moment matrices.

    With ``c`` the ``2n x m`` matrix of collapse vectors::

        A = J (H + Im(c c^H))      C = 2 Re(c)^T
        Q = J Re(c c^H) J^T        N^T = J Im(c)

    ``N`` is returned as ``m x 2n`` so that the filter gain reads
    ``S C^T - N^T``.
    """
    J = build_symplectic(cs.H.shape[0] // 2).J
    ccH = cs.c @ cs.c.conj().T
    A = J @ (cs.H + ccH.imag)
    C = 2.0 * cs.c.real.T
    Q = J @ ccH.real @ J.T
    N = (J @ cs.c.imag).T
    return SystemMatrices(A=A, C=C, Q=symmetrize(Q), N=N, eta=cs.eta)


def uncertainty_margin(S, J):
    """Smallest eigenvalue of the Hermitian matrix ``S + (i/2) J``."""
    S = np.asarray(S, dtype=float)
    J = J.J if isinstance(J, SymplecticForm) else np.asarray(J, dtype=float)
    if S.shape != J.shape:
        raise ShapeError(f"covariance {S.shape} does not match symplectic form {J.shape}")
    if not is_symmetric(S):
        raise ValidityError("covariance is not symmetric")
    M = symmetrize(S) + 0.5j * J
    return float(np.linalg.eigvalsh(M)[0])


def check_uncertainty(S, J, tol=0.0):
    """Robertson-Schroedinger test ``S + (i/2) J >= 0`` up to ``-tol``."""
    return uncertainty_margin(S, J) >= -tol
