"""Small dense complex linear algebra used throughout the simulator.

Matrices are plain ``numpy`` complex arrays; dimensions never exceed 8.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-9
POSITIVITY_TOL = -1e-8
NORM_TOL = 1e-12
MAX_DIM = 8


class InvariantError(ValueError):
    """A matrix or state violates one of its defining invariants."""


def as_square(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
    return a


def hermitize(m) -> np.ndarray:
    """Return the Hermitian part ``(m + m^dagger) / 2``."""
    a = as_square(m)
    return 0.5 * (a + a.conj().T)


def hermiticity_error(m) -> float:
    a = as_square(m)
    return float(np.max(np.abs(a - a.conj().T)))


def matrix_exp(m) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a Pade core.

    Raises ``OverflowError`` when the result is not finite.
    """
    a = as_square(m)
    if a.shape[0] > MAX_DIM * MAX_DIM:
        raise ValueError(f"dimension {a.shape[0]} exceeds supported size")
    if not np.all(np.isfinite(a)):
        raise OverflowError("matrix_exp input contains non-finite entries")
    with np.errstate(over="ignore", invalid="ignore"):
        out = scipy.linalg.expm(a)
    if not np.all(np.isfinite(out)):
        raise OverflowError("matrix_exp overflowed; input norm too large")
    return out


def min_eigenvalue_hermitian(m, tol: float = 1e-10) -> float:
    a = as_square(m)
    err = hermiticity_error(a)
    if err > tol:
        raise InvariantError(f"matrix is not Hermitian (max deviation {err:.3g})")
    return float(np.linalg.eigvalsh(hermitize(a))[0])


def check_density_matrix(rho, *, trace_tol: float = TRACE_TOL) -> np.ndarray:
    """Validate a density matrix and return it as a complex array.

    Raises :class:`InvariantError` naming the first violated invariant.
    """
    r = as_square(rho)
    err = hermiticity_error(r)
    if err > HERMITIAN_TOL:
        raise InvariantError(f"hermiticity violated (max deviation {err:.3g})")
    tr = np.trace(r)
    if abs(tr - 1.0) > trace_tol:
        raise InvariantError(f"unit trace violated (trace = {tr.real:.12g})")
    lam = float(np.linalg.eigvalsh(hermitize(r))[0])
    if lam < POSITIVITY_TOL:
        raise InvariantError(f"positivity violated (min eigenvalue {lam:.3g})")
    return r


def check_state_vector(psi) -> np.ndarray:
    v = np.asarray(psi, dtype=np.complex128).ravel()
    if v.size < 1:
        raise ValueError("empty state vector")
    norm2 = float(np.vdot(v, v).real)
    if abs(norm2 - 1.0) > NORM_TOL:
        raise InvariantError(f"state vector not normalised (|psi|^2 = {norm2:.15g})")
    return v


def pure_state(psi) -> np.ndarray:
    v = check_state_vector(psi)
    return np.outer(v, v.conj())


def basis_state(dim: int, index: int) -> np.ndarray:
    v = np.zeros(dim, dtype=np.complex128)
    v[index] = 1.0
    return v


def fidelity(target, rho) -> float:
    """Overlap ``<psi|rho|psi>`` of a pure target with a density matrix.

    Values within 1e-9 outside [0, 1] are clamped; anything further out
    indicates an invalid state and raises.
    """
    psi = check_state_vector(target)
    r = as_square(rho)
    if r.shape[0] != psi.size:
        raise ValueError(f"dimension mismatch: state {psi.size}, density matrix {r.shape[0]}")
    value = complex(np.vdot(psi, r @ psi))
    f = value.real
    if f < -1e-9 or f > 1.0 + 1e-9:
        raise InvariantError(f"fidelity {f:.12g} outside [0, 1]")
    return min(max(f, 0.0), 1.0)
