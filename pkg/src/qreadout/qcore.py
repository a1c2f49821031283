"""Dense complex linear algebra on small labeled Hilbert spaces.

Everything in this package lives on tensor products of a few small
subsystems (a three-level qubit ion, a two-level readout ion, and copies
thereof), so operators and states are plain dense complex matrices tagged
with a :class:`HilbertSpace`.  The largest space anywhere is 36-dimensional.

Rates, times and amplitudes are dimensionless throughout: the readout
ion's Purcell-enhanced decay rate sets the unit (gamma = 1), and times are
in units of 1/gamma.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Tolerances for density-matrix validity checks.
HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-8


class SpaceMismatchError(ValueError):
    """Operands live on different Hilbert spaces."""


@dataclass(frozen=True)
class HilbertSpace:
    """Ordered list of labeled subsystems, e.g. (('qubit', 3), ('readout', 2))."""

    subsystems: tuple[tuple[str, int], ...]

    def __post_init__(self):
        labels = [lab for lab, _ in self.subsystems]
        if len(set(labels)) != len(labels):
            raise ValueError(f"subsystem labels must be unique, got {labels}")
        for lab, dim in self.subsystems:
            if dim < 1:
                raise ValueError(f"subsystem {lab!r} has non-positive dimension {dim}")

    @property
    def total_dim(self) -> int:
        return int(np.prod([d for _, d in self.subsystems]))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self.subsystems)

    def dim_of(self, label: str) -> int:
        for lab, d in self.subsystems:
            if lab == label:
                return d
        raise KeyError(label)

    def basis_index(self, levels: dict[str, int]) -> int:
        """Flat index of the product basis state with the given subsystem levels."""
        idx = 0
        for lab, d in self.subsystems:
            lev = levels[lab]
            if not 0 <= lev < d:
                raise ValueError(f"level {lev} out of range for subsystem {lab!r} (dim {d})")
            idx = idx * d + lev
        return idx

    def concat(self, other: "HilbertSpace") -> "HilbertSpace":
        return HilbertSpace(self.subsystems + other.subsystems)


def _as_matrix(entries, dim: int) -> np.ndarray:
    m = np.asarray(entries, dtype=complex)
    if m.shape != (dim, dim):
        raise ValueError(f"entries shape {m.shape} does not match space dimension {dim}")
    return m


@dataclass(frozen=True)
class Operator:
    """Dense complex matrix on a labeled Hilbert space."""

    space: HilbertSpace
    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", _as_matrix(self.entries, self.space.total_dim))

    @property
    def dim(self) -> int:
        return self.space.total_dim

    def dagger(self) -> "Operator":
        return Operator(self.space, self.entries.conj().T)

    def __matmul__(self, other: "Operator") -> "Operator":
        _require_same_space(self, other)
        return Operator(self.space, self.entries @ other.entries)

    def __add__(self, other: "Operator") -> "Operator":
        _require_same_space(self, other)
        return Operator(self.space, self.entries + other.entries)

    def __sub__(self, other: "Operator") -> "Operator":
        _require_same_space(self, other)
        return Operator(self.space, self.entries - other.entries)

    def __mul__(self, scalar: complex) -> "Operator":
        return Operator(self.space, self.entries * scalar)

    __rmul__ = __mul__

    def is_hermitian(self, tol: float = HERMITICITY_TOL) -> bool:
        return bool(np.max(np.abs(self.entries - self.entries.conj().T)) <= tol)

    def is_unitary(self, tol: float = 1e-10) -> bool:
        d = self.dim
        return bool(np.max(np.abs(self.entries @ self.entries.conj().T - np.eye(d))) <= tol)


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, unit-trace, positive-semidefinite state of the joint system."""

    space: HilbertSpace
    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", _as_matrix(self.entries, self.space.total_dim))

    @property
    def dim(self) -> int:
        return self.space.total_dim

    def validate(self,
                 herm_tol: float = HERMITICITY_TOL,
                 trace_tol: float = TRACE_TOL,
                 psd_tol: float = POSITIVITY_TOL) -> None:
        """Raise ValueError if the state violates any density-matrix invariant."""
        m = self.entries
        herm = np.max(np.abs(m - m.conj().T))
        if herm > herm_tol:
            raise ValueError(f"state not Hermitian: max |rho - rho^dag| = {herm:.3e}")
        tr = np.trace(m)
        if abs(tr - 1.0) > trace_tol:
            raise ValueError(f"state trace {tr} deviates from 1 by {abs(tr - 1.0):.3e}")
        lo = eigen_floor(self)
        if lo < -psd_tol:
            raise ValueError(f"state not positive semidefinite: min eigenvalue {lo:.3e}")

    def purity(self) -> float:
        return float(np.real(np.trace(self.entries @ self.entries)))


def _require_same_space(a, b) -> None:
    if a.space != b.space:
        raise SpaceMismatchError(
            f"operands on different spaces: {a.space.labels} vs {b.space.labels}")


# ---------------------------------------------------------------------------
# Constructors

def identity(space: HilbertSpace) -> Operator:
    return Operator(space, np.eye(space.total_dim))

def zero(space: HilbertSpace) -> Operator:
    return Operator(space, np.zeros((space.total_dim, space.total_dim)))


def basis_ket(space: HilbertSpace, levels: dict[str, int]) -> np.ndarray:
    """Column vector for a product basis state."""
    v = np.zeros(space.total_dim, dtype=complex)
    v[space.basis_index(levels)] = 1.0
    return v


def ket_state(space: HilbertSpace, amplitudes: dict[int, complex] | np.ndarray) -> DensityMatrix:
    """Pure density matrix from a (not necessarily normalized) state vector."""
    if isinstance(amplitudes, dict):
        v = np.zeros(space.total_dim, dtype=complex)
        for i, a in amplitudes.items():
            v[i] = a
    else:
        v = np.asarray(amplitudes, dtype=complex)
    v = v / np.linalg.norm(v)
    return DensityMatrix(space, np.outer(v, v.conj()))


def subsystem_operator(space: HilbertSpace, label: str, matrix) -> Operator:
    """Embed a single-subsystem matrix into the full space, identity elsewhere."""
    m = np.asarray(matrix, dtype=complex)
    out = np.ones((1, 1), dtype=complex)
    for lab, d in space.subsystems:
        block = m if lab == label else np.eye(d)
        if lab == label and block.shape != (d, d):
            raise ValueError(f"matrix shape {m.shape} does not match subsystem {lab!r} (dim {d})")
        out = np.kron(out, block)
    return Operator(space, out)


def transition(dim: int, to_level: int, from_level: int) -> np.ndarray:
    """|to><from| on a bare dim-dimensional subsystem."""
    m = np.zeros((dim, dim), dtype=complex)
    m[to_level, from_level] = 1.0
    return m


def projector_matrix(dim: int, level: int) -> np.ndarray:
    return transition(dim, level, level)


# ---------------------------------------------------------------------------
# Spec operations

def tensor(a: Operator, b: Operator) -> Operator:
    """Kronecker product on the concatenated space; dim = dim(a)*dim(b)."""
    return Operator(a.space.concat(b.space), np.kron(a.entries, b.entries))


def expectation(rho: DensityMatrix, op: Operator) -> complex:
    """Tr(op @ rho).  Raises SpaceMismatchError on different spaces."""
    _require_same_space(rho, op)
    return complex(np.trace(op.entries @ rho.entries))


def eigen_floor(rho: DensityMatrix) -> float:
    """Smallest eigenvalue of a Hermitian state (positivity audit)."""
    return float(np.linalg.eigvalsh(rho.entries)[0])


def dagger(op: Operator) -> Operator:
    return op.dagger()


def partial_trace(rho: DensityMatrix, keep: tuple[str, ...]) -> DensityMatrix:
    """Trace out every subsystem not in `keep`, preserving subsystem order."""
    dims = [d for _, d in rho.space.subsystems]
    labels = rho.space.labels
    n = len(dims)
    t = rho.entries.reshape(dims + dims)
    kept = [i for i, lab in enumerate(labels) if lab in keep]
    traced = [i for i in range(n) if labels[i] not in keep]
    # contract highest traced index first so lower positions stay valid;
    # after cnt contractions the tensor has m = n - cnt bra axes then m ket axes
    for cnt, i in enumerate(sorted(traced, reverse=True)):
        m = n - cnt
        t = np.trace(t, axis1=i, axis2=i + m)
    d_keep = int(np.prod([dims[i] for i in kept])) if kept else 1
    sub = tuple((labels[i], dims[i]) for i in kept)
    return DensityMatrix(HilbertSpace(sub), t.reshape(d_keep, d_keep))


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """(1/2) * trace norm of a - b."""
    _require_same_space(a, b)
    diff = a.entries - b.entries
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff))))
