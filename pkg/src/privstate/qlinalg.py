"""Dense complex linear algebra on labelled multi-qubit spaces.

Every operator carries an ordered tuple of subsystem labels (e.g.
("A", "A'", "B", "B'")); all reductions, transpositions and re-orderings
are done by label, never by bare index.  Entropies and derived rates are
in bits (log base 2) throughout.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# Shared numerical constants (stated once, reused everywhere).
CLIP_TOL = 1e-12   # eigenvalue / singular-value clipping for 0*log(0) etc.
PSD_TOL = 1e-10    # how negative an eigenvalue may be and still count physical
TRACE_TOL = 1e-10
HERM_TOL = 1e-12

PAULI = {
    "i": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(eq=False)
class QOperator:
    """A dense matrix on an ordered list of qubit subsystems."""

    labels: tuple
    matrix: np.ndarray

    def __post_init__(self):
        self.labels = tuple(self.labels)
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate labels: {self.labels}")
        m = np.asarray(self.matrix, dtype=complex)
        d = 2 ** len(self.labels)
        if m.shape != (d, d):
            raise ValueError(f"matrix shape {m.shape} does not match 2^{len(self.labels)}")
        m = np.ascontiguousarray(m)
        m.flags.writeable = False
        self.matrix = m

    @property
    def n_qubits(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def is_hermitian(self, tol=HERM_TOL):
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T))) <= tol


@dataclass(eq=False)
class DensityMatrix:
    """A validated physical state: unit trace, Hermitian, PSD up to PSD_TOL."""

    op: QOperator
    min_eigenvalue: float
    trace_deviation: float

    @property
    def labels(self):
        return self.op.labels

    @property
    def matrix(self):
        return self.op.matrix

    @property
    def n_qubits(self):
        return self.op.n_qubits


def asqop(x):
    """Unwrap DensityMatrix to its QOperator; pass QOperator through."""
    if isinstance(x, DensityMatrix):
        return x.op
    if isinstance(x, QOperator):
        return x
    raise TypeError(f"expected QOperator or DensityMatrix, got {type(x)}")


def as_density(x, tol=PSD_TOL):
    """Validate an operator as a density matrix or raise ValueError."""
    op = asqop(x)
    tr = complex(np.trace(op.matrix))
    trace_dev = abs(tr - 1.0)
    if trace_dev > TRACE_TOL:
        raise ValueError(f"trace {tr} deviates from 1 by {trace_dev:.3e}")
    if not op.is_hermitian():
        raise ValueError("matrix is not Hermitian")
    w = np.linalg.eigvalsh(op.matrix)
    if w[0] < -tol:
        raise ValueError(f"minimum eigenvalue {w[0]:.3e} below -{tol}")
    return DensityMatrix(op=op, min_eigenvalue=float(w[0]), trace_deviation=float(trace_dev))


def tensor(a, b):
    """Kronecker product; label sets must be disjoint, labels concatenate."""
    a, b = asqop(a), asqop(b)
    common = set(a.labels) & set(b.labels)
    if common:
        raise ValueError(f"labels appear on both factors: {sorted(common)}")
    return QOperator(a.labels + b.labels, np.kron(a.matrix, b.matrix))


def reorder(op, new_labels):
    """Permute subsystems so labels appear in the given order."""
    op = asqop(op)
    new_labels = tuple(new_labels)
    if sorted(new_labels) != sorted(op.labels):
        raise ValueError(f"{new_labels} is not a permutation of {op.labels}")
    if new_labels == op.labels:
        return op
    n = op.n_qubits
    perm = [op.labels.index(l) for l in new_labels]
    t = op.matrix.reshape((2,) * (2 * n))
    t = t.transpose(tuple(perm) + tuple(p + n for p in perm))
    return QOperator(new_labels, t.reshape(op.dim, op.dim))


def partial_trace(rho, drop):
    """Trace out the subsystems named in `drop`."""
    op = asqop(rho)
    drop = set(drop)
    unknown = drop - set(op.labels)
    if unknown:
        raise ValueError(f"unknown labels: {sorted(unknown)}")
    if not drop:
        return op
    keep = [l for l in op.labels if l not in drop]
    if not keep:
        return QOperator((), np.array([[np.trace(op.matrix)]]))
    n = op.n_qubits
    keep_ix = [op.labels.index(l) for l in keep]
    drop_ix = [op.labels.index(l) for l in op.labels if l in drop]
    t = op.matrix.reshape((2,) * (2 * n))
    perm = keep_ix + drop_ix
    t = t.transpose(tuple(perm) + tuple(p + n for p in perm))
    dk, dd = 2 ** len(keep_ix), 2 ** len(drop_ix)
    t = t.reshape(dk, dd, dk, dd)
    return QOperator(tuple(keep), np.einsum("abcb->ac", t))


def partial_transpose(rho, part):
    """Transpose the subsystems named in `part`, leaving the rest alone."""
    op = asqop(rho)
    part = set(part)
    unknown = part - set(op.labels)
    if unknown:
        raise ValueError(f"unknown labels: {sorted(unknown)}")
    n = op.n_qubits
    t = op.matrix.reshape((2,) * (2 * n))
    axes = list(range(2 * n))
    for l in part:
        i = op.labels.index(l)
        axes[i], axes[i + n] = axes[i + n], axes[i]
    return QOperator(op.labels, t.transpose(axes).reshape(op.dim, op.dim))


def eig_hermitian(h):
    """Eigenvalues (ascending) and eigenvectors of a Hermitian operator."""
    op = asqop(h)
    if not op.is_hermitian():
        raise ValueError("eig_hermitian requires a Hermitian matrix")
    w, v = np.linalg.eigh(op.matrix)
    return w, v


def von_neumann_entropy(rho):
    """S(rho) = -sum lambda log2 lambda, in bits."""
    dm = rho if isinstance(rho, DensityMatrix) else as_density(rho)
    w = np.linalg.eigvalsh(dm.matrix)
    w = w[w > CLIP_TOL]
    return float(-np.sum(w * np.log2(w)))


def entropy_of_spectrum(w):
    """Entropy in bits of a raw eigenvalue array (clipping tiny values)."""
    w = np.asarray(w, dtype=float)
    w = w[w > CLIP_TOL]
    return float(-np.sum(w * np.log2(w)))


def trace_norm(m):
    """Sum of singular values; small ones below CLIP_TOL are dropped."""
    op = asqop(m)
    s = np.linalg.svd(op.matrix, compute_uv=False)
    return float(np.sum(s[s > CLIP_TOL]))


def trace_distance(rho, sigma):
    """Half the trace norm of the difference."""
    a, b = asqop(rho), asqop(sigma)
    bb = reorder(b, a.labels)
    return 0.5 * trace_norm(QOperator(a.labels, a.matrix - bb.matrix))


def fidelity(rho, sigma):
    """Uhlmann fidelity Tr sqrt(sqrt(rho) sigma sqrt(rho)), in [0, 1]."""
    a, b = asqop(rho), asqop(sigma)
    if sorted(a.labels) != sorted(b.labels):
        raise ValueError(f"label mismatch: {a.labels} vs {b.labels}")
    b = reorder(b, a.labels)
    wa, va = np.linalg.eigh(a.matrix)
    wa = np.where(wa > CLIP_TOL, wa, 0.0)  # rank-deficient inputs stay rank-deficient
    rank = int(np.count_nonzero(wa))
    sqrt_a = (va * np.sqrt(wa)) @ va.conj().T
    m = sqrt_a @ b.matrix @ sqrt_a
    # the product has rank at most rank(a); anything beyond is rounding junk
    wm = np.linalg.eigvalsh(m)[-rank:] if rank else np.zeros(1)
    return float(np.sum(np.sqrt(np.clip(wm, 0.0, None))))


@lru_cache(maxsize=8)
def pauli_basis(n_qubits):
    """Orthonormal traceless tensor-Pauli basis, shape (4^n - 1, 2^n, 2^n).

    Element order follows itertools.product over 'ixyz' per qubit with the
    all-identity term removed; each matrix is normalized to unit
    Hilbert-Schmidt norm.
    """
    mats = []
    norm = 2.0 ** (n_qubits / 2.0)
    for combo in itertools.product("ixyz", repeat=n_qubits):
        if all(c == "i" for c in combo):
            continue
        m = np.array([[1.0]], dtype=complex)
        for c in combo:
            m = np.kron(m, PAULI[c])
        mats.append(m / norm)
    out = np.array(mats)
    out.flags.writeable = False
    return out


def to_bloch(rho):
    """Generalized Bloch coefficients (4^n - 1 reals) of a Hermitian operator."""
    op = asqop(rho)
    basis = pauli_basis(op.n_qubits)
    return np.einsum("aij,ji->a", basis, op.matrix).real


def from_bloch(v, labels):
    """Hermitian unit-trace operator with the given Bloch coefficients."""
    labels = tuple(labels)
    n = len(labels)
    v = np.asarray(v, dtype=float)
    if v.shape != (4 ** n - 1,):
        raise ValueError(f"expected {4 ** n - 1} coefficients, got {v.shape}")
    basis = pauli_basis(n)
    m = np.eye(2 ** n, dtype=complex) / 2 ** n + np.einsum("a,aij->ij", v, basis)
    return QOperator(labels, m)


def bloch_to_matrix(v, n_qubits):
    """from_bloch without the label wrapper, for hot loops."""
    basis = pauli_basis(n_qubits)
    return np.eye(2 ** n_qubits, dtype=complex) / 2 ** n_qubits + np.einsum(
        "a,aij->ij", np.asarray(v, float), basis
    )


def _simplex_project(w):
    # Euclidean projection of a real vector onto the probability simplex.
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(u) + 1)
    k = idx[u - css / idx > 0][-1]
    theta = css[k - 1] / k
    return np.maximum(w - theta, 0.0)


def project_to_physical(h):
    """Nearest (Frobenius) density matrix to a Hermitian unit-trace operator.

    Eigenvalue clipping with a uniform shift, i.e. simplex projection of the
    spectrum in the operator's own eigenbasis.
    """
    op = asqop(h)
    if not op.is_hermitian():
        raise ValueError("project_to_physical requires a Hermitian matrix")
    w, v = np.linalg.eigh(op.matrix)
    w2 = _simplex_project(w)
    m = (v * w2) @ v.conj().T
    m = 0.5 * (m + m.conj().T)
    return as_density(QOperator(op.labels, m))


# --- structured-text serialization ---------------------------------------
#
# Format: one "labels ..." line, then 2^n rows of 2*2^n decimal numbers
# (re im re im ...).  repr() round-trips 64-bit floats exactly.

def _format_matrix_rows(m):
    rows = []
    for row in m:
        rows.append(" ".join(f"{repr(float(z.real))} {repr(float(z.imag))}" for z in row))
    return rows


def write_operator(op, fh):
    op = asqop(op)
    fh.write("labels " + " ".join(op.labels) + "\n")
    for row in _format_matrix_rows(op.matrix):
        fh.write(row + "\n")


def read_operator(fh):
    header = fh.readline().split()
    if not header or header[0] != "labels":
        raise ValueError("expected a 'labels' header line")
    labels = tuple(header[1:])
    d = 2 ** len(labels)
    m = np.empty((d, d), dtype=complex)
    for i in range(d):
        parts = fh.readline().split()
        if len(parts) != 2 * d:
            raise ValueError(f"row {i}: expected {2 * d} numbers, got {len(parts)}")
        vals = np.array([float(p) for p in parts])
        m[i] = vals[0::2] + 1j * vals[1::2]
    return QOperator(labels, m)


def save_operator(op, path):
    with open(path, "w") as fh:
        write_operator(op, fh)


def load_operator(path):
    with open(path) as fh:
        return read_operator(fh)
