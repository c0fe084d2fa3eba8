"""Canonical states of the four-qubit key/shield construction plus noise.

The key pair lives on labels A, B; the shield pair on A', B'.  The default
label order everywhere is (A, A', B, B').
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .qlinalg import (
    PAULI,
    QOperator,
    as_density,
    asqop,
    fidelity,
    partial_trace,
    reorder,
    tensor,
)

KEY_LABELS = ("A", "B")
SHIELD_LABELS = ("A'", "B'")
FULL_LABELS = ("A", "A'", "B", "B'")

_KET0 = np.array([1.0, 0.0], dtype=complex)
_KET1 = np.array([0.0, 1.0], dtype=complex)

BELL_KETS = {
    "phi+": (np.kron(_KET0, _KET0) + np.kron(_KET1, _KET1)) / np.sqrt(2),
    "phi-": (np.kron(_KET0, _KET0) - np.kron(_KET1, _KET1)) / np.sqrt(2),
    "psi+": (np.kron(_KET0, _KET1) + np.kron(_KET1, _KET0)) / np.sqrt(2),
    "psi-": (np.kron(_KET0, _KET1) - np.kron(_KET1, _KET0)) / np.sqrt(2),
}


def bell(kind, labels):
    """Maximally entangled two-qubit state |phi+-> or |psi+->."""
    if kind not in BELL_KETS:
        raise ValueError(f"unknown Bell state {kind!r}")
    labels = tuple(labels)
    if len(labels) != 2:
        raise ValueError("bell states need exactly two labels")
    k = BELL_KETS[kind]
    return as_density(QOperator(labels, np.outer(k, k.conj())))


def _shield_pair():
    """(rho_minus, rho_plus) on the shield: singlet and its normalized complement."""
    psi_m = BELL_KETS["psi-"]
    p_minus = np.outer(psi_m, psi_m.conj())
    p_plus = (np.eye(4, dtype=complex) - p_minus) / 3.0
    return p_minus, p_plus


def _key_shield_mixture(key_minus, key_plus):
    """(1/4) key_minus x rho- + (3/4) key_plus x rho+, reordered to FULL_LABELS."""
    rho_m, rho_p = _shield_pair()
    ab_m = QOperator(KEY_LABELS, np.outer(BELL_KETS[key_minus], BELL_KETS[key_minus].conj()))
    ab_p = QOperator(KEY_LABELS, np.outer(BELL_KETS[key_plus], BELL_KETS[key_plus].conj()))
    sh_m = QOperator(SHIELD_LABELS, rho_m)
    sh_p = QOperator(SHIELD_LABELS, rho_p)
    m = 0.25 * tensor(ab_m, sh_m).matrix + 0.75 * tensor(ab_p, sh_p).matrix
    op = reorder(QOperator(KEY_LABELS + SHIELD_LABELS, m), FULL_LABELS)
    return as_density(op)


def ideal_private_state():
    """Four-qubit private state: 1/4 |phi-><phi-| x rho- + 3/4 |phi+><phi+| x rho+."""
    return _key_shield_mixture("phi-", "phi+")


def ideal_lab_state():
    """The state the source actually targets: 1/4 |phi-> x rho- + 3/4 |psi+> x rho+."""
    return _key_shield_mixture("phi-", "psi+")


def prepare_by_mixing(base, branches):
    """Mix unitary-rotated copies of `base`: sum_k p_k U_k rho U_k^dag.

    branches: list of (probability, {label: 2x2 unitary}) pairs.  Labels not
    mentioned get the identity.
    """
    base = asqop(base)
    probs = np.array([p for p, _ in branches], dtype=float)
    if abs(probs.sum() - 1.0) > 1e-12 or np.any(probs < 0):
        raise ValueError(f"branch probabilities must be a distribution, got {probs}")
    out = np.zeros_like(base.matrix)
    for p, ops in branches:
        u = np.array([[1.0]], dtype=complex)
        for l in base.labels:
            u = np.kron(u, np.asarray(ops.get(l, PAULI["i"]), dtype=complex))
        out = out + p * (u @ base.matrix @ u.conj().T)
    return as_density(QOperator(base.labels, out))


def lab_state_by_mixing():
    """The lab state built the way the source builds it: four equiprobable
    Pauli settings on B and B' applied to |phi+>_AB x |phi+>_A'B'."""
    src = reorder(
        tensor(bell("phi+", KEY_LABELS), bell("phi+", SHIELD_LABELS)), FULL_LABELS
    )
    branches = [
        (0.25, {"B": PAULI["z"], "B'": PAULI["y"]}),
        (0.25, {"B": PAULI["x"]}),
        (0.25, {"B": PAULI["x"], "B'": PAULI["x"]}),
        (0.25, {"B": PAULI["x"], "B'": PAULI["z"]}),
    ]
    return prepare_by_mixing(src, branches)


@dataclass
class NoiseModel:
    """Preparation imperfections: coherent waveplate misalignment, per-qubit
    dephasing in the preparation basis, and an isotropic admixture.

    p_iso is the primary calibration knob; the angles model a fixed
    polarization-frame rotation (about the Bloch y axis) per qubit.
    """

    p_iso: float = 0.0
    dephasing: dict = field(default_factory=dict)   # label -> rate in [0, 1]
    misalignment: dict = field(default_factory=dict)  # label -> radians

    def validate(self):
        if not 0.0 <= self.p_iso <= 1.0:
            raise ValueError(f"p_iso must be in [0, 1], got {self.p_iso}")
        for l, q in self.dephasing.items():
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"dephasing rate for {l} must be in [0, 1], got {q}")
        for l, t in self.misalignment.items():
            if not np.isfinite(t):
                raise ValueError(f"misalignment for {l} must be finite, got {t}")


def _frame_rotation(theta):
    # Polarization-frame rotation: exp(-i theta sigma_y / 2).
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _embed_single(op2, label, labels):
    u = np.array([[1.0]], dtype=complex)
    for l in labels:
        u = np.kron(u, op2 if l == label else PAULI["i"])
    return u


def apply_channel_matrix(m, labels, model):
    """Linear action of the noise channel on an arbitrary matrix (same labels).

    Kept separate from apply_noise so complete positivity can be checked on a
    Choi matrix.
    """
    out = np.asarray(m, dtype=complex)
    for l, theta in model.misalignment.items():
        if l not in labels:
            raise ValueError(f"misalignment label {l!r} not in {labels}")
        u = _embed_single(_frame_rotation(theta), l, labels)
        out = u @ out @ u.conj().T
    for l, q in model.dephasing.items():
        if l not in labels:
            raise ValueError(f"dephasing label {l!r} not in {labels}")
        z = _embed_single(PAULI["z"], l, labels)
        out = (1.0 - q) * out + q * (z @ out @ z.conj().T)
    d = 2 ** len(labels)
    out = (1.0 - model.p_iso) * out + model.p_iso * np.trace(out) * np.eye(d) / d
    return out


def apply_noise(rho, model):
    """CPTP image of a state under the noise model."""
    model.validate()
    op = asqop(as_density(rho))
    return as_density(QOperator(op.labels, apply_channel_matrix(op.matrix, op.labels, model)))


def calibrate_iso_noise(target_fidelity, tol=1e-6, reference=None):
    """Bisect p_iso so that F(reference, noisy reference) hits the target."""
    ref = reference if reference is not None else ideal_lab_state()
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f = fidelity(ref, apply_noise(ref, NoiseModel(p_iso=mid)))
        if f > target_fidelity:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def calibrate_misalignment(target_fidelity, p_iso, label="A", tol=1e-7, reference=None):
    """Bisect a frame-rotation angle on one qubit so the combined channel
    (rotation then isotropic mixing) hits the target fidelity."""
    ref = reference if reference is not None else ideal_lab_state()
    lo, hi = 0.0, np.pi / 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        model = NoiseModel(p_iso=p_iso, misalignment={label: mid})
        f = fidelity(ref, apply_noise(ref, model))
        if f > target_fidelity:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def basis_kets(basis):
    """(+1, -1) eigenvectors of the chosen Pauli, as 2-vectors."""
    if basis == "z":
        return _KET0.copy(), _KET1.copy()
    if basis == "x":
        return (_KET0 + _KET1) / np.sqrt(2), (_KET0 - _KET1) / np.sqrt(2)
    if basis == "y":
        return (_KET0 + 1j * _KET1) / np.sqrt(2), (_KET0 - 1j * _KET1) / np.sqrt(2)
    raise ValueError(f"unknown basis {basis!r}")


def condition_on_shield(rho, basis, outcome):
    """Project the shield (A', B') in a shared basis and return
    (probability, normalized conditional state on A, B).

    outcome: pair of bits, 0 = +1 eigenvalue port.
    """
    op = asqop(as_density(rho))
    if set(SHIELD_LABELS) - set(op.labels):
        raise ValueError("state must carry shield labels A' and B'")
    kp, km = basis_kets(basis)
    kets = (kp, km)
    a_bit, b_bit = outcome
    proj_a = np.outer(kets[a_bit], kets[a_bit].conj())
    proj_b = np.outer(kets[b_bit], kets[b_bit].conj())
    proj = _embed_single(proj_a, "A'", op.labels) @ _embed_single(proj_b, "B'", op.labels)
    projected = proj @ op.matrix @ proj.conj().T
    p = float(np.trace(projected).real)
    if p < 1e-12:
        raise ValueError(f"outcome {outcome} in basis {basis} has probability {p:.3e}")
    cond = partial_trace(QOperator(op.labels, projected / p), SHIELD_LABELS)
    cond = reorder(cond, KEY_LABELS)
    return p, as_density(cond)


# --- named-state registry --------------------------------------------------

_NOISY_RE = re.compile(r"^gamma-lab-noisy\(([^)]*)\)$")


def resolve_state(name):
    """Look up a state by registry name.

    Known names: "gamma", "gamma-lab", "gamma-lab-noisy(p)", "bell:phi+",
    "bell:phi-", "bell:psi+", "bell:psi-", "maximally-mixed".
    """
    if name == "gamma":
        return ideal_private_state()
    if name == "gamma-lab":
        return ideal_lab_state()
    if name == "maximally-mixed":
        return as_density(QOperator(FULL_LABELS, np.eye(16, dtype=complex) / 16.0))
    m = _NOISY_RE.match(name)
    if m:
        p = float(m.group(1))
        return apply_noise(ideal_lab_state(), NoiseModel(p_iso=p))
    if name.startswith("bell:"):
        return bell(name.split(":", 1)[1], KEY_LABELS)
    raise ValueError(f"unknown state name {name!r}")
