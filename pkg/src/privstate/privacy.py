"""Information-theoretic analysis: log-negativity, Holevo quantities, the
cqq key rate and the shield-measurement distillation table.

Eve is never constructed explicitly.  With a purification of the lab state
in her hands, her Holevo quantity follows from spectral identities: the
unconditional environment shares its spectrum with the lab state, and the
conditional environment (given Alice's outcome) shares its spectrum with
the remaining lab qubits, because the joint conditional state is pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qlinalg import (
    CLIP_TOL,
    QOperator,
    as_density,
    asqop,
    entropy_of_spectrum,
    partial_trace,
    partial_transpose,
    reorder,
    trace_norm,
)
from .states import KEY_LABELS, SHIELD_LABELS, basis_kets, condition_on_shield


def _bob_side(labels):
    side = tuple(l for l in labels if l.startswith("B"))
    if not side:
        raise ValueError(f"no Bob-side labels among {labels}")
    return side


def log_negativity(rho, part=None):
    """log2 of the trace norm of the partial transpose.

    Default partition puts every label starting with "B" on the transposed
    side (AA' : BB' for the four-qubit states, A : B for key-only states).
    """
    op = asqop(as_density(rho))
    if part is None:
        part = _bob_side(op.labels)
    else:
        part = tuple(part)
        if set(part) - set(op.labels):
            raise ValueError(f"partition {part} not within {op.labels}")
    return float(np.log2(trace_norm(partial_transpose(op, part))))


def key_measurement_basis(basis):
    """Pair of rank-1 projectors for the key measurement on one qubit."""
    kp, km = basis_kets(basis)
    return np.outer(kp, kp.conj()), np.outer(km, km.conj())


def _project_key_qubit(op, key_label, proj):
    """<a| rho |a> on the key qubit: unnormalized state of the other labels."""
    n = op.n_qubits
    i = op.labels.index(key_label)
    t = op.matrix.reshape((2,) * (2 * n))
    t = np.tensordot(proj.T, t, axes=([0], [i]))          # contracts row index
    t = np.moveaxis(t, 0, i)
    t = np.trace(t, axis1=i, axis2=i + n)
    rest = tuple(l for l in op.labels if l != key_label)
    d = 2 ** len(rest)
    return QOperator(rest, t.reshape(d, d))


def _conditionals(rho, key_basis, key_label="A"):
    """Per-outcome (probability, unnormalized conditional on remaining labels)."""
    op = asqop(rho)
    out = []
    for proj in key_measurement_basis(key_basis):
        sub = _project_key_qubit(op, key_label, proj)
        p = float(np.trace(sub.matrix).real)
        out.append((p, sub))
    return out


def holevo_chi_B(rho, key_basis="y", key_label="A", bob_label="B"):
    """Holevo quantity of the channel from Alice's key bit to Bob's qubit.

    Returns (chi_B, outcome probabilities, conditional Bob states).
    """
    dm = as_density(rho)
    conds = _conditionals(dm, key_basis, key_label)
    probs, bob_states, entropies = [], [], []
    avg = None
    for p, sub in conds:
        if p < 1e-12:
            continue
        keep_drop = tuple(l for l in sub.labels if l != bob_label)
        bob = partial_trace(sub, keep_drop) if keep_drop else sub
        m = bob.matrix / p
        probs.append(p)
        bob_states.append(QOperator((bob_label,), m))
        entropies.append(entropy_of_spectrum(np.linalg.eigvalsh(m)))
        avg = p * m if avg is None else avg + p * m
    avg_entropy = entropy_of_spectrum(np.linalg.eigvalsh(avg))
    chi = avg_entropy - float(np.dot(probs, entropies))
    return chi, probs, bob_states


def holevo_chi_E(rho, key_basis="y", key_label="A"):
    """Holevo quantity of the channel from Alice's key bit to the environment.

    chi_E = S(rho) - sum_a p_a S(rho_rest^(a)) via purification spectral
    identities; no environment system is ever built.

    Returns (chi_E, outcome probabilities).
    """
    dm = as_density(rho)
    s_total = entropy_of_spectrum(np.linalg.eigvalsh(dm.matrix))
    probs, entropies = [], []
    for p, sub in _conditionals(dm, key_basis, key_label):
        if p < 1e-12:
            continue
        probs.append(p)
        entropies.append(entropy_of_spectrum(np.linalg.eigvalsh(sub.matrix / p)))
    chi = s_total - float(np.dot(probs, entropies))
    return chi, probs


@dataclass
class KeyRateReport:
    chi_B: float
    chi_E: float
    x_cqq: float
    log_negativity: float
    key_basis: str
    p_outcomes: list
    separation: float

    def lines(self):
        return [
            f"key basis        {self.key_basis}",
            f"p(outcomes)      {' '.join(f'{p:.12g}' for p in self.p_outcomes)}",
            f"chi_B            {self.chi_B:.12g}",
            f"chi_E            {self.chi_E:.12g}",
            f"X_cqq            {self.x_cqq:.12g}",
            f"log_negativity   {self.log_negativity:.12g}",
            f"separation       {self.separation:.12g}",
        ]


def key_rate_cqq(rho, key_basis="y"):
    """Assemble chi_B - chi_E and the log-negativity into one report."""
    dm = as_density(rho)
    chi_b, probs, _ = holevo_chi_B(dm, key_basis)
    chi_e, _ = holevo_chi_E(dm, key_basis)
    ln = log_negativity(dm)
    x = chi_b - chi_e
    return KeyRateReport(
        chi_B=chi_b,
        chi_E=chi_e,
        x_cqq=x,
        log_negativity=ln,
        key_basis=key_basis,
        p_outcomes=list(probs),
        separation=x - ln,
    )


@dataclass
class DistillationBranch:
    name: str
    probability: float
    state: object            # DensityMatrix on (A, B)
    rate: float              # conditional X_cqq of the branch state


@dataclass
class DistillationTable:
    identical: DistillationBranch
    opposite: DistillationBranch
    average_rate: float      # probability-weighted, branches below zero discarded
    shield_basis: str
    key_basis: str

    def lines(self):
        rows = []
        for b in (self.identical, self.opposite):
            rows.append(f"{b.name:<10} p={b.probability:.12g} rate={b.rate:.12g}")
        rows.append(f"average    {self.average_rate:.12g}")
        return rows


def distillation_analysis(rho, shield_basis="z", key_basis="y"):
    """Shield-measurement branch table: project A' and B' in a shared basis,
    split outcomes into identical vs opposite, and rate each branch's
    two-qubit conditional state as a key resource."""
    dm = as_density(rho)
    groups = {"identical": [(0, 0), (1, 1)], "opposite": [(0, 1), (1, 0)]}
    branches = {}
    for name, outcomes in groups.items():
        total_p = 0.0
        acc = None
        for oc in outcomes:
            p, cond = condition_on_shield(dm, shield_basis, oc)
            total_p += p
            acc = p * cond.matrix if acc is None else acc + p * cond.matrix
        state = as_density(QOperator(KEY_LABELS, acc / total_p))
        chi_b, _, _ = holevo_chi_B(state, key_basis)
        chi_e, _ = holevo_chi_E(state, key_basis)
        branches[name] = DistillationBranch(
            name=name, probability=total_p, state=state, rate=chi_b - chi_e
        )
    avg = sum(b.probability * max(b.rate, 0.0) for b in branches.values())
    return DistillationTable(
        identical=branches["identical"],
        opposite=branches["opposite"],
        average_rate=avg,
        shield_basis=shield_basis,
        key_basis=key_basis,
    )
