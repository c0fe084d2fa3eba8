import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from privstate import qlinalg as ql
from privstate import states
from privstate.states import (
    FULL_LABELS,
    KEY_LABELS,
    SHIELD_LABELS,
    NoiseModel,
    apply_noise,
    bell,
    condition_on_shield,
    ideal_lab_state,
    ideal_private_state,
    lab_state_by_mixing,
    prepare_by_mixing,
    resolve_state,
)

import oracles as orc


# --- Bell states ------------------------------------------------------------

@pytest.mark.parametrize("kind", ["phi+", "phi-", "psi+", "psi-"])
def test_bell_reductions_maximally_mixed(kind):
    b = bell(kind, ("A", "B"))
    for drop in ("A", "B"):
        red = ql.partial_trace(b, [drop])
        assert np.allclose(red.matrix, np.eye(2) / 2, atol=1e-12)


def test_bell_orthogonality():
    assert abs(orc.bell_vec("phi-") @ orc.bell_vec("phi+").conj()) < 1e-14


def test_bell_pauli_relation():
    # flipping Bob's qubit turns phi+ into psi+
    flip = np.kron(np.eye(2), ql.PAULI["x"])
    lhs = flip @ orc.bell_vec("phi+")
    assert np.allclose(lhs, orc.bell_vec("psi+"), atol=1e-14)


def test_bell_unknown_kind():
    with pytest.raises(ValueError):
        bell("phi*", ("A", "B"))


# --- the two canonical four-qubit states ---------------------------------------

def test_private_state_matches_hand_assembly():
    assert np.allclose(ideal_private_state().matrix, orc.private_state_matrix(), atol=1e-14)


def test_lab_state_matches_hand_assembly():
    assert np.allclose(ideal_lab_state().matrix, orc.lab_state_matrix(), atol=1e-14)


def test_private_state_is_physical_rank_four():
    g = ideal_private_state()
    assert abs(np.trace(g.matrix) - 1.0) < 1e-12
    w = np.linalg.eigvalsh(g.matrix)
    assert w[0] > -1e-12
    assert int(np.sum(w > 1e-10)) == 4


def test_lab_state_spectrum_quarter():
    w = np.linalg.eigvalsh(ideal_lab_state().matrix)
    assert np.allclose(np.sort(w)[-4:], 0.25, atol=1e-12)


def test_mixture_assembly_order_independent():
    # reconstructing the same mixture with branches swapped gives the same state
    g1 = ideal_lab_state().matrix
    rho_m = orc.proj(orc.bell_vec("psi-"))
    rho_p = (np.eye(4) - rho_m) / 3.0
    m = 0.75 * np.kron(orc.proj(orc.bell_vec("psi+")), rho_p) + 0.25 * np.kron(
        orc.proj(orc.bell_vec("phi-")), rho_m
    )
    t = m.reshape((2,) * 8).transpose(0, 2, 1, 3, 4, 6, 5, 7).reshape(16, 16)
    assert np.array_equal(g1, t) or np.allclose(g1, t, atol=1e-15)


def test_lab_and_private_state_related_by_shield_controlled_flip():
    """No plain Pauli on B maps the lab state to the private state; the
    equivalence needs a unitary controlled on the shield's singlet subspace."""
    gamma = ideal_private_state()
    lab = ideal_lab_state()
    best_pauli = max(
        ql.fidelity(
            gamma,
            ql.QOperator(
                FULL_LABELS,
                (u := orc.kron_all(np.eye(2), np.eye(2), ql.PAULI[p], np.eye(2)))
                @ lab.matrix
                @ u.conj().T,
            ),
        )
        for p in "ixyz"
    )
    assert best_pauli < 1.0 - 1e-6

    # controlled flip: sigma_x on B outside the shield singlet, identity inside
    p_singlet = orc.proj(orc.bell_vec("psi-"))  # on (A', B')
    p_rest = np.eye(4) - p_singlet
    # build on (A, B, A', B') order then reorder to FULL_LABELS
    u = np.kron(np.kron(np.eye(2), np.eye(2)), p_singlet) + np.kron(
        np.kron(np.eye(2), ql.PAULI["x"]), p_rest
    )
    t = u.reshape((2,) * 8).transpose(0, 2, 1, 3, 4, 6, 5, 7).reshape(16, 16)
    assert np.allclose(t @ t.conj().T, np.eye(16), atol=1e-12)
    mapped = ql.QOperator(FULL_LABELS, t @ lab.matrix @ t.conj().T)
    assert abs(ql.fidelity(gamma, mapped) - 1.0) < 1e-9


# --- preparation by random Pauli settings ----------------------------------------

def test_mixing_recipe_reproduces_lab_state():
    assert np.max(np.abs(lab_state_by_mixing().matrix - ideal_lab_state().matrix)) < 1e-12


def test_prepare_identity_branch():
    base = ideal_lab_state()
    out = prepare_by_mixing(base, [(1.0, {})])
    assert np.allclose(out.matrix, base.matrix, atol=1e-14)


def test_prepare_dephasing_two_branches():
    plus = ql.QOperator(("A",), orc.proj((orc.KET0 + orc.KET1) / np.sqrt(2)))
    out = prepare_by_mixing(plus, [(0.5, {}), (0.5, {"A": ql.PAULI["z"]})])
    assert np.allclose(out.matrix, np.eye(2) / 2, atol=1e-14)


def test_prepare_rejects_bad_distribution():
    base = ideal_lab_state()
    with pytest.raises(ValueError):
        prepare_by_mixing(base, [(0.7, {}), (0.7, {})])


# --- noise model --------------------------------------------------------------------

def test_apply_noise_identity_model():
    lab = ideal_lab_state()
    out = apply_noise(lab, NoiseModel())
    assert np.allclose(out.matrix, lab.matrix, atol=1e-14)


def test_apply_noise_full_isotropic():
    out = apply_noise(ideal_lab_state(), NoiseModel(p_iso=1.0))
    assert np.allclose(out.matrix, np.eye(16) / 16, atol=1e-14)


def test_iso_noise_bisection_hits_fidelity_target():
    p = states.calibrate_iso_noise(0.9724)
    lab = ideal_lab_state()
    f = ql.fidelity(lab, apply_noise(lab, NoiseModel(p_iso=p)))
    assert abs(f - 0.9724) < 5e-4
    # closed form for the commuting isotropic channel: F = sqrt(1 - 3p/4)
    assert abs(p - (4.0 / 3.0) * (1.0 - 0.9724**2)) < 1e-4


def test_fidelity_monotone_in_p_iso(rng):
    lab = ideal_lab_state()
    fs = [
        ql.fidelity(lab, apply_noise(lab, NoiseModel(p_iso=p)))
        for p in (0.0, 0.1, 0.3, 0.7, 1.0)
    ]
    assert all(a >= b - 1e-12 for a, b in zip(fs, fs[1:]))


def test_noise_channel_is_cptp():
    model = NoiseModel(
        p_iso=0.1,
        dephasing={"A": 0.2, "B'": 0.05},
        misalignment={"B": 0.3},
    )
    labels = FULL_LABELS
    d = 16
    # Choi matrix: apply channel to half of the maximally entangled state
    choi = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            e = np.zeros((d, d), dtype=complex)
            e[i, j] = 1.0
            out = states.apply_channel_matrix(e, labels, model)
            choi[i * d:(i + 1) * d, j * d:(j + 1) * d] = out
    w = np.linalg.eigvalsh(choi)
    assert w[0] > -1e-10
    # trace preservation: partial trace of Choi over the output is identity
    tr_out = np.einsum("ikjk->ij", choi.reshape(d, d, d, d))
    assert np.allclose(tr_out, np.eye(d), atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_apply_noise_preserves_trace_and_hermiticity(seed):
    rng = np.random.default_rng(seed)
    rho = ql.as_density(ql.QOperator(FULL_LABELS, orc.random_density(rng, 4)))
    model = NoiseModel(
        p_iso=rng.uniform(0, 1),
        dephasing={"A": rng.uniform(0, 1)},
        misalignment={"B": rng.uniform(-0.5, 0.5)},
    )
    out = apply_noise(rho, model)
    assert abs(np.trace(out.matrix) - 1.0) < 1e-10
    assert out.op.is_hermitian(tol=1e-10)


def test_noise_model_validation():
    with pytest.raises(ValueError):
        apply_noise(ideal_lab_state(), NoiseModel(p_iso=1.5))


# --- shield conditioning ---------------------------------------------------------------

def brute_force_condition(rho16, basis_kets, outcome):
    """Oracle: explicit projector sandwich and loop-based partial trace."""
    ka = basis_kets[outcome[0]]
    kb = basis_kets[outcome[1]]
    # labels (A, A', B, B'): A' is subsystem 1, B' is subsystem 3
    p = orc.kron_all(np.eye(2), orc.proj(ka), np.eye(2), orc.proj(kb))
    sub = p @ rho16 @ p.conj().T
    prob = np.trace(sub).real
    cond = orc.partial_trace_loops(sub / prob, [2, 2, 2, 2], keep=[0, 2])
    return prob, cond


def test_condition_identical_outcomes_give_psi_plus():
    lab = ideal_lab_state()
    kets = [orc.KET0, orc.KET1]
    total = 0.0
    for oc in [(0, 0), (1, 1)]:
        p, cond = condition_on_shield(lab, "z", oc)
        p_ref, cond_ref = brute_force_condition(lab.matrix, kets, oc)
        assert abs(p - p_ref) < 1e-12
        assert np.allclose(cond.matrix, cond_ref, atol=1e-12)
        assert abs(ql.fidelity(cond, bell("psi+", KEY_LABELS)) - 1.0) < 1e-9
        total += p
    assert abs(total - 0.5) < 1e-12


def test_condition_opposite_outcomes_give_separable_mixture():
    lab = ideal_lab_state()
    expect = 0.5 * orc.proj(orc.bell_vec("phi-")) + 0.5 * orc.proj(orc.bell_vec("psi+"))
    for oc in [(0, 1), (1, 0)]:
        p, cond = condition_on_shield(lab, "z", oc)
        assert abs(p - 0.25) < 1e-12
        assert np.allclose(cond.matrix, expect, atol=1e-12)


def test_condition_product_state_invariant(rng):
    ab = orc.random_density(rng, 2)
    shield = orc.random_density(rng, 2)
    # assemble on (A, B, A', B') then reorder
    m = np.kron(ab, shield).reshape((2,) * 8).transpose(0, 2, 1, 3, 4, 6, 5, 7).reshape(16, 16)
    rho = ql.as_density(ql.QOperator(FULL_LABELS, m))
    for basis in "xyz":
        for oc in [(0, 0), (0, 1), (1, 0), (1, 1)]:
            p, cond = condition_on_shield(rho, basis, oc)
            assert np.allclose(cond.matrix, ab, atol=1e-10)


def test_condition_probabilities_sum_to_one(rng):
    rho = ql.as_density(ql.QOperator(FULL_LABELS, orc.random_density(rng, 4)))
    for basis in "xyz":
        total = sum(
            condition_on_shield(rho, basis, oc)[0]
            for oc in [(0, 0), (0, 1), (1, 0), (1, 1)]
        )
        assert abs(total - 1.0) < 1e-10


def test_condition_sum_rule_recovers_reduction(rng):
    rho = ql.as_density(ql.QOperator(FULL_LABELS, orc.random_density(rng, 4)))
    acc = np.zeros((4, 4), dtype=complex)
    for oc in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        p, cond = condition_on_shield(rho, "y", oc)
        acc += p * cond.matrix
    red = ql.partial_trace(rho, SHIELD_LABELS)
    assert np.allclose(acc, ql.reorder(red, KEY_LABELS).matrix, atol=1e-10)


def test_condition_zero_probability_outcome_rejected():
    shield00 = np.zeros((4, 4), dtype=complex)
    shield00[0, 0] = 1.0
    m = (
        np.kron(orc.proj(orc.bell_vec("phi+")), shield00)
        .reshape((2,) * 8)
        .transpose(0, 2, 1, 3, 4, 6, 5, 7)
        .reshape(16, 16)
    )
    rho = ql.as_density(ql.QOperator(FULL_LABELS, m))
    with pytest.raises(ValueError):
        condition_on_shield(rho, "z", (1, 1))


# --- registry -----------------------------------------------------------------------------

def test_registry_names():
    assert np.allclose(resolve_state("gamma").matrix, orc.private_state_matrix(), atol=1e-13)
    assert np.allclose(resolve_state("gamma-lab").matrix, orc.lab_state_matrix(), atol=1e-13)
    noisy = resolve_state("gamma-lab-noisy(0.08)")
    want = 0.92 * orc.lab_state_matrix() + 0.08 * np.eye(16) / 16
    assert np.allclose(noisy.matrix, want, atol=1e-12)
    assert resolve_state("bell:psi-").labels == KEY_LABELS
    with pytest.raises(ValueError):
        resolve_state("no-such-state")
