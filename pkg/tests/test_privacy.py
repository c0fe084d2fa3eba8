import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from privstate import qlinalg as ql
from privstate import privacy
from privstate.privacy import (
    distillation_analysis,
    holevo_chi_B,
    holevo_chi_E,
    key_measurement_basis,
    key_rate_cqq,
    log_negativity,
)
from privstate.states import (
    FULL_LABELS,
    KEY_LABELS,
    NoiseModel,
    apply_noise,
    basis_kets,
    bell,
    ideal_lab_state,
    ideal_private_state,
)

import oracles as orc

H2_QUARTER = 2.0 - 0.75 * np.log2(3.0)  # binary entropy of 1/4
LOG_NEG_IDEAL = np.log2(3.0) - 1.0


def reduced_lab_state():
    red = ql.partial_trace(ideal_lab_state(), ("A'", "B'"))
    return ql.as_density(red)


# --- log-negativity ------------------------------------------------------------

def test_log_negativity_private_state():
    assert abs(log_negativity(ideal_private_state()) - LOG_NEG_IDEAL) < 1e-9


def test_log_negativity_lab_state_equal():
    assert abs(log_negativity(ideal_lab_state()) - LOG_NEG_IDEAL) < 1e-9


def test_log_negativity_separable_product(rng):
    # product across the AA' : BB' cut, so the partial transpose stays PSD
    a = orc.random_density(rng, 2)  # on (A, A')
    b = orc.random_density(rng, 2)  # on (B, B')
    rho = ql.as_density(ql.QOperator(FULL_LABELS, np.kron(a, b)))
    assert abs(log_negativity(rho)) < 1e-9


def test_log_negativity_bell_with_mixed_shield():
    # Bell pair on the key, maximally mixed shield: PT spectrum of the Bell
    # state is {1/2, 1/2, 1/2, -1/2}, so the trace norm is 2 and L = 1.
    m = (
        np.kron(orc.proj(orc.bell_vec("phi+")), np.eye(4) / 4)
        .reshape((2,) * 8)
        .transpose(0, 2, 1, 3, 4, 6, 5, 7)
        .reshape(16, 16)
    )
    rho = ql.as_density(ql.QOperator(FULL_LABELS, m))
    assert abs(log_negativity(rho) - 1.0) < 1e-9


def test_log_negativity_invalid_partition():
    with pytest.raises(ValueError):
        log_negativity(ideal_lab_state(), part=("Q",))


# --- key measurement basis -------------------------------------------------------

@pytest.mark.parametrize("basis", ["x", "y", "z"])
def test_key_basis_projectors_complete_orthogonal(basis):
    p0, p1 = key_measurement_basis(basis)
    assert np.allclose(p0 + p1, np.eye(2), atol=1e-12)
    assert np.max(np.abs(p0 @ p1)) < 1e-12
    kp, km = basis_kets(basis)
    assert abs(kp.conj() @ km) < 1e-12


def test_key_basis_z_is_computational():
    p0, p1 = key_measurement_basis("z")
    assert np.allclose(p0, np.diag([1.0, 0.0]), atol=1e-14)
    assert np.allclose(p1, np.diag([0.0, 1.0]), atol=1e-14)


def test_key_basis_y_eigenvectors():
    p0, _ = key_measurement_basis("y")
    assert np.allclose(ql.PAULI["y"] @ p0, p0, atol=1e-12)


# --- Holevo quantities --------------------------------------------------------------

def test_chi_B_lab_state_is_one_bit():
    chi, probs, conds = holevo_chi_B(ideal_lab_state(), "y")
    assert abs(chi - 1.0) < 1e-9
    assert np.allclose(probs, [0.5, 0.5], atol=1e-12)
    for c in conds:
        w = np.linalg.eigvalsh(c.matrix)
        assert w[-1] > 1.0 - 1e-9  # conditionals are pure


def test_chi_B_uncorrelated_state():
    m = np.kron(np.eye(2) / 2, np.eye(2) / 2)
    rho = ql.as_density(ql.QOperator(KEY_LABELS, m))
    chi, _, _ = holevo_chi_B(rho, "y")
    assert abs(chi) < 1e-9


def test_chi_B_bell_z_basis():
    chi, _, _ = holevo_chi_B(bell("phi+", KEY_LABELS), "z")
    assert abs(chi - 1.0) < 1e-9


def test_chi_E_pure_product_state():
    m = np.kron(orc.proj(orc.bell_vec("phi+")), orc.proj(np.kron(orc.KET0, orc.KET0)))
    m = m.reshape((2,) * 8).transpose(0, 2, 1, 3, 4, 6, 5, 7).reshape(16, 16)
    rho = ql.as_density(ql.QOperator(FULL_LABELS, m))
    chi, _ = holevo_chi_E(rho, "y")
    assert abs(chi) < 1e-9


def test_chi_E_lab_state_zero():
    chi, probs = holevo_chi_E(ideal_lab_state(), "y")
    assert abs(chi) < 1e-9
    assert np.allclose(probs, [0.5, 0.5], atol=1e-12)


def test_chi_E_reduced_state_binary_entropy():
    # spectral oracle: conditionals are pure, so chi_E = S(rho_AB) = H2(1/4)
    chi, _ = holevo_chi_E(reduced_lab_state(), "y")
    assert abs(chi - H2_QUARTER) < 1e-9
    assert abs(H2_QUARTER - orc.entropy_bits(reduced_lab_state().matrix)) < 1e-12


# --- key-rate report ------------------------------------------------------------------

def test_key_rate_lab_state():
    rep = key_rate_cqq(ideal_lab_state(), "y")
    assert abs(rep.x_cqq - 1.0) < 1e-9
    assert abs(rep.log_negativity - LOG_NEG_IDEAL) < 1e-9
    assert abs(rep.separation - (1.0 - LOG_NEG_IDEAL)) < 1e-9
    assert abs(rep.x_cqq - (rep.chi_B - rep.chi_E)) < 1e-15


def test_key_rate_reduced_state():
    rep = key_rate_cqq(reduced_lab_state(), "y")
    assert abs(rep.x_cqq - (1.0 - H2_QUARTER)) < 1e-9
    assert abs(rep.x_cqq - 0.188721875540867) < 1e-9


def test_key_rate_experimental_scale_noisy():
    # calibrated noise keeps the truth values near the reported ones
    noisy = apply_noise(
        ideal_lab_state(),
        NoiseModel(p_iso=0.05, misalignment={"A": 0.2678562743632628}),
    )
    rep = key_rate_cqq(noisy, "y")
    assert abs(rep.x_cqq - 0.69) < 0.05
    assert abs(rep.log_negativity - 0.58) < 0.05


def test_classical_y_diagonal_mixture_has_zero_rate():
    kp, km = basis_kets("y")
    m = 0.5 * orc.proj(np.kron(kp, kp)) + 0.5 * orc.proj(np.kron(km, km))
    rho = ql.as_density(ql.QOperator(KEY_LABELS, m))
    rep = key_rate_cqq(rho, "y")
    assert abs(rep.x_cqq) < 1e-9


# --- invariances ------------------------------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_x_cqq_invariant_under_shield_unitaries(seed):
    rng = np.random.default_rng(seed)
    base = apply_noise(ideal_lab_state(), NoiseModel(p_iso=rng.uniform(0, 0.3)))
    u4 = orc.random_unitary(rng, 4)
    # act jointly on (A', B'): build on (A, B, A', B') order, then reorder
    u = np.kron(np.eye(4), u4)
    t = u.reshape((2,) * 8).transpose(0, 2, 1, 3, 4, 6, 5, 7).reshape(16, 16)
    rotated = ql.as_density(
        ql.QOperator(FULL_LABELS, t @ base.matrix @ t.conj().T)
    )
    r0 = key_rate_cqq(base, "y")
    r1 = key_rate_cqq(rotated, "y")
    assert abs(r0.x_cqq - r1.x_cqq) < 1e-9


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_log_negativity_invariant_under_local_unitaries(seed):
    rng = np.random.default_rng(seed)
    base = apply_noise(ideal_lab_state(), NoiseModel(p_iso=rng.uniform(0, 0.3)))
    u_aa = orc.random_unitary(rng, 4)  # on (A, A')
    v_bb = orc.random_unitary(rng, 4)  # on (B, B')
    u = np.kron(u_aa, v_bb)  # order (A, A', B, B') directly
    rotated = ql.as_density(ql.QOperator(FULL_LABELS, u @ base.matrix @ u.conj().T))
    assert abs(log_negativity(base) - log_negativity(rotated)) < 1e-9


def test_trace_norm_pt_at_least_one(rng):
    for _ in range(20):
        rho = orc.random_density(rng, 4)
        pt = ql.partial_transpose(ql.QOperator(FULL_LABELS, rho), ("B", "B'"))
        assert ql.trace_norm(pt) >= 1.0 - 1e-9


# --- distillation table -----------------------------------------------------------------

def test_distillation_lab_state_z_shield():
    tab = distillation_analysis(ideal_lab_state(), "z", "y")
    assert abs(tab.identical.probability - 0.5) < 1e-9
    assert abs(tab.identical.rate - 1.0) < 1e-9
    assert abs(ql.fidelity(tab.identical.state, bell("psi+", KEY_LABELS)) - 1.0) < 1e-9
    assert abs(tab.opposite.probability - 0.5) < 1e-9
    assert abs(tab.opposite.rate) < 1e-9
    assert abs(tab.average_rate - 0.5) < 1e-9
    # suboptimality: distillation average below the direct rate
    assert tab.average_rate < key_rate_cqq(ideal_lab_state(), "y").x_cqq


@pytest.mark.parametrize("basis", ["x", "y", "z"])
def test_distillation_basis_symmetry_on_lab_state(basis):
    tab = distillation_analysis(ideal_lab_state(), basis, "y")
    assert abs(tab.identical.probability - 0.5) < 1e-9
    assert abs(tab.identical.rate - 1.0) < 1e-9


def test_distillation_product_state_no_key(rng):
    ab = orc.random_density(rng, 2)
    shield = orc.random_density(rng, 2)
    m = np.kron(ab, shield).reshape((2,) * 8).transpose(0, 2, 1, 3, 4, 6, 5, 7).reshape(16, 16)
    rho = ql.as_density(ql.QOperator(FULL_LABELS, m))
    tab = distillation_analysis(rho, "z", "y")
    assert tab.identical.rate <= 1e-9
    assert tab.opposite.rate <= 1e-9
    assert tab.average_rate <= 1e-9


def test_distillation_average_below_direct_on_noisy_variants(rng):
    for p in (0.02, 0.05, 0.1):
        noisy = apply_noise(ideal_lab_state(), NoiseModel(p_iso=p))
        tab = distillation_analysis(noisy, "z", "y")
        direct = key_rate_cqq(noisy, "y").x_cqq
        assert tab.average_rate <= direct + 1e-9
