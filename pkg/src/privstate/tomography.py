"""State reconstruction from count records.

Two estimators: (i) diluted fixed-point maximum likelihood with physical
constraints, and (ii) a Gaussian-posterior filter in generalized Bloch
coordinates updated record by record, sampled under the positivity
constraint with a coordinate-wise slice sampler.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats as sps

from .expsim import MeasurementSetting, povm_from_setting
from .qlinalg import (
    PSD_TOL,
    QOperator,
    as_density,
    bloch_to_matrix,
    from_bloch,
    pauli_basis,
    to_bloch,
)
from .states import FULL_LABELS

N_PARAMS = 255  # generalized Bloch dimension for four qubits


@dataclass
class PosteriorSummary:
    """Gaussian posterior over Bloch coordinates plus the constrained mean."""

    mean: np.ndarray                 # (255,)
    covariance: np.ndarray           # (255, 255), symmetric PSD
    n_records: int
    labels: tuple = FULL_LABELS
    constrained_mean: object = None  # DensityMatrix once an ensemble was drawn

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        if self.mean.shape != (N_PARAMS,) or cov.shape != (N_PARAMS, N_PARAMS):
            raise ValueError("posterior must live in 255 Bloch dimensions")
        asym = float(np.max(np.abs(cov - cov.T)))
        if asym > 1e-10:
            raise ValueError(f"covariance asymmetry {asym:.3e}")
        self.covariance = 0.5 * (cov + cov.T)

    def mean_state(self):
        """Unconstrained Gaussian mean as a (possibly unphysical) operator."""
        return from_bloch(self.mean, self.labels)


@dataclass
class StateEnsemble:
    """A batch of physical density matrices with provenance."""

    matrices: np.ndarray  # (n, d, d) complex
    labels: tuple
    provenance: str       # "KF-sampled" or "ML-bootstrap"
    seed: int

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=complex)
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise ValueError("matrices must be a (n, d, d) stack")
        tr = np.einsum("nii->n", m)
        if np.max(np.abs(tr - 1.0)) > 1e-9:
            raise ValueError("ensemble member trace deviates from 1")
        herm = np.max(np.abs(m - np.conj(np.swapaxes(m, 1, 2))))
        if herm > 1e-9:
            raise ValueError("ensemble member is not Hermitian")
        w = np.linalg.eigvalsh(m)
        if w.min() < -PSD_TOL:
            raise ValueError(f"ensemble member has eigenvalue {w.min():.3e}")
        self.matrices = m

    def __len__(self):
        return self.matrices.shape[0]

    def member(self, i):
        return as_density(QOperator(self.labels, self.matrices[i]), tol=2 * PSD_TOL)

    def members(self):
        for i in range(len(self)):
            yield self.member(i)

    def mean_state(self):
        return as_density(QOperator(self.labels, self.matrices.mean(axis=0)))


# --- measurement model -------------------------------------------------------

@lru_cache(maxsize=256)
def _ideal_model(bases):
    """(povm stack, Bloch coefficient matrix) for one unperturbed setting."""
    povm = povm_from_setting(MeasurementSetting(bases))
    basis = pauli_basis(4)
    coeffs = np.einsum("kij,aji->ka", povm, basis).real
    return povm, coeffs


def _setting_model(bases, angle_offsets=None):
    if angle_offsets is None:
        return _ideal_model(bases)
    povm = povm_from_setting(MeasurementSetting(bases, angle_offsets))
    basis = pauli_basis(4)
    coeffs = np.einsum("kij,aji->ka", povm, basis).real
    return povm, coeffs


def _aggregate(records):
    agg = {}
    for rec in records:
        key = rec.setting.bases
        if key not in agg:
            agg[key] = np.zeros(16, dtype=np.int64)
        agg[key] += rec.counts
    return agg


def _check_informational_completeness(setting_keys):
    rows = [_ideal_model(bases)[1] for bases in setting_keys]
    c = np.concatenate(rows, axis=0)
    rank = np.linalg.matrix_rank(c, tol=1e-8)
    if rank < N_PARAMS:
        raise ValueError(
            f"records span only {rank} of {N_PARAMS} Bloch directions; "
            "data is not informationally complete"
        )


# --- maximum likelihood ------------------------------------------------------

def _log_likelihood(counts, probs):
    p = np.clip(probs, 1e-300, None)
    return float(np.dot(counts, np.log(p)))


def ml_reconstruct(records, tol=1e-10, max_iter=10_000, angle_offsets=None, init=None,
                   counts_override=None):
    """Constrained maximum-likelihood estimate from count records.

    Diluted fixed-point iteration: the full R*rho*R step is taken whenever it
    does not decrease the log-likelihood, otherwise the update operator is
    shrunk toward the identity (damping 0.1, then halved).  Stops when the
    per-iteration likelihood gain falls below `tol` or after `max_iter` steps.

    angle_offsets: optional dict bases -> (4, 2) waveplate offsets defining
    the projector model (used by the bootstrap).  counts_override: optional
    dict bases -> counts replacing the aggregated counts (same use).
    """
    agg = _aggregate(records) if counts_override is None else dict(counts_override)
    if not agg:
        raise ValueError("no records")
    keys = sorted(agg.keys())
    _check_informational_completeness(keys)
    povms = []
    counts = []
    for bases in keys:
        off = None if angle_offsets is None else angle_offsets.get(bases)
        povm, _ = _setting_model(bases, off)
        povms.append(povm)
        counts.append(agg[bases])
    p_stack = np.concatenate(povms, axis=0)            # (M, 16, 16)
    n = np.concatenate(counts).astype(float)           # (M,)
    n_total = n.sum()
    if n_total <= 0:
        raise ValueError("all counts are zero")

    d = p_stack.shape[1]
    rho = np.eye(d, dtype=complex) / d if init is None else np.array(init, dtype=complex)
    probs = np.einsum("ij,kji->k", rho, p_stack).real
    ll = _log_likelihood(n, probs)
    ll_trace = [ll]

    def r_operator(probs):
        w = n / np.clip(probs, 1e-12, None)
        return np.einsum("k,kij->ij", w, p_stack) / n_total

    converged = False
    for _ in range(max_iter):
        r = r_operator(probs)
        cand = r @ rho @ r
        cand = 0.5 * (cand + cand.conj().T)
        cand /= np.trace(cand).real
        cand_probs = np.einsum("ij,kji->k", cand, p_stack).real
        cand_ll = _log_likelihood(n, cand_probs)
        if cand_ll < ll:
            alpha = 0.1
            eye = np.eye(d)
            while alpha > 1e-4:
                a = (1.0 - alpha) * eye + alpha * r
                cand = a @ rho @ a.conj().T
                cand = 0.5 * (cand + cand.conj().T)
                cand /= np.trace(cand).real
                cand_probs = np.einsum("ij,kji->k", cand, p_stack).real
                cand_ll = _log_likelihood(n, cand_probs)
                if cand_ll >= ll:
                    break
                alpha *= 0.5
            if cand_ll < ll:
                converged = True
                break
        gain = cand_ll - ll
        rho, probs, ll = cand, cand_probs, cand_ll
        ll_trace.append(ll)
        if gain < tol:
            converged = True
            break

    r = r_operator(probs)
    fix = r @ rho @ r
    residual = float(np.max(np.abs(fix / np.trace(fix).real - rho)))
    w = np.linalg.eigvalsh(rho)
    if w[0] < -PSD_TOL:
        # the iteration preserves positivity; clip defensive rounding only
        v, u = np.linalg.eigh(rho)
        rho = (u * np.clip(v, 0, None)) @ u.conj().T
        rho /= np.trace(rho).real
    dm = as_density(QOperator(FULL_LABELS, rho))
    dm.ml_residual = residual
    dm.ml_converged = converged
    dm.ml_loglik = ll
    dm.ml_loglik_trace = ll_trace
    return dm


def ml_bootstrap(records, n_boot=2000, angle_sigma=np.radians(0.25), seed=0,
                 tol=1e-8, max_iter=4000):
    """Bootstrap ensemble: re-draw counts ~ Poisson(observed) and projector
    angles ~ Normal(0, angle_sigma) per setting, then re-fit warm-started
    from the unperturbed estimate.

    Replica 0 is the unperturbed fit itself, so n_boot=1 with zero angle
    noise returns exactly the plain estimate.  Replica seeds derive from
    (seed, replica index), so results do not depend on how replicas are
    distributed over workers.  The replica tolerance is looser than the
    headline fit because optimization error well below the bootstrap
    scatter is invisible in the ensemble statistics.
    """
    agg = _aggregate(records)
    base = ml_reconstruct(records)
    mats = np.empty((n_boot, 16, 16), dtype=complex)
    mats[0] = base.matrix
    for r in range(1, n_boot):
        rng = np.random.default_rng([int(seed), r])
        counts = {bases: rng.poisson(c) for bases, c in agg.items()}
        offsets = (
            {bases: rng.normal(0.0, angle_sigma, size=(4, 2)) for bases in agg}
            if angle_sigma > 0
            else None
        )
        est = ml_reconstruct(
            records, angle_offsets=offsets, init=base.matrix,
            counts_override=counts, tol=tol, max_iter=max_iter,
        )
        mats[r] = est.matrix
    return StateEnsemble(mats, FULL_LABELS, "ML-bootstrap", int(seed))


# --- Gaussian posterior filter ------------------------------------------------

def kf_posterior(records, prior_sigma=1.0):
    """Sequential Gaussian update of (mean, covariance) in Bloch coordinates.

    Counts are pooled per analyzer setting; each pooled bin enters as a
    linear measurement n_k ~ N * (1/16 + c_k . v) with moment-matched
    Poisson variance max(n_k, 1).  Pooling before moment matching matters:
    weighting individual records by their own ~1-count bins is strongly
    biased toward the maximally mixed state, which would break consistency
    with the maximum-likelihood estimate.  The prior is the maximally mixed
    state with covariance prior_sigma^2 * I.  The accumulation runs in
    information form, which equals the sequential Gaussian update exactly
    for a static state and makes the result independent of record order.
    """
    records = list(records)
    if records:
        _check_informational_completeness(sorted({r.setting.bases for r in records}))
    agg = _aggregate(records)
    information = np.eye(N_PARAMS) / prior_sigma**2
    score = np.zeros(N_PARAMS)
    for bases, counts in agg.items():
        n = counts.astype(float)
        total = n.sum()
        if total <= 0:
            continue
        var = np.maximum(n, 1.0)
        _, c = _ideal_model(bases)
        information += np.einsum("ka,k,kb->ab", c, total * total / var, c)
        score += c.T @ (total * (n - total / 16.0) / var)
    covariance = np.linalg.inv(information)
    covariance = 0.5 * (covariance + covariance.T)
    mean = covariance @ score
    return PosteriorSummary(mean=mean, covariance=covariance, n_records=len(records))


# --- constrained sampling -----------------------------------------------------

try:
    from scipy.linalg.lapack import zpotrf as _zpotrf
except ImportError:  # pragma: no cover
    _zpotrf = None

_SHIFT16 = PSD_TOL * np.eye(16)


def _feasible(matrix):
    """Physicality test: min eigenvalue >= -PSD_TOL, via Cholesky of the
    shifted matrix (cheapest reliable check for a 16x16 Hermitian)."""
    shift = _SHIFT16 if matrix.shape[0] == 16 else PSD_TOL * np.eye(matrix.shape[0])
    if _zpotrf is not None:
        _, info = _zpotrf(matrix + shift, lower=1, overwrite_a=1, clean=0)
        return info == 0
    try:
        np.linalg.cholesky(matrix + shift)
        return True
    except np.linalg.LinAlgError:
        return False


def _feasible_start(mean, chol):
    """A whitened coordinate vector whose state is physical."""
    base = bloch_to_matrix(mean, 4)
    if _feasible(base):
        return np.zeros(N_PARAMS)
    lo, hi = 0.0, 1.0  # blend factor toward the maximally mixed state
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _feasible(bloch_to_matrix((1.0 - mid) * mean, 4)):
            hi = mid
        else:
            lo = mid
    t = min(1.0, hi * 1.01)
    target = (1.0 - t) * mean
    from scipy.linalg import solve_triangular

    return solve_triangular(chol, target - mean, lower=True)


def _acf_first_below(series, threshold=0.1, max_lag=20):
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom <= 0:
        return 1
    for lag in range(1, min(max_lag, len(x) - 1) + 1):
        acf = float(np.dot(x[:-lag], x[lag:])) / denom
        if abs(acf) < threshold:
            return lag
    return max_lag


def slice_sample(posterior, n=10_000, seed=0, burn_in=1000, thin=None,
                 max_feasible_steps=10**6, pilot=200):
    """Draw physical states from the Gaussian posterior restricted to the
    PSD set, by coordinate-wise slice sampling in whitened coordinates.

    Feasibility of a point is min-eigenvalue >= -1e-10 of the reconstructed
    matrix.  Burn-in counts full coordinate sweeps; the thinning interval is
    chosen from the first Bloch coordinate's autocorrelation (< 0.1) on a
    pilot stretch unless given explicitly.  max_feasible_steps bounds the
    shrinkage search for a feasible point within any single coordinate
    update.  Also stores the constrained mean on the posterior.
    """
    rng = np.random.default_rng(seed)
    mean = posterior.mean
    cov = posterior.covariance
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        chol = np.linalg.cholesky(cov + 1e-15 * np.eye(N_PARAMS))
    basis = pauli_basis(4)
    directions = np.einsum("ai,ajk->ijk", chol, basis)  # (255, 16, 16)
    base = bloch_to_matrix(mean, 4)

    u = _feasible_start(mean, chol)
    state = base + np.einsum("i,ijk->jk", u, directions)
    if not _feasible(state):
        raise RuntimeError("could not find a feasible starting point")

    def sweep(u, state):
        for i in range(N_PARAMS):
            ui = u[i]
            # Gaussian slice in the whitened coordinate is an exact interval;
            # the PSD constraint is handled by shrinkage toward the current
            # (feasible) point.
            log_y = -0.5 * ui * ui - rng.exponential(1.0)
            half = np.sqrt(-2.0 * log_y)
            lo, hi = -half, half
            m_i = directions[i]
            for _attempt in range(max_feasible_steps):
                prop = rng.uniform(lo, hi)
                cand = state + (prop - ui) * m_i
                if _feasible(cand):
                    u[i] = prop
                    state = cand
                    break
                if prop < ui:
                    lo = prop
                else:
                    hi = prop
            else:
                raise RuntimeError("feasible set not found within step budget")
        # resynchronize to kill incremental rounding drift
        state = base + np.einsum("i,ijk->jk", u, directions)
        return u, state

    for _ in range(burn_in):
        u, state = sweep(u, state)

    if thin is None:
        trace = np.empty(pilot)
        for t in range(pilot):
            u, state = sweep(u, state)
            trace[t] = mean[0] + chol[0] @ u
        thin = _acf_first_below(trace)

    mats = np.empty((n, 16, 16), dtype=complex)
    for s in range(n):
        for _ in range(thin):
            u, state = sweep(u, state)
        m = 0.5 * (state + state.conj().T)
        mats[s] = m / np.trace(m).real
    ensemble = StateEnsemble(mats, posterior.labels, "KF-sampled", int(seed))
    ensemble.thin = thin
    posterior.constrained_mean = ensemble.mean_state()
    return ensemble


# --- diagnostics and summaries -------------------------------------------------

def mahalanobis(v1, v2, cov):
    """sqrt((v1-v2)^T cov^-1 (v1-v2)); the covariance is regularized by
    1e-12 * I if singular."""
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if v1.shape != v2.shape or cov.shape != (v1.size, v1.size):
        raise ValueError("dimension mismatch")
    d = v1 - v2
    try:
        sol = np.linalg.solve(cov, d)
    except np.linalg.LinAlgError:
        sol = np.linalg.solve(cov + 1e-12 * np.eye(v1.size), d)
    return float(np.sqrt(max(d @ sol, 0.0)))


def consistency_threshold(dim=N_PARAMS, quantile=0.95):
    """sqrt of the chi-square quantile: the consistency bound for Mahalanobis
    distances between estimates (about 17.1 for 255 dimensions at 95%)."""
    return float(np.sqrt(sps.chi2.ppf(quantile, dim)))


def systematic_diagnostic(posterior):
    """Mahalanobis distance between the unconstrained Gaussian mean and the
    constrained (sampled) mean; large values flag systematic errors."""
    if posterior.constrained_mean is None:
        raise ValueError("sample the posterior first (constrained mean missing)")
    return mahalanobis(
        posterior.mean, to_bloch(posterior.constrained_mean), posterior.covariance
    )


def functional_stats(ensemble, f):
    """Mean and (n-1)-normalized standard deviation of f over the ensemble."""
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    vals = np.array([f(member) for member in ensemble.members()], dtype=float)
    std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return float(vals.mean()), std


# --- file formats ---------------------------------------------------------------

def write_posterior(posterior, fh):
    fh.write(f"n_records {posterior.n_records}\n")
    fh.write("labels " + " ".join(posterior.labels) + "\n")
    fh.write("mean " + " ".join(repr(float(x)) for x in posterior.mean) + "\n")
    fh.write("covariance_lower_triangle\n")
    for i in range(N_PARAMS):
        fh.write(" ".join(repr(float(x)) for x in posterior.covariance[i, : i + 1]) + "\n")
    if posterior.constrained_mean is not None:
        fh.write("constrained_mean\n")
        from .qlinalg import write_operator

        write_operator(posterior.constrained_mean, fh)


def read_posterior(fh):
    n_records = int(fh.readline().split()[1])
    labels = tuple(fh.readline().split()[1:])
    mean = np.array([float(x) for x in fh.readline().split()[1:]])
    assert fh.readline().strip() == "covariance_lower_triangle"
    cov = np.zeros((N_PARAMS, N_PARAMS))
    for i in range(N_PARAMS):
        row = [float(x) for x in fh.readline().split()]
        cov[i, : i + 1] = row
        cov[: i + 1, i] = row
    summary = PosteriorSummary(mean, cov, n_records, labels)
    marker = fh.readline().strip()
    if marker == "constrained_mean":
        from .qlinalg import read_operator

        summary.constrained_mean = as_density(read_operator(fh))
    return summary


def write_ensemble(ensemble, fh):
    fh.write(f"provenance {ensemble.provenance}\n")
    fh.write(f"seed {ensemble.seed}\n")
    fh.write(f"n {len(ensemble)}\n")
    fh.write("labels " + " ".join(ensemble.labels) + "\n")
    for m in ensemble.matrices:
        for row in m:
            fh.write(
                " ".join(f"{repr(float(z.real))} {repr(float(z.imag))}" for z in row) + "\n"
            )


def read_ensemble(fh):
    provenance = fh.readline().split(maxsplit=1)[1].strip()
    seed = int(fh.readline().split()[1])
    n = int(fh.readline().split()[1])
    labels = tuple(fh.readline().split()[1:])
    d = 2 ** len(labels)
    mats = np.empty((n, d, d), dtype=complex)
    for i in range(n):
        for r in range(d):
            vals = np.array([float(x) for x in fh.readline().split()])
            mats[i, r] = vals[0::2] + 1j * vals[1::2]
    return StateEnsemble(mats, labels, provenance, seed)


def save_posterior(posterior, path):
    with open(path, "w") as fh:
        write_posterior(posterior, fh)


def load_posterior(path):
    with open(path) as fh:
        return read_posterior(fh)


def save_ensemble(ensemble, path):
    with open(path, "w") as fh:
        write_ensemble(ensemble, fh)


def load_ensemble(path):
    with open(path) as fh:
        return read_ensemble(fh)
