"""Monte-Carlo simulation of the four-analyzer coincidence measurement.

Each 10 s interval gets an independently chosen basis per analyzer
(x, y or z), waveplate angles perturbed per interval, and Poissonian
fourfold-coincidence counts in the 16 outcome bins.  Outcome index bit
order is (A, A', B, B') with A the most significant bit and bit value 0
meaning the +1 eigenvalue port.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .qlinalg import QOperator, asqop
from .states import FULL_LABELS

BASES = ("x", "y", "z")

# (QWP, HWP) orientations that realize each Pauli eigenbasis exactly, with
# the convention that the transmitted port is the +1 eigenvector.
WAVEPLATE_SETTINGS = {
    "z": (0.0, 0.0),
    "x": (np.pi / 4.0, np.pi / 8.0),
    "y": (np.pi / 2.0, np.pi / 8.0),
}


def jones_hwp(theta):
    c, s = np.cos(2.0 * theta), np.sin(2.0 * theta)
    return np.array([[c, s], [s, -c]], dtype=complex)


def jones_qwp(theta):
    c, s = np.cos(theta), np.sin(theta)
    e = np.exp(-1j * np.pi / 4.0)
    return e * np.array(
        [[c * c + 1j * s * s, (1 - 1j) * s * c], [(1 - 1j) * s * c, s * s + 1j * c * c]],
        dtype=complex,
    )


def analyzer_projectors(basis, d_qwp=0.0, d_hwp=0.0):
    """Two rank-1 projectors of one polarization analyzer.

    The light passes QWP then HWP then a polarizing splitter; the waveplate
    orientations are offset by (d_qwp, d_hwp) from the nominal setting.
    """
    q0, h0 = WAVEPLATE_SETTINGS[basis]
    u = jones_hwp(h0 + d_hwp) @ jones_qwp(q0 + d_qwp)
    ports = []
    for ket in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
        v = u.conj().T @ ket
        ports.append(np.outer(v, v.conj()))
    return ports


@dataclass
class MeasurementSetting:
    """Basis choice per analyzer plus waveplate-angle perturbations.

    bases: four letters for (A, A', B, B'); perturbations: 4x2 array of
    (QWP, HWP) offsets in radians, zero by default.
    """

    bases: tuple
    perturbations: np.ndarray = field(default_factory=lambda: np.zeros((4, 2)))

    def __post_init__(self):
        self.bases = tuple(self.bases)
        if len(self.bases) != 4 or any(b not in BASES for b in self.bases):
            raise ValueError(f"bases must be four of x/y/z, got {self.bases}")
        p = np.asarray(self.perturbations, dtype=float)
        if p.shape != (4, 2) or not np.all(np.isfinite(p)):
            raise ValueError("perturbations must be a finite 4x2 array")
        self.perturbations = p


@dataclass
class CountRecord:
    index: int
    setting: MeasurementSetting
    duration: float
    counts: np.ndarray  # 16 nonnegative ints

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (16,) or np.any(c < 0):
            raise ValueError("counts must be 16 nonnegative integers")
        self.counts = c
        if self.index < 0:
            raise ValueError("interval index must be nonnegative")


@dataclass
class EfficiencyMap:
    """Per-analyzer two-port detection efficiencies, each in (0, 1]."""

    ports: np.ndarray  # shape (4, 2)

    def __post_init__(self):
        p = np.asarray(self.ports, dtype=float)
        if p.shape != (4, 2) or np.any(p <= 0.0) or np.any(p > 1.0):
            raise ValueError("efficiencies must be a 4x2 array with values in (0, 1]")
        self.ports = p


def povm_from_setting(setting):
    """Stack of 16 rank-1 projectors on (A, A', B, B'), shape (16, 16, 16)."""
    per_analyzer = [
        analyzer_projectors(b, dq, dh)
        for b, (dq, dh) in zip(setting.bases, setting.perturbations)
    ]
    povm = np.empty((16, 16, 16), dtype=complex)
    for k in range(16):
        bits = [(k >> 3) & 1, (k >> 2) & 1, (k >> 1) & 1, k & 1]
        m = np.array([[1.0]], dtype=complex)
        for analyzer, bit in zip(per_analyzer, bits):
            m = np.kron(m, analyzer[bit])
        povm[k] = m
    return povm


def _born_factored(rho_tensor, setting):
    """All 16 Born probabilities at once, contracting per-analyzer projectors
    against the state tensor instead of building 16x16 projectors."""
    stacks = []
    for b, (dq, dh) in zip(setting.bases, setting.perturbations):
        stacks.append(np.array(analyzer_projectors(b, dq, dh)))
    p = np.einsum(
        "ikmojlnp,aji,blk,cnm,dpo->abcd",
        rho_tensor,
        stacks[0],
        stacks[1],
        stacks[2],
        stacks[3],
        optimize=True,
    ).real
    return p.reshape(16)


def born_probabilities(rho, setting):
    op = asqop(rho)
    if op.labels != FULL_LABELS:
        from .qlinalg import reorder

        op = reorder(op, FULL_LABELS)
    return _born_factored(op.matrix.reshape((2,) * 8), setting)


def schedule_settings(n_intervals, seed):
    """i.i.d. uniform basis choices over the 81 combinations, no perturbations."""
    if n_intervals < 1:
        raise ValueError("need at least one interval")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, 3, size=(n_intervals, 4))
    return [MeasurementSetting(tuple(BASES[i] for i in row)) for row in picks]


def _interval_rng(seed, index):
    # Independent stream per interval so results do not depend on the order
    # in which intervals are simulated.  seed may be an int or a word list.
    words = [int(seed)] if np.isscalar(seed) else [int(w) for w in seed]
    return np.random.default_rng(words + [int(index)])


def simulate_counts(
    rho,
    schedule,
    rate=2.0,
    duration=10.0,
    angle_sigma=0.0,
    seed=0,
    miscalibration=0.0,
    efficiency=None,
):
    """Poissonian fourfold counts for every interval of the schedule.

    angle_sigma: per-interval random waveplate offsets ~ Normal(0, sigma).
    miscalibration: fixed offset added to every waveplate (systematic error).
    efficiency: optional EfficiencyMap applied as Poisson thinning per port.
    """
    if rate < 0:
        raise ValueError("rate must be nonnegative")
    op = asqop(rho)
    if op.labels != FULL_LABELS:
        from .qlinalg import reorder

        op = reorder(op, FULL_LABELS)
    eff_bins = None
    if efficiency is not None:
        eff_bins = np.empty(16)
        for k in range(16):
            bits = [(k >> 3) & 1, (k >> 2) & 1, (k >> 1) & 1, k & 1]
            eff_bins[k] = np.prod([efficiency.ports[a, b] for a, b in enumerate(bits)])
    rho_tensor = op.matrix.reshape((2,) * 8)
    records = []
    for idx, setting in enumerate(schedule):
        rng = _interval_rng(seed, idx)
        pert = rng.normal(0.0, angle_sigma, size=(4, 2)) if angle_sigma > 0 else np.zeros((4, 2))
        pert = pert + miscalibration
        realized = MeasurementSetting(setting.bases, pert)
        p = np.clip(_born_factored(rho_tensor, realized), 0.0, None)
        lam = rate * duration * p
        if eff_bins is not None:
            lam = lam * eff_bins
        counts = rng.poisson(lam)
        records.append(CountRecord(idx, realized, float(duration), counts))
    return records


def equalize_efficiency(records, eff, seed=0):
    """Binomially thin counts so both ports of each analyzer match the
    analyzer's minimum efficiency."""
    thin = eff.ports.min(axis=1, keepdims=True) / eff.ports  # (4, 2) keep probs
    out = []
    for rec in records:
        rng = _interval_rng(seed, rec.index)
        keep = np.empty(16)
        for k in range(16):
            bits = [(k >> 3) & 1, (k >> 2) & 1, (k >> 1) & 1, k & 1]
            keep[k] = np.prod([thin[a, b] for a, b in enumerate(bits)])
        counts = rec.counts.copy()
        mask = keep < 1.0
        counts[mask] = rng.binomial(rec.counts[mask], keep[mask])
        out.append(CountRecord(rec.index, rec.setting, rec.duration, counts))
    return out


def sample_events(record, rng):
    """Expand a record's histogram into a shuffled list of outcome indices."""
    events = np.repeat(np.arange(16), record.counts)
    rng.shuffle(events)
    return events


def event_stream(records, seed=0):
    """Per-interval event tuples (index, bases, outcome list) for sifting runs."""
    stream = []
    for rec in records:
        rng = _interval_rng(seed, rec.index)
        stream.append((rec.index, rec.setting.bases, sample_events(rec, rng)))
    return stream


def aggregate_by_setting(records):
    """Total counts per basis combination: dict bases-tuple -> 16-bin array."""
    agg = {}
    for rec in records:
        key = rec.setting.bases
        if key not in agg:
            agg[key] = np.zeros(16, dtype=np.int64)
        agg[key] += rec.counts
    return agg


# --- file formats ----------------------------------------------------------
#
# Count records: one line per record,
#   <index> <bases as 4 letters> <duration> <16 counts>
# Event stream: one line per interval,
#   <index> <bases> <n_events> <outcome indices...>

def write_records(records, fh):
    for rec in records:
        fh.write(
            f"{rec.index} {''.join(rec.setting.bases)} {repr(rec.duration)} "
            + " ".join(str(int(c)) for c in rec.counts)
            + "\n"
        )


def read_records(fh):
    records = []
    for line in fh:
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 3 + 16:
            raise ValueError(f"malformed record line: {line!r}")
        idx = int(parts[0])
        bases = tuple(parts[1])
        duration = float(parts[2])
        counts = np.array([int(x) for x in parts[3:]], dtype=np.int64)
        records.append(CountRecord(idx, MeasurementSetting(bases), duration, counts))
    return records


def save_records(records, path):
    with open(path, "w") as fh:
        write_records(records, fh)


def load_records(path):
    with open(path) as fh:
        return read_records(fh)


def write_events(stream, fh):
    for idx, bases, events in stream:
        fh.write(
            f"{idx} {''.join(bases)} {len(events)} "
            + " ".join(str(int(e)) for e in events)
            + "\n"
        )


def read_events(fh):
    stream = []
    for line in fh:
        parts = line.split()
        if not parts:
            continue
        idx, bases, n = int(parts[0]), tuple(parts[1]), int(parts[2])
        events = np.array([int(x) for x in parts[3:]], dtype=np.int64)
        if len(events) != n:
            raise ValueError(f"event count mismatch on line {line!r}")
        stream.append((idx, bases, events))
    return stream


def save_events(stream, path):
    with open(path, "w") as fh:
        write_events(stream, fh)


def load_events(path):
    with open(path) as fh:
        return read_events(fh)
