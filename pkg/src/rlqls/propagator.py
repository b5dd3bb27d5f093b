"""Schroedinger propagation of a single pulse and POVM compilation.

One pulse drives a handful of level pairs through a shared motional mode.
The interaction-picture Hamiltonian is a sum of terms ``c * exp(i nu t)``
(plus Hermitian conjugates); propagation uses the matrix exponential of the
exact step average of each term (first-order Magnus), so every step is
unitary to machine precision and fast motional phases are integrated rather
than sampled.

The measurement-conditioned transition matrices A0/A1 are the squared
amplitudes into motional ground (k=0) and excited (k>=1, aggregated)
subspaces from each initial |level, 0> column, with coherences discarded.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .constants import TWO_PI
from .levels import LevelTable, PopulationState
from .pulses import PulseLibrary, PulseSpec, TrapConfig

__all__ = [
    "UnitaryEvolution",
    "TransitionMatrixPair",
    "interaction_hamiltonian",
    "laboratory_hamiltonian",
    "evolve_pulse",
    "propagate_steps",
    "compile_transition_matrices",
    "compile_pulse",
    "compile_library",
    "measurement_probabilities",
    "save_transition_matrices",
    "load_transition_matrices",
    "library_fingerprint",
    "trap_fingerprint",
]


@dataclass(frozen=True)
class UnitaryEvolution:
    """Accumulated pulse unitary on the active (level x motional) subspace.

    ``active_levels`` lists the table indices the pulse couples; levels not
    listed are untouched (identity evolution).
    """

    U: np.ndarray
    active_levels: tuple
    n_states: int
    n_motional: int
    pulse_id: int
    elapsed: float

    def __post_init__(self):
        u = np.asarray(self.U, dtype=complex)
        defect = np.abs(u.conj().T @ u - np.eye(u.shape[0])).max()
        if defect >= 1e-7:
            raise ValueError(f"accumulated evolution is not unitary (defect {defect:.2e})")
        object.__setattr__(self, "U", u)


@dataclass(frozen=True)
class TransitionMatrixPair:
    """Measurement-conditioned population maps for one pulse.

    Column j holds the outcome populations for the pure initial state j;
    columns of A0 + A1 sum to one.
    """

    A0: np.ndarray
    A1: np.ndarray
    pulse_id: int

    def __post_init__(self):
        a0 = np.asarray(self.A0, dtype=float)
        a1 = np.asarray(self.A1, dtype=float)
        if a0.shape != a1.shape or a0.shape[0] != a0.shape[1]:
            raise ValueError("A0/A1 must be square matrices of equal shape")
        if a0.min() < -1e-12 or a1.min() < -1e-12:
            raise ValueError("transition matrices must be nonnegative")
        sums = (a0 + a1).sum(axis=0)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise ValueError(f"column sums deviate from 1 by {np.abs(sums - 1).max():.2e}")
        a0.setflags(write=False)
        a1.setflags(write=False)
        object.__setattr__(self, "A0", a0)
        object.__setattr__(self, "A1", a1)

    @property
    def n_states(self) -> int:
        return self.A0.shape[0]


def _motional_ops(n_mot: int):
    a = np.diag(np.sqrt(np.arange(1, n_mot)), k=1)
    return a, a.conj().T


def _pulse_terms(pulse: PulseSpec, table: LevelTable, trap: TrapConfig,
                 active: tuple):
    """Rotating components of the interaction Hamiltonian on the active basis.

    Returns a list of ``(matrix, nu)`` with H(t) = sum matrix e^{i nu t} + h.c.
    Matrices are in rad/s over |active level> (x) |motional n>.
    """
    pos = {lev: k for k, lev in enumerate(active)}
    n_mot = trap.n_motional
    dim = len(active) * n_mot
    a_op, adag_op = _motional_ops(n_mot)
    ident = np.eye(n_mot)
    w_mot = TWO_PI * trap.motional_frequency
    w_laser = TWO_PI * pulse.laser_frequency
    lam = trap.lamb_dicke

    terms = []
    for (i, f), rate in zip(pulse.transitions, pulse.transition_rates):
        nu0 = TWO_PI * (table.energies[f] - table.energies[i]) - w_laser
        proj = np.zeros((len(active), len(active)))
        proj[pos[f], pos[i]] = 1.0
        for mot, dnu in ((ident, 0.0), (1j * lam * a_op, -w_mot), (1j * lam * adag_op, w_mot)):
            mat = 0.5 * rate * np.kron(proj, mot)
            terms.append((mat.astype(complex).reshape(dim, dim), nu0 + dnu))
    return terms


def interaction_hamiltonian(t: float, pulse: PulseSpec, table: LevelTable,
                            trap: TrapConfig) -> np.ndarray:
    """Instantaneous interaction-picture Hamiltonian (rad/s) on the full basis.

    Basis order is |level j> (x) |motional n> with index j * n_motional + n.
    First-order Lamb-Dicke coupling only; Hermitian by construction.
    """
    if not 0 <= t <= pulse.duration:
        raise ValueError("t must lie within the pulse duration")
    active = tuple(range(table.n_states))
    dim = table.n_states * trap.n_motional
    h = np.zeros((dim, dim), dtype=complex)
    for mat, nu in _pulse_terms(pulse, table, trap, active):
        h += mat * np.exp(1j * nu * t)
    return h + h.conj().T


def laboratory_hamiltonian(t: float, pulse: PulseSpec, table: LevelTable,
                           trap: TrapConfig) -> np.ndarray:
    """Laboratory-frame Hamiltonian (rad/s): H0 + first-order-coupled drive.

    Cross-check counterpart of :func:`interaction_hamiltonian` for toy sizes;
    H0 holds the level energies and the harmonic motional ladder.
    """
    n_mot = trap.n_motional
    dim = table.n_states * n_mot
    a_op, adag_op = _motional_ops(n_mot)
    e_lvl = TWO_PI * table.energies
    h0 = np.kron(np.diag(e_lvl), np.eye(n_mot)) + np.kron(
        np.eye(table.n_states), TWO_PI * trap.motional_frequency * (np.diag(np.arange(n_mot)) + 0.5 * np.eye(n_mot)))
    drive = np.zeros((dim, dim), dtype=complex)
    mot = np.eye(n_mot) + 1j * trap.lamb_dicke * (a_op + adag_op)
    for (i, f), rate in zip(pulse.transitions, pulse.transition_rates):
        proj = np.zeros((table.n_states, table.n_states))
        proj[f, i] = 1.0
        drive += 0.5 * rate * np.exp(-1j * TWO_PI * pulse.laser_frequency * t) * np.kron(proj, mot)
    return h0 + drive + drive.conj().T


def _term_norm_bound(terms) -> float:
    return 2.0 * sum(np.linalg.norm(m, 2) for m, _ in terms)


def propagate_steps(pulse: PulseSpec, table: LevelTable, trap: TrapConfig,
                    step: float = 1e-6, duration: float | None = None,
                    auto_refine: bool = True):
    """Yield ``(t, U)`` after each propagation step (t is the elapsed time).

    Each step applies exp(-i Hbar h) where Hbar is the exact time average of
    the rotating interaction terms over the step; the sampling criterion
    ``step * ||H|| <= 0.5 rad`` is enforced (halving the step automatically,
    or raising when ``auto_refine`` is off).
    """
    if duration is None:
        duration = pulse.duration
    if step <= 0:
        raise ValueError("step must be positive")
    if step > duration:
        step = duration
    active = tuple(sorted({idx for tr in pulse.transitions for idx in tr}))
    terms = _pulse_terms(pulse, table, trap, active)
    bound = _term_norm_bound(terms)
    while step * bound > 0.5:
        if not auto_refine:
            raise ValueError(
                f"step {step:g} s violates the sampling criterion "
                f"(step * max|H| = {step * bound:.2f} rad > 0.5); use a smaller step")
        step /= 2.0
    dim = len(active) * trap.n_motional
    u = np.eye(dim, dtype=complex)
    n_steps = max(1, math.ceil(duration / step - 1e-9))
    t = 0.0
    for k in range(n_steps):
        h = min(step, duration - t)
        t_mid = t + 0.5 * h
        hbar = np.zeros((dim, dim), dtype=complex)
        for mat, nu in terms:
            hbar += mat * (np.exp(1j * nu * t_mid) * np.sinc(nu * h / (2.0 * np.pi)))
        hbar += hbar.conj().T
        w, v = eigh(hbar)
        u = (v * np.exp(-1j * w * h)) @ (v.conj().T @ u)
        t += h
        yield t, u


def evolve_pulse(pulse: PulseSpec, table: LevelTable, trap: TrapConfig,
                 step: float = 1e-6, duration: float | None = None,
                 auto_refine: bool = True) -> UnitaryEvolution:
    """Propagate one pulse and return the accumulated unitary."""
    active = tuple(sorted({idx for tr in pulse.transitions for idx in tr}))
    t, u = 0.0, np.eye(len(active) * trap.n_motional, dtype=complex)
    for t, u in propagate_steps(pulse, table, trap, step, duration, auto_refine):
        pass
    return UnitaryEvolution(u, active, table.n_states, trap.n_motional, pulse.id, t)


def compile_transition_matrices(evolution: UnitaryEvolution,
                                trap: TrapConfig) -> TransitionMatrixPair:
    """Squared-amplitude population maps conditioned on the motional outcome.

    For each initial pure state |j, 0>: A0[i, j] = |<i,0|U|j,0>|^2 and
    A1[i, j] aggregates all k >= 1 motional outcomes. Untouched levels map to
    themselves under A0.
    """
    n = evolution.n_states
    n_mot = evolution.n_motional
    a0 = np.eye(n)
    a1 = np.zeros((n, n))
    active = evolution.active_levels
    for col, j in enumerate(active):
        amps = evolution.U[:, col * n_mot]  # initial |j, 0>
        probs = np.abs(amps.reshape(len(active), n_mot)) ** 2
        a0[:, j] = 0.0
        for row, i in enumerate(active):
            a0[i, j] = probs[row, 0]
            a1[i, j] = probs[row, 1:].sum()
        deficit = abs(a0[:, j].sum() + a1[:, j].sum() - 1.0)
        if deficit > 1e-5:
            raise ValueError(
                f"pulse {evolution.pulse_id}: column {j} probability deficit {deficit:.2e}; "
                "propagation inaccuracy")
    return TransitionMatrixPair(a0, a1, evolution.pulse_id)


def measurement_probabilities(state: PopulationState, tm: TransitionMatrixPair):
    """Outcome probabilities p_k = ||A_k p||_1 for the motional measurement."""
    p0 = float((tm.A0 @ state.p).sum())
    p1 = float((tm.A1 @ state.p).sum())
    if abs(p0 + p1 - 1.0) > 1e-9:
        raise ValueError(f"outcome probabilities sum to {p0 + p1!r}")
    return p0, p1


def _transition_components(transitions):
    """Connected components of the undirected level-coupling graph.

    Returns a list of index lists into ``transitions``; transitions in
    different components share no level, so the pulse Hamiltonian is exactly
    block diagonal across them.
    """
    adjacency: dict = {}
    for k, (i, f) in enumerate(transitions):
        adjacency.setdefault(i, []).append((f, k))
        adjacency.setdefault(f, []).append((i, k))
    seen_levels: set = set()
    components = []
    for start in adjacency:
        if start in seen_levels:
            continue
        stack = [start]
        seen_levels.add(start)
        members: set = set()
        while stack:
            lvl = stack.pop()
            for nxt, k in adjacency[lvl]:
                members.add(k)
                if nxt not in seen_levels:
                    seen_levels.add(nxt)
                    stack.append(nxt)
        components.append(sorted(members))
    return components


def _compile_block(pulse: PulseSpec, table: LevelTable, trap: TrapConfig,
                   step) -> TransitionMatrixPair:
    if step == "auto":
        active = tuple(sorted({idx for tr in pulse.transitions for idx in tr}))
        bound = _term_norm_bound(_pulse_terms(pulse, table, trap, active))
        step = min(pulse.duration / 16.0, 0.25 / bound)
    ev = evolve_pulse(pulse, table, trap, step=step)
    return compile_transition_matrices(ev, trap)


def compile_pulse(pulse: PulseSpec, table: LevelTable, trap: TrapConfig,
                  step=1e-6) -> TransitionMatrixPair:
    """Compile one pulse's measurement-conditioned matrices.

    ``step='auto'`` picks the step from the sampling criterion (useful for
    weak, long pulses). Merged pulses whose transitions split into disjoint
    level groups are propagated block by block, which keeps the cost linear
    in the number of groups instead of cubic in their union.
    """
    components = _transition_components(pulse.transitions)
    if len(components) == 1:
        return _compile_block(pulse, table, trap, step)
    n = table.n_states
    a0 = np.eye(n)
    a1 = np.zeros((n, n))
    for member_ids in components:
        sub = dataclasses.replace(
            pulse,
            transitions=tuple(pulse.transitions[k] for k in member_ids),
            transition_rates=tuple(pulse.transition_rates[k] for k in member_ids))
        tm = _compile_block(sub, table, trap, step)
        for j in sorted({idx for tr in sub.transitions for idx in tr}):
            a0[:, j] = tm.A0[:, j]
            a1[:, j] = tm.A1[:, j]
    return TransitionMatrixPair(a0, a1, pulse.id)


def compile_library(library: PulseLibrary, table: LevelTable, trap: TrapConfig,
                    step=1e-6):
    """Compile measurement-conditioned matrices for every pulse in the library."""
    return [compile_pulse(pulse, table, trap, step) for pulse in library.pulses]


# --- archive -----------------------------------------------------------------

def library_fingerprint(library: PulseLibrary) -> str:
    return hashlib.sha256(library.to_json().encode()).hexdigest()


def trap_fingerprint(trap: TrapConfig) -> str:
    doc = json.dumps({"motional_frequency": trap.motional_frequency,
                      "lamb_dicke": trap.lamb_dicke,
                      "n_motional": trap.n_motional}, sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()


def save_transition_matrices(path, tms, library: PulseLibrary, trap: TrapConfig) -> None:
    a0 = np.stack([tm.A0 for tm in tms])
    a1 = np.stack([tm.A1 for tm in tms])
    meta = json.dumps({"format": "rlqls-transition-matrices", "version": 1,
                       "library_hash": library_fingerprint(library),
                       "trap_hash": trap_fingerprint(trap),
                       "pulse_ids": [tm.pulse_id for tm in tms]})
    np.savez_compressed(path, A0=a0, A1=a1, meta=np.array(meta))


def load_transition_matrices(path, library: PulseLibrary | None = None,
                             trap: TrapConfig | None = None):
    """Load a compiled archive, rejecting stale caches on hash mismatch."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != "rlqls-transition-matrices" or meta.get("version") != 1:
            raise ValueError("unrecognized transition-matrix archive")
        if library is not None and meta["library_hash"] != library_fingerprint(library):
            raise ValueError("archive was built from a different pulse library")
        if trap is not None and meta["trap_hash"] != trap_fingerprint(trap):
            raise ValueError("archive was built with a different trap configuration")
        return [TransitionMatrixPair(a0, a1, pid)
                for a0, a1, pid in zip(data["A0"], data["A1"], meta["pulse_ids"])]
