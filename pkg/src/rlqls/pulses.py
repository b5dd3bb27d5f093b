"""Pulse (action) library construction.

Raman-Rabi rates come either from adiabatic elimination over intermediate
states or directly from an ingested rate table; each driven transition group
becomes one blue-sideband pulse with a near-pi duration.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .constants import TWO_PI
from .levels import LevelTable, format_label

__all__ = [
    "TrapConfig",
    "DipoleCoupling",
    "DipoleCouplingSet",
    "PulseSpec",
    "PulseLibrary",
    "MergeRule",
    "raman_rabi_rate",
    "pi_pulse_duration",
    "load_rabi_table",
    "build_pulse_library",
]

log = logging.getLogger(__name__)

WEAK_PULSE_FLOOR = TWO_PI * 100.0  # rad/s; transitions below this are dropped


@dataclass(frozen=True)
class TrapConfig:
    """Shared motional mode: frequency (Hz), Lamb-Dicke parameter, truncation."""

    motional_frequency: float  # Hz
    lamb_dicke: float
    n_motional: int = 2

    def __post_init__(self):
        if self.motional_frequency <= 0:
            raise ValueError("motional frequency must be positive")
        if not 0 < self.lamb_dicke < 1:
            raise ValueError("Lamb-Dicke parameter must lie in (0, 1)")
        if self.n_motional < 2:
            raise ValueError("need at least 2 motional levels")


@dataclass(frozen=True)
class DipoleCoupling:
    """One dipole matrix element <M| d.eps |s> against an intermediate state M.

    ``coupling`` is in Hz-equivalent units per unit field amplitude (i.e.
    <M|d.eps|s> A / h is a frequency for amplitude A); ``intermediate_energy``
    is E_M/h in Hz relative to the initial state.
    """

    intermediate: str
    state: str
    channel: str  # 'pi' or 'sigma'
    coupling: float
    intermediate_energy: float

    def __post_init__(self):
        if self.channel not in ("pi", "sigma"):
            raise ValueError("polarization channel must be 'pi' or 'sigma'")
        if not np.isfinite(self.coupling):
            raise ValueError("coupling must be finite")


@dataclass(frozen=True)
class DipoleCouplingSet:
    entries: tuple

    def lookup(self, intermediate: str, state: str, channel: str) -> float:
        for e in self.entries:
            if (e.intermediate, e.state, e.channel) == (intermediate, state, channel):
                return e.coupling
        return 0.0

    @property
    def intermediates(self):
        seen = {}
        for e in self.entries:
            seen[e.intermediate] = e.intermediate_energy
        return seen


def raman_rabi_rate(initial: str, final: str, couplings: DipoleCouplingSet,
                    field1, field2, denominator_floor: float = TWO_PI * 1e3) -> float:
    """Effective two-photon Rabi rate (rad/s) by adiabatic elimination.

    ``field1`` (pi-polarized) and ``field2`` (sigma-polarized) are
    ``(amplitude, frequency_hz)`` pairs. Both the co- and counter-rotating
    term are kept:

        Omega = (1/4) sum_M [ g2(f,M) g1(M,i) / (w_iM - w1)
                            + g1(f,M) g2(M,i) / (w_iM + w2) ]

    with g_k the angular coupling rate of field k and w_iM the angular
    intermediate detuning from the initial state. Intermediates closer than
    ``denominator_floor`` to the first-term resonance are rejected.
    """
    if not couplings.entries:
        raise ValueError("empty dipole coupling set")
    amp1, w1_hz = field1
    amp2, w2_hz = field2
    if w1_hz <= 0 or w2_hz <= 0:
        raise ValueError("field frequencies must be positive")
    w1 = TWO_PI * w1_hz
    w2 = TWO_PI * w2_hz
    total = 0.0
    for m_label, e_m in couplings.intermediates.items():
        w_im = TWO_PI * e_m
        if abs(w_im - w1) < denominator_floor:
            raise ValueError(f"intermediate {m_label!r} nearly resonant with field 1")
        g1_mi = TWO_PI * couplings.lookup(m_label, initial, "pi") * amp1
        g2_fm = TWO_PI * couplings.lookup(m_label, final, "sigma") * amp2
        g2_mi = TWO_PI * couplings.lookup(m_label, initial, "sigma") * amp2
        g1_fm = TWO_PI * couplings.lookup(m_label, final, "pi") * amp1
        total += 0.25 * (g2_fm * g1_mi / (w_im - w1) + g1_fm * g2_mi / (w_im + w2))
    return total


def pi_pulse_duration(rabi_rate: float, trap: TrapConfig) -> float:
    """Blue-sideband pi-pulse duration D = pi / (lambda_LD * Omega), seconds."""
    if rabi_rate <= 0:
        raise ValueError("Rabi rate must be positive")
    return np.pi / (trap.lamb_dicke * rabi_rate)


# --- rate-table ingestion ----------------------------------------------------

_RABI_HEADER = ("J_i", "K_i", "parity_i", "mF_i", "xi_i",
                "J_f", "K_f", "parity_f", "mF_f", "xi_f", "rabi_2pi_kHz")


def _check_selection_rules(row_i, row_f, lineno: int) -> None:
    """Electric-dipole Raman selection rules for the symmetric-top tables.

    Delta J in {0, +-1, +-2} (with |Delta J| = 1 only for K > 0), Delta K = 0,
    equal parity, Delta m_F = +1 (the tables list one drive direction; the
    reverse shares the rate).
    """
    j_i, k_i, par_i, mf_i = row_i
    j_f, k_f, par_f, mf_f = row_f
    dj = j_f - j_i
    if dj not in (-2, -1, 0, 1, 2) or (abs(dj) == 1 and k_i == 0):
        raise ValueError(f"row {lineno}: Delta J = {dj} violates selection rules")
    if k_f != k_i:
        raise ValueError(f"row {lineno}: Delta K = {k_f - k_i} violates selection rules")
    if par_f != par_i:
        raise ValueError(f"row {lineno}: parity changes")
    if abs((mf_f - mf_i) - 1.0) > 1e-9:
        raise ValueError(f"row {lineno}: Delta m_F = {mf_f - mf_i}, expected +1")


def load_rabi_table(path, table: LevelTable, delimiter: str = "\t",
                    register_reverse: bool = True):
    """Load two-photon Rabi rates keyed by level labels.

    Returns a list of ``(initial_index, final_index, rabi_rad_s)`` entries.
    Each listed row also registers the reverse transition at the same rate
    when ``register_reverse`` is set. Rows failing the dipole selection rules
    or referencing unknown labels are rejected with their line number.
    """
    by_label = {format_label(lab): i for i, lab in enumerate(table.labels)}
    entries = []
    with open(path) as fh:
        header = None
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if header is None:
                header = tuple(c.strip() for c in line.split(delimiter))
                if header != _RABI_HEADER:
                    raise ValueError(f"bad header {header}, expected {_RABI_HEADER}")
                continue
            cols = [c.strip() for c in line.split(delimiter)]
            if len(cols) != len(_RABI_HEADER):
                raise ValueError(f"row {lineno}: expected {len(_RABI_HEADER)} columns")
            try:
                j_i, k_i, mf_i, xi_i = int(cols[0]), int(cols[1]), float(cols[3]), int(cols[4])
                j_f, k_f, mf_f, xi_f = int(cols[5]), int(cols[6]), float(cols[8]), int(cols[9])
                rate_khz = float(cols[10])
            except ValueError as exc:
                raise ValueError(f"row {lineno}: malformed numeric field: {exc}") from None
            _check_selection_rules((j_i, k_i, cols[2], mf_i), (j_f, k_f, cols[7], mf_f), lineno)
            key_i = f"{j_i},{k_i},{cols[2]},{mf_i:g},{xi_i}"
            key_f = f"{j_f},{k_f},{cols[7]},{mf_f:g},{xi_f}"
            try:
                idx_i, idx_f = by_label[key_i], by_label[key_f]
            except KeyError as exc:
                raise ValueError(f"row {lineno}: unresolvable label {exc}") from None
            rate = TWO_PI * rate_khz * 1e3
            entries.append((idx_i, idx_f, rate))
            if register_reverse:
                entries.append((idx_f, idx_i, rate))
    if header is None:
        raise ValueError(f"{path}: empty rate table")
    return entries


# --- library assembly --------------------------------------------------------

@dataclass(frozen=True)
class PulseSpec:
    """One library action: a blue-sideband (or carrier) pulse.

    ``transitions`` lists the (initial, final) basis-index pairs the pulse
    drives; ``transition_rates`` carries the per-transition Rabi rate (rad/s)
    so merged near-degenerate transitions keep their own coupling strengths.
    ``rabi_rate`` is the representative rate the duration was derived from.
    """

    id: int
    transitions: tuple
    laser_frequency: float  # Hz
    rabi_rate: float  # rad/s
    duration: float  # s
    sideband: str = "blue"
    polarization: tuple = ("pi", "sigma")
    transition_rates: tuple = ()

    def __post_init__(self):
        if self.rabi_rate <= 0 or self.duration <= 0:
            raise ValueError("Rabi rate and duration must be positive")
        if not self.transitions:
            raise ValueError("pulse must drive at least one transition")
        if self.sideband not in ("carrier", "blue"):
            raise ValueError("sideband must be 'carrier' or 'blue'")
        if not self.transition_rates:
            object.__setattr__(self, "transition_rates",
                               (self.rabi_rate,) * len(self.transitions))
        if len(self.transition_rates) != len(self.transitions):
            raise ValueError("transition_rates length mismatch")


@dataclass(frozen=True)
class PulseLibrary:
    pulses: tuple

    def __post_init__(self):
        ids = [p.id for p in self.pulses]
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError("pulse ids must be dense 1..N_A")

    @property
    def n_actions(self) -> int:
        return len(self.pulses)

    def __getitem__(self, pulse_id: int) -> PulseSpec:
        return self.pulses[pulse_id - 1]

    def to_json(self) -> str:
        doc = {"format": "rlqls-pulse-library", "version": 1,
               "pulses": [{"id": p.id,
                           "transitions": [list(t) for t in p.transitions],
                           "laser_frequency_hz": p.laser_frequency,
                           "rabi_rate_rad_s": p.rabi_rate,
                           "duration_s": p.duration,
                           "sideband": p.sideband,
                           "polarization": list(p.polarization),
                           "transition_rates_rad_s": list(p.transition_rates)}
                          for p in self.pulses]}
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PulseLibrary":
        doc = json.loads(text)
        if doc.get("format") != "rlqls-pulse-library" or doc.get("version") != 1:
            raise ValueError("unrecognized pulse library document")
        pulses = tuple(
            PulseSpec(id=d["id"],
                      transitions=tuple(tuple(t) for t in d["transitions"]),
                      laser_frequency=d["laser_frequency_hz"],
                      rabi_rate=d["rabi_rate_rad_s"],
                      duration=d["duration_s"],
                      sideband=d["sideband"],
                      polarization=tuple(d["polarization"]),
                      transition_rates=tuple(d["transition_rates_rad_s"]))
            for d in doc["pulses"])
        return cls(pulses)


@dataclass(frozen=True)
class MergeRule:
    """Grouping of near-degenerate transitions into a single pulse.

    Transitions whose blue-sideband frequencies agree within
    ``frequency_window_hz`` share one pulse with averaged frequency and
    averaged pi duration, except when the fastest Rabi rate in the group
    exceeds the slowest by at least ``slow_factor``: then the slower
    transition's pi duration is used.
    """

    frequency_window_hz: float = 1e3
    slow_factor: float = 2.5


def build_pulse_library(table: LevelTable, rabi_entries, trap: TrapConfig,
                        merge_rule: MergeRule = MergeRule(),
                        weak_floor: float = WEAK_PULSE_FLOOR) -> PulseLibrary:
    """Assemble the blue-sideband action library from driven transitions.

    ``rabi_entries`` is a list of (initial_index, final_index, rabi_rad_s).
    Transitions below ``weak_floor`` are excluded (logged); the remainder are
    sorted by sideband frequency and grouped per ``merge_rule``.
    """
    if not rabi_entries:
        raise ValueError("no Rabi entries supplied")
    kept = []
    for i, f, rate in rabi_entries:
        if rate < weak_floor:
            log.warning("dropping weak transition %s -> %s (Omega = 2pi x %.4f kHz)",
                        format_label(table.labels[i]), format_label(table.labels[f]),
                        rate / TWO_PI / 1e3)
            continue
        freq = (table.energies[f] - table.energies[i]) + trap.motional_frequency
        kept.append((freq, i, f, rate))
    if not kept:
        raise ValueError("all transitions fall below the weak-pulse floor")
    kept.sort(key=lambda t: (t[0], t[1], t[2]))

    groups = []
    for freq, i, f, rate in kept:
        if groups and freq - groups[-1][-1][0] <= merge_rule.frequency_window_hz:
            groups[-1].append((freq, i, f, rate))
        else:
            groups.append([(freq, i, f, rate)])

    pulses = []
    for gid, group in enumerate(groups, start=1):
        rates = [g[3] for g in group]
        durations = [pi_pulse_duration(r, trap) for r in rates]
        if max(rates) / min(rates) >= merge_rule.slow_factor:
            duration = max(durations)  # pi duration of the slowest transition
            rep_rate = min(rates)
        else:
            duration = float(np.mean(durations))
            rep_rate = float(np.mean(rates))
        pulses.append(PulseSpec(
            id=gid,
            transitions=tuple((g[1], g[2]) for g in group),
            laser_frequency=float(np.mean([g[0] for g in group])),
            rabi_rate=rep_rate,
            duration=duration,
            sideband="blue",
            transition_rates=tuple(rates),
        ))
    return PulseLibrary(tuple(pulses))
