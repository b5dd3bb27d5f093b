"""Bundled model presets: a 3-state toy, a small diatomic desk model, and
the full 130-level symmetric-top dataset.

The desk model uses deliberately non-physical placeholder constants (no
published constants exist for the real diatomic system); it is sized and
structured like the real problem so that policies, baselines, and thermal
effects behave qualitatively correctly, but none of its numbers should be
read as molecular data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .constants import KB_OVER_H, TWO_PI
from .levels import (CahConstants, LevelTable, build_cah_hamiltonian, cah_label,
                     diagonalize_to_levels, load_level_table)
from .propagator import TransitionMatrixPair
from .pulses import (MergeRule, PulseLibrary, PulseSpec, TrapConfig,
                     build_pulse_library, load_rabi_table, pi_pulse_duration)
from .env import EnvConfig
from .thermal import EinsteinTable

__all__ = [
    "PresetBundle",
    "toy_three_state",
    "toy_transition_matrices",
    "cah_desk",
    "desk_einstein_table",
    "h3o",
    "load_preset",
    "PRESET_NAMES",
]

PRESET_NAMES = ("synthetic", "cah_desk", "h3o")


@dataclass(frozen=True)
class PresetBundle:
    """Everything needed to assemble an environment for one model."""

    name: str
    table: LevelTable
    library: PulseLibrary
    trap: TrapConfig
    env_config: EnvConfig
    einstein: EinsteinTable | None = None
    # Hand-built measurement maps (set only when the preset is analytic and
    # needs no propagation).
    transition_matrices: tuple | None = None

    @property
    def durations(self):
        return tuple(p.duration for p in self.library.pulses)


# --- 3-state analytic toy ------------------------------------------------------

def _toy_table() -> LevelTable:
    # Energies chosen so the thermal start at 1 K is exactly (0.6, 0.3, 0.1).
    e = np.array([0.0, KB_OVER_H * math.log(2.0), KB_OVER_H * math.log(6.0)])
    labels = (cah_label(1, 1, -1.5, "-"), cah_label(1, 1, -0.5, "-"),
              cah_label(1, 1, 0.5, "-"))
    return LevelTable(labels, e)


def toy_transition_matrices():
    """Hand-built measurement maps for the 3-state toy.

    Pulse 1 moves all of level 1 to level 2 (sideband branch); pulse 2 moves
    all of level 0 to level 2. Untouched levels keep their population in the
    no-click branch.
    """
    a0_1 = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    a1_1 = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    a0_2 = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    a1_2 = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    return (TransitionMatrixPair(a0_1, a1_1, 1), TransitionMatrixPair(a0_2, a1_2, 2))


def toy_three_state() -> PresetBundle:
    """Analytic 3-state / 2-pulse model with known optimal policy.

    The thermal start is (0.6, 0.3, 0.1); pulse 2 first is optimal (expected
    length 1.4 pulses) while the cyclic sweep starting at pulse 1 needs 1.7
    on average.
    """
    table = _toy_table()
    trap = TrapConfig(motional_frequency=1.0e6, lamb_dicke=0.09, n_motional=2)
    rate = TWO_PI * 2e3
    duration = pi_pulse_duration(rate, trap)
    pulses = tuple(
        PulseSpec(id=pid, transitions=((i, f),),
                  laser_frequency=float(table.energies[f] - table.energies[i]
                                        + trap.motional_frequency),
                  rabi_rate=rate, duration=duration)
        for pid, (i, f) in ((1, (1, 2)), (2, (0, 2))))
    config = EnvConfig(purity_threshold=0.01, overlap_penalty=0.0,
                       bbr_enabled=False, max_steps=50, initial_temperature=1.0)
    return PresetBundle("synthetic", table, PulseLibrary(pulses), trap, config,
                        transition_matrices=toy_transition_matrices())


# --- diatomic desk model -------------------------------------------------------

# Placeholder constants; see the module docstring. Values are picked for
# convenient scales: ~10^11 Hz rotational spacing, MHz Zeeman splittings,
# and a spin-rotation term large enough to mix the m blocks visibly.
DESK_CONSTANTS = CahConstants(
    rotational_constant=1.0e11,
    g_rot=2.0,
    g_nuc=5.0,
    spin_rotation=1.5e5,
    b_field=0.4,
)

DESK_TRAP = TrapConfig(motional_frequency=1.0e6, lamb_dicke=0.09, n_motional=2)


def _desk_transitions(table: LevelTable, j_manifolds):
    """Chained sideband drives funneling population to one stretched level.

    Within the lowest manifold the chain raises m by one per pulse toward the
    m = J + 1/2 stretched state; every higher manifold chains m downward and
    hands its bottom level to the manifold below. The stretched state of the
    lowest manifold is the only absorbing level.
    """
    j_sorted = sorted(j_manifolds)
    by_jm: dict = {}
    for idx, lab in enumerate(table.labels):
        by_jm.setdefault((lab["J"], lab["m"]), []).append(idx)

    def pick(j, m, xi_pref):
        cands = by_jm.get((j, m), [])
        if not cands:
            return None
        for idx in cands:
            if table.labels[idx]["xi"] == xi_pref:
                return idx
        return cands[0]

    rate = TWO_PI * 2e3
    entries = []
    j_lo = j_sorted[0]
    for j in j_sorted:
        m_vals = sorted({m for (jj, m) in by_jm if jj == j})
        step_up = j == j_lo
        for m in m_vals:
            m_next = m + 1 if step_up else m - 1
            if (j, m_next) not in by_jm:
                continue
            for i in by_jm[(j, m)]:
                f = pick(j, m_next, table.labels[i]["xi"])
                entries.append((i, f, rate))
    # hand-off pulses between adjacent manifolds (higher J feeds lower J)
    for j_hi, j_low in zip(j_sorted[1:], j_sorted[:-1]):
        m_bot = -(j_hi + 0.5)
        for i in by_jm[(j_hi, m_bot)]:
            f = pick(j_low, m_bot + 1, table.labels[i]["xi"])
            if f is not None:
                entries.append((i, f, rate))
    return entries


def cah_desk(j_manifolds=(1, 2), bbr_temperature: float = 300.0,
             bbr_enabled: bool = False, overlap_penalty: float = 0.0,
             einstein_a: float = 0.1) -> PresetBundle:
    """Small diatomic-style model (16 states for J in {1, 2})."""
    h_list = build_cah_hamiltonian(DESK_CONSTANTS, j_manifolds)
    table = diagonalize_to_levels(h_list, j_manifolds)
    entries = _desk_transitions(table, j_manifolds)
    library = build_pulse_library(table, entries, DESK_TRAP, MergeRule())
    einstein = desk_einstein_table(table, j_manifolds, einstein_a)
    config = EnvConfig(purity_threshold=0.01, overlap_penalty=overlap_penalty,
                       bbr_enabled=bbr_enabled, bbr_temperature=bbr_temperature,
                       max_steps=200, initial_temperature=300.0)
    return PresetBundle("cah_desk", table, library, DESK_TRAP, config, einstein)


def desk_einstein_table(table: LevelTable, j_manifolds,
                        a_coefficient: float = 0.1) -> EinsteinTable:
    """Synthetic spontaneous-emission set linking adjacent manifolds.

    Each level of a higher-J manifold decays to two levels of the manifold
    below (cyclically assigned), which keeps the rate graph connected so the
    thermal stationary state is the Boltzmann distribution.
    """
    j_sorted = sorted(j_manifolds)
    by_j = {j: [i for i, lab in enumerate(table.labels) if lab["J"] == j]
            for j in j_sorted}
    entries = []
    for j_hi, j_low in zip(j_sorted[1:], j_sorted[:-1]):
        lower = by_j[j_low]
        for k, upper in enumerate(by_j[j_hi]):
            entries.append((upper, lower[k % len(lower)], a_coefficient))
            entries.append((upper, lower[(k + 1) % len(lower)], a_coefficient))
    tab = EinsteinTable(tuple(entries))
    tab.validate_against(table)
    return tab


# --- bundled 130-level symmetric-top dataset ------------------------------------

H3O_TRAP = TrapConfig(motional_frequency=5.164e6, lamb_dicke=0.09, n_motional=2)


def _data_path(name: str):
    return resources.files("rlqls.data").joinpath(name)


def h3o(overlap_penalty: float = 5.0) -> PresetBundle:
    """Full bundled model: 130 levels and the ingested Rabi-rate table."""
    with resources.as_file(_data_path("h3o_levels.tsv")) as p:
        table = load_level_table(p)
    with resources.as_file(_data_path("h3o_rabi.tsv")) as p:
        entries = load_rabi_table(p, table)
    library = build_pulse_library(table, entries, H3O_TRAP, MergeRule())
    config = EnvConfig(purity_threshold=0.01, overlap_penalty=overlap_penalty,
                       bbr_enabled=False, max_steps=1000,
                       initial_temperature=300.0)
    return PresetBundle("h3o", table, library, H3O_TRAP, config)


def load_preset(name: str, **kwargs) -> PresetBundle:
    if name == "synthetic":
        return toy_three_state(**kwargs)
    if name == "cah_desk":
        return cah_desk(**kwargs)
    if name == "h3o":
        return h3o(**kwargs)
    raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
