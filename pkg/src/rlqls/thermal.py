"""Black-body radiation as a classical rate process on level populations.

Spontaneous decay coefficients are data inputs; the stimulated up/down rates
follow from the Planck energy density and the Einstein relation for
non-degenerate (Zeeman-resolved) levels. Populations evolve by repeated
application of the first-order step matrix T = I + G*dt.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .constants import BOLTZMANN_K, HBAR, SPEED_OF_LIGHT, TWO_PI
from .levels import LevelTable, PopulationState, format_label
from .pulses import PulseLibrary

__all__ = [
    "EinsteinTable",
    "BbrGenerator",
    "planck_energy_density",
    "bbr_rates",
    "bbr_propagate",
    "purity_degradation_bounds",
    "load_einstein_table",
]

# Hard floor for the automatic step halving in bbr_propagate.
_DT_FLOOR = 1e-12


@dataclass(frozen=True)
class EinsteinTable:
    """Spontaneous-emission coefficients between level-table indices.

    Each entry is ``(upper, lower, A)`` with A in 1/s and
    ``energy[upper] > energy[lower]``.
    """

    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(tuple(e) for e in self.entries))
        for upper, lower, a in self.entries:
            if a < 0:
                raise ValueError(f"negative A coefficient for {upper}->{lower}")
            if upper == lower:
                raise ValueError("Einstein entry must connect distinct levels")

    def validate_against(self, table: LevelTable) -> None:
        n = table.n_states
        for upper, lower, _ in self.entries:
            if not (0 <= upper < n and 0 <= lower < n):
                raise ValueError(f"Einstein entry ({upper}, {lower}) out of range")
            if table.energies[upper] <= table.energies[lower]:
                raise ValueError(
                    f"entry ({upper}, {lower}): upper level is not higher in energy")


@dataclass(frozen=True)
class BbrGenerator:
    """Thermal rate generator G (1/s); columns sum to zero.

    ``G[i, j]`` for i != j is the rate from level j into level i. ``dt`` is
    the default first-order step used by :func:`bbr_propagate`.
    """

    G: np.ndarray
    temperature: float
    dt: float

    def __post_init__(self):
        g = np.asarray(self.G, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("G must be square")
        off = g - np.diag(np.diag(g))
        if off.min() < 0:
            raise ValueError("off-diagonal rates must be nonnegative")
        colsums = np.abs(g.sum(axis=0))
        if colsums.max() > 1e-12 * max(1.0, np.abs(g).max()):
            raise ValueError(f"generator columns must sum to 0 (max |sum| {colsums.max():.2e})")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        g.setflags(write=False)
        object.__setattr__(self, "G", g)

    @property
    def n_states(self) -> int:
        return self.G.shape[0]

    @property
    def max_rate(self) -> float:
        return float(np.abs(np.diag(self.G)).max()) if self.n_states else 0.0


def planck_energy_density(omega: float, temperature: float) -> float:
    """Energy density per unit angular-frequency bandwidth, J s / m^3.

    rho(w) = (hbar w^3 / pi^2 c^3) / (exp(hbar w / kT) - 1); zero at T = 0.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    if temperature < 0:
        raise ValueError("temperature must be nonnegative")
    if temperature == 0.0:
        return 0.0
    x = HBAR * omega / (BOLTZMANN_K * temperature)
    prefactor = HBAR * omega ** 3 / (math.pi ** 2 * SPEED_OF_LIGHT ** 3)
    return prefactor / math.expm1(x)


def _default_dt(max_rate: float) -> float:
    if max_rate <= 0:
        return 10e-6
    return min(10e-6, 0.1 / max_rate)


def bbr_rates(einstein: EinsteinTable, table: LevelTable,
              temperature: float) -> BbrGenerator:
    """Assemble the thermal rate generator at the given temperature.

    Downward rate is rho*B + A (stimulated plus spontaneous emission), upward
    rate is rho*B alone, with B = A pi^2 c^3 / (hbar w^3) for non-degenerate
    levels. The ratio up/down equals the Boltzmann factor exp(-hbar w / kT),
    so the stationary distribution is thermal.
    """
    if temperature < 0:
        raise ValueError("temperature must be nonnegative")
    einstein.validate_against(table)
    n = table.n_states
    g = np.zeros((n, n))
    for upper, lower, a in einstein.entries:
        omega = TWO_PI * (table.energies[upper] - table.energies[lower])
        if omega <= 0:
            raise ValueError(f"entry ({upper}, {lower}) has zero transition frequency")
        b = a * math.pi ** 2 * SPEED_OF_LIGHT ** 3 / (HBAR * omega ** 3)
        stim = planck_energy_density(omega, temperature) * b
        g[lower, upper] += stim + a   # emission: upper -> lower
        g[upper, lower] += stim       # absorption: lower -> upper
    np.fill_diagonal(g, 0.0)
    np.fill_diagonal(g, -g.sum(axis=0))
    max_rate = float(np.abs(np.diag(g)).max()) if n else 0.0
    return BbrGenerator(g, temperature, _default_dt(max_rate))


def bbr_propagate(state: PopulationState, gen: BbrGenerator,
                  duration: float) -> PopulationState:
    """Evolve populations under the rate generator for ``duration`` seconds.

    Applies T = I + G*dt round(duration/dt) times; dt is halved automatically
    (with a warning) if T has negative entries, and the result is
    renormalized to unit L1 norm.
    """
    if duration < 0:
        raise ValueError("duration must be nonnegative")
    if len(state.p) != gen.n_states:
        raise ValueError("state dimension does not match the generator")
    if duration == 0.0 or gen.max_rate == 0.0:
        return state
    dt = min(gen.dt, duration)
    eye = np.eye(gen.n_states)
    while True:
        step = eye + gen.G * dt
        if step.min() >= 0:
            break
        if dt / 2 < _DT_FLOOR:
            raise ValueError("cannot find a nonnegative first-order step above the dt floor")
        warnings.warn(f"halving BBR step {dt:g} s: first-order step matrix "
                      "had negative entries", stacklevel=2)
        dt /= 2
    n_steps = max(1, round(duration / dt))
    p = np.linalg.matrix_power(step, n_steps) @ state.p
    total = p.sum()
    if abs(total - 1.0) > 1e-9:
        warnings.warn(f"BBR propagation drifted population by {total - 1.0:.2e}; "
                      "renormalizing", stacklevel=2)
    return PopulationState(np.clip(p, 0.0, None) / p.sum())


def purity_degradation_bounds(table: LevelTable, gen: BbrGenerator,
                              library: PulseLibrary, t_meas: float = 0.0):
    """Worst-case purity loss of pure states over one pulse of exposure.

    Every basis state is evolved under the generator for the longest pulse
    duration (pessimistic bound) and the shortest (optimistic bound), each
    plus ``t_meas``; degradation is 1 minus the largest remaining component,
    and the bound is the maximum over basis states. Returns
    ``(at_longest, at_shortest)``.
    """
    if not library.pulses:
        raise ValueError("pulse library is empty")
    durations = [p.duration for p in library.pulses]
    bounds = []
    for d in (max(durations), min(durations)):
        worst = 0.0
        for j in range(table.n_states):
            p = np.zeros(table.n_states)
            p[j] = 1.0
            evolved = bbr_propagate(PopulationState(p), gen, d + t_meas)
            worst = max(worst, 1.0 - float(evolved.p.max()))
        bounds.append(worst)
    return tuple(bounds)


def load_einstein_table(path, table: LevelTable, delimiter: str = "\t") -> EinsteinTable:
    """Read ``upper_label<delim>lower_label<delim>A_per_s`` rows.

    Labels use the same text form as the level table
    (:func:`rlqls.levels.format_label`); '#' lines and blanks are skipped.
    """
    key = {format_label(lab): idx for idx, lab in enumerate(table.labels)}
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [tok.strip() for tok in line.split(delimiter)]
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            try:
                upper, lower = key[parts[0]], key[parts[1]]
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: unknown level label {exc}") from None
            entries.append((upper, lower, float(parts[2])))
    tab = EinsteinTable(tuple(entries))
    tab.validate_against(table)
    return tab
