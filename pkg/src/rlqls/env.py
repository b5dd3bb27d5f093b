"""Markov decision process over measurement-conditioned population dynamics.

Each step applies one pulse's transition-matrix pair, samples the binary
motional outcome, collapses the population vector onto the chosen branch,
optionally lets black-body radiation act for the pulse duration plus a
measurement window, and scores the step with a constant cost plus an
overlap penalty for pulses that barely move the state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .levels import LevelTable, PopulationState, boltzmann_populations
from .propagator import TransitionMatrixPair
from .pulses import PulseLibrary
from .thermal import BbrGenerator, bbr_propagate

__all__ = [
    "EnvConfig",
    "StepOutcome",
    "EpisodeRecord",
    "StatePrepEnv",
    "overlap",
    "sweeping_policy",
    "run_episode",
    "write_episode_log",
]

_BRANCH_EPS = 1e-12


@dataclass(frozen=True)
class EnvConfig:
    """Episode-level parameters for the state-preparation task."""

    purity_threshold: float = 0.01
    step_reward: float = -1.0
    overlap_penalty: float = 0.0
    bbr_enabled: bool = False
    bbr_temperature: float = 300.0
    t_meas: float = 0.0
    max_steps: int = 200
    initial_temperature: float = 300.0

    def __post_init__(self):
        if not 0.0 < self.purity_threshold < 1.0:
            raise ValueError("purity_threshold must lie in (0, 1)")
        if self.overlap_penalty < 0:
            raise ValueError("overlap_penalty must be nonnegative")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.t_meas < 0:
            raise ValueError("t_meas must be nonnegative")


@dataclass(frozen=True)
class StepOutcome:
    """Result of one pulse-and-measure step."""

    next: PopulationState
    outcome: int
    reward: float
    terminated: bool
    truncated: bool
    p0: float
    p1: float


@dataclass
class EpisodeRecord:
    """Trajectory of one episode: per-step transitions plus terminal info."""

    transitions: list = field(default_factory=list)  # (state, action, outcome, reward)
    terminal_state_index: int | None = None
    terminated: bool = False
    truncated: bool = False

    @property
    def length(self) -> int:
        return len(self.transitions)

    @property
    def total_reward(self) -> float:
        return sum(t[3] for t in self.transitions)


def overlap(a: PopulationState, b: PopulationState) -> float:
    """Cosine similarity of two population vectors."""
    na, nb = np.linalg.norm(a.p), np.linalg.norm(b.p)
    if na == 0.0 or nb == 0.0:
        raise ValueError("overlap undefined for a zero vector")
    return float(np.clip(a.p @ b.p / (na * nb), 0.0, 1.0))


def sweeping_policy(step_index: int, library: PulseLibrary) -> int:
    """Cycle through pulse ids 1..N_A; ``step_index`` counts from 1."""
    if step_index < 1:
        raise ValueError("step_index counts from 1")
    return (step_index - 1) % len(library.pulses) + 1


class StatePrepEnv:
    """Episodic state-preparation environment.

    One instance serves one episode at a time; the transition-matrix list is
    shared read-only. Action ids are 1-based, matching the pulse library.
    """

    def __init__(self, table: LevelTable, tms, config: EnvConfig,
                 generator: BbrGenerator | None = None,
                 durations=None):
        if not tms:
            raise ValueError("at least one transition-matrix pair is required")
        n = tms[0].n_states
        if any(tm.n_states != n for tm in tms):
            raise ValueError("transition matrices disagree on state count")
        if n != table.n_states:
            raise ValueError("transition matrices do not match the level table")
        if config.bbr_enabled and generator is None:
            raise ValueError("bbr_enabled requires a rate generator")
        self.table = table
        self.tms = list(tms)
        self.config = config
        self.generator = generator
        self.durations = list(durations) if durations is not None else [0.0] * len(tms)
        if len(self.durations) != len(self.tms):
            raise ValueError("durations must match the number of pulses")
        self.overlap_threshold = 1.0 - 1.0 / n
        self.state: PopulationState | None = None
        self.step_count = 0

    @property
    def n_states(self) -> int:
        return self.table.n_states

    @property
    def n_actions(self) -> int:
        return len(self.tms)

    def reset(self) -> PopulationState:
        """Start a new episode from the thermal initial distribution."""
        self.state = boltzmann_populations(self.table, self.config.initial_temperature)
        self.step_count = 0
        return self.state

    def _tm(self, action: int) -> TransitionMatrixPair:
        if not 1 <= action <= len(self.tms):
            raise ValueError(f"action id {action} outside 1..{len(self.tms)}")
        return self.tms[action - 1]

    def _branch(self, state: PopulationState, action: int, k: int):
        """Collapse onto branch k and apply thermal exposure; returns
        (post-BBR state, reward, terminated)."""
        tm = self._tm(action)
        mat = tm.A0 if k == 0 else tm.A1
        branch = mat @ state.p
        mass = branch.sum()
        if mass < _BRANCH_EPS:
            raise ValueError(f"branch {k} of action {action} is unreachable")
        collapsed = PopulationState(np.clip(branch, 0.0, None) / mass)
        reward = self.config.step_reward
        if overlap(state, collapsed) > self.overlap_threshold:
            reward -= self.config.overlap_penalty
        if self.config.bbr_enabled:
            exposure = self.durations[action - 1] + self.config.t_meas
            collapsed = bbr_propagate(collapsed, self.generator, exposure)
        terminated = collapsed.p.max() >= 1.0 - self.config.purity_threshold
        return collapsed, reward, terminated

    def step(self, action: int, rng: np.random.Generator) -> StepOutcome:
        """Sample the measurement outcome and advance the episode."""
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        tm = self._tm(action)
        p0 = float((tm.A0 @ self.state.p).sum())
        p1 = float((tm.A1 @ self.state.p).sum())
        if abs(p0 + p1 - 1.0) > 1e-9:
            raise ValueError("outcome probabilities do not sum to 1")
        # Guard against drawing a numerically impossible branch.
        if p1 < _BRANCH_EPS:
            k = 0
        elif p0 < _BRANCH_EPS:
            k = 1
        else:
            k = int(rng.random() >= p0)
        nxt, reward, terminated = self._branch(self.state, action, k)
        self.state = nxt
        self.step_count += 1
        truncated = not terminated and self.step_count >= self.config.max_steps
        return StepOutcome(nxt, k, reward, terminated, truncated, p0, p1)

    def step_branches(self, state: PopulationState, action: int):
        """Deterministic view of both measurement branches.

        Returns ``((p0, next0, reward0, term0), (p1, next1, reward1, term1))``
        without mutating episode state; an unreachable branch (probability
        below 1e-12) is reported as ``(pk, None, 0.0, False)``.
        """
        tm = self._tm(action)
        p0 = float((tm.A0 @ state.p).sum())
        p1 = float((tm.A1 @ state.p).sum())
        branches = []
        for k, pk in ((0, p0), (1, p1)):
            if pk < _BRANCH_EPS:
                branches.append((pk, None, 0.0, False))
            else:
                branches.append((pk, *self._branch(state, action, k)))
        return tuple(branches)


def run_episode(env: StatePrepEnv, policy, rng: np.random.Generator) -> EpisodeRecord:
    """Roll out one episode under ``policy(step_index, state) -> action id``.

    ``step_index`` counts from 1. The record stores the pre-step state for
    every transition and the terminal level index when the episode reaches
    purity (otherwise None).
    """
    record = EpisodeRecord()
    state = env.reset()
    for step_index in range(1, env.config.max_steps + 1):
        action = policy(step_index, state)
        out = env.step(action, rng)
        record.transitions.append((state, action, out.outcome, out.reward))
        state = out.next
        if out.terminated:
            record.terminated = True
            record.terminal_state_index = int(np.argmax(state.p))
            break
        if out.truncated:
            record.truncated = True
            break
    return record


def write_episode_log(path, records, delimiter: str = ",") -> None:
    """Write per-step rows: episode, step, action, k, reward, purity, terminated."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(["episode", "step", "action", "k", "reward", "purity", "terminated"])
        for ep, record in enumerate(records):
            for step, (state, action, k, reward) in enumerate(record.transitions, start=1):
                is_last = step == record.length
                writer.writerow([ep, step, action, k, f"{reward:.10g}",
                                 f"{state.purity:.10g}",
                                 int(is_last and record.terminated)])
