"""Carrier and blue-sideband dynamics of a single driven transition.

Propagates a two-level system (with two motional levels) under a resonant
carrier and under a blue-sideband pi pulse, then plots the populations
against the closed-form carrier expectation cos^2(Omega t / 2).

Run:  python3 demos/rabi_oscillations.py
"""

import pathlib

import matplotlib
import numpy as np

matplotlib.use("svg")
import matplotlib.pyplot as plt

from rlqls.constants import TWO_PI
from rlqls.levels import LevelTable, cah_label
from rlqls.propagator import compile_pulse, propagate_steps
from rlqls.pulses import PulseSpec, TrapConfig

OUT = pathlib.Path(__file__).parent / "output"


def main():
    OUT.mkdir(exist_ok=True)
    table = LevelTable((cah_label(1, 1, -1.5, "-"), cah_label(1, 1, -0.5, "-")),
                       np.array([0.0, 1.0e9]))
    trap = TrapConfig(motional_frequency=5.164e6, lamb_dicke=0.09, n_motional=2)
    omega = TWO_PI * 2e3

    # resonant carrier over three Rabi periods
    carrier = PulseSpec(id=1, transitions=((0, 1),), laser_frequency=1.0e9,
                        rabi_rate=omega, duration=3 * TWO_PI / omega)
    ts, ground = [], []
    for t, u in propagate_steps(carrier, table, trap, step=carrier.duration / 600):
        ts.append(t * 1e3)
        ground.append(abs(u[0, 0]) ** 2 + abs(u[1, 0]) ** 2)
    analytic = np.cos(omega * np.array(ts) / 1e3 / 2) ** 2
    print(f"carrier: max |simulated - cos^2| = {np.abs(ground - analytic).max():.2e}")

    # blue-sideband pi pulse: |g, n=0> -> |e, n=1>
    sideband = PulseSpec(
        id=2, transitions=((0, 1),),
        laser_frequency=1.0e9 + trap.motional_frequency,
        rabi_rate=omega, duration=np.pi / (trap.lamb_dicke * omega))
    tm = compile_pulse(sideband, table, trap, step="auto")
    print(f"sideband pi pulse: transfer probability A1[1, 0] = {tm.A1[1, 0]:.7f}")

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ts, ground, label="simulated ground population")
    ax.plot(ts, analytic, "--", label=r"$\cos^2(\Omega t/2)$")
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("population")
    ax.legend()
    fig.tight_layout()
    fig.savefig(OUT / "rabi_oscillations.svg")
    print(f"plot -> {OUT / 'rabi_oscillations.svg'}")


if __name__ == "__main__":
    main()
