"""Tour of the bundled 130-level hydronium dataset and its pulse library.

Loads the level table and Rabi-rate table, builds the merged pulse library,
and prints summary statistics: level counts per manifold, pulse durations,
and the thermal weight covered by the modeled levels at room temperature.

Run:  python3 demos/h3o_library.py
"""

import numpy as np

from rlqls.constants import TWO_PI
from rlqls.levels import boltzmann_populations, format_label
from rlqls.presets import h3o


def main():
    bundle = h3o()
    table = bundle.table
    print(f"levels: {len(table.labels)}, pulses: {bundle.library.n_actions}")

    per_j: dict = {}
    for lab in table.labels:
        per_j[(lab["J"], lab["K"])] = per_j.get((lab["J"], lab["K"]), 0) + 1
    for (j, k), count in sorted(per_j.items()):
        print(f"  (J, K) = ({j}, {k}): {count} sublevels")

    durations = np.array(bundle.durations) * 1e3
    rates = np.array([p.rabi_rate for p in bundle.library.pulses]) / TWO_PI / 1e3
    print(f"pulse durations: {durations.min():.1f} - {durations.max():.1f} ms "
          f"(median {np.median(durations):.1f})")
    print(f"Rabi rates: {rates.min():.3f} - {rates.max():.3f} (2pi kHz)")

    start = boltzmann_populations(table, 300.0)
    top = np.argsort(start.p)[::-1][:5]
    print("most populated levels at 300 K:")
    for idx in top:
        print(f"  {format_label(table.labels[idx]):>14s}  p = {start.p[idx]:.4f}")


if __name__ == "__main__":
    main()
