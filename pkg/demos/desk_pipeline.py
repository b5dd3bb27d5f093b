"""Full pipeline on the 16-state desk model: compile, train, compare, perturb.

Compiles the pulse library from Schroedinger propagation, trains a deep-Q
agent, compares it with the sweeping baseline, and shows how black-body
radiation at increasing bath temperature degrades the same policy.

Run:  python3 demos/desk_pipeline.py
"""

import dataclasses
import pathlib
import time

import numpy as np

from rlqls.agent import DqnConfig, evaluate, train
from rlqls.analysis import plot_curves, success_curve
from rlqls.env import StatePrepEnv, run_episode, sweeping_policy
from rlqls.presets import cah_desk
from rlqls.propagator import compile_library
from rlqls.thermal import bbr_rates

OUT = pathlib.Path(__file__).parent / "output"


def main():
    OUT.mkdir(exist_ok=True)
    bundle = cah_desk()
    t0 = time.time()
    tms = compile_library(bundle.library, bundle.table, bundle.trap, step="auto")
    print(f"compiled {len(tms)} pulses for {len(bundle.table.labels)} levels "
          f"in {time.time() - t0:.2f} s")

    env = StatePrepEnv(bundle.table, tms, bundle.env_config,
                       durations=bundle.durations)
    rng = np.random.default_rng(0)
    policy = lambda i, s: sweeping_policy(i, bundle.library)
    sweep_records = [run_episode(env, policy, rng) for _ in range(1000)]
    sweep_mean = np.mean([r.length for r in sweep_records])
    print(f"sweeping baseline: mean length {sweep_mean:.2f}")

    config = DqnConfig(n_training=600, hidden_widths=(64,), batch_size=64,
                       update_mode="qmdp")
    t0 = time.time()
    mlp, _ = train(env, config, np.random.default_rng(7))
    stats = evaluate(mlp, env, 1000, np.random.default_rng(1))
    print(f"trained policy: mean length {stats.mean_length:.2f} "
          f"({time.time() - t0:.1f} s training)")

    curves = {"sweeping": success_curve(sweep_records),
              "RL": [(k + 1, float(f)) for k, f in
                     enumerate(stats.success_curve[1:40])]}
    plot_curves(curves, OUT / "desk_success.svg", xlabel="pulses applied",
                ylabel="finished fraction")
    print(f"success curves -> {OUT / 'desk_success.svg'}")

    print("black-body radiation, same trained policy "
          f"(no radiation: {stats.mean_length:.2f}):")
    for temperature in (150.0, 300.0):
        cfg = dataclasses.replace(bundle.env_config, bbr_enabled=True,
                                  bbr_temperature=temperature)
        gen = bbr_rates(bundle.einstein, bundle.table, temperature)
        env_t = StatePrepEnv(bundle.table, tms, cfg, gen,
                             durations=bundle.durations)
        mean = evaluate(mlp, env_t, 400, np.random.default_rng(2)).mean_length
        print(f"  T = {temperature:5.0f} K: mean length {mean:.2f}")


if __name__ == "__main__":
    main()
