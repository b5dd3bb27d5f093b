"""Deep-Q training on the analytic 3-state model, checked against the oracle.

The 3-state / 2-pulse model starts from the thermal distribution
(0.6, 0.3, 0.1). The optimal strategy applies pulse 2 first (expected length
1.4 pulses) while the cyclic sweep needs 1.7. Training recovers the optimal
policy; the script prints the learned Q values next to the exact costs and
extracts the full decision tree.

Run:  python3 demos/toy_training.py
"""

import pathlib

import numpy as np

from rlqls.agent import DqnConfig, evaluate, forward, train
from rlqls.analysis import export_tree_dot, extract_decision_tree
from rlqls.env import StatePrepEnv, run_episode, sweeping_policy
from rlqls.levels import format_label
from rlqls.presets import toy_three_state

OUT = pathlib.Path(__file__).parent / "output"


def main():
    OUT.mkdir(exist_ok=True)
    bundle = toy_three_state()
    env = StatePrepEnv(bundle.table, bundle.transition_matrices,
                       bundle.env_config, durations=bundle.durations)

    config = DqnConfig(n_training=500, hidden_widths=(32,), batch_size=64,
                       update_mode="qmdp")
    mlp, curve = train(env, config, np.random.default_rng(0))
    print(f"trained {config.n_training} episodes; "
          f"final moving average length {curve[-1][2]:.2f}")

    start = env.reset()
    q = forward(mlp, start.p)
    print(f"Q(start) = {np.round(q, 3)}   (exact costs: pulse 1 -> -1.7, "
          "pulse 2 -> -1.4)")

    stats = evaluate(mlp, env, 20_000, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    sweep = np.mean([run_episode(env, lambda i, s: sweeping_policy(i, bundle.library),
                                 rng).length for i in range(20_000)])
    print(f"greedy mean length {stats.mean_length:.3f} (oracle 1.4); "
          f"sweeping {sweep:.3f} (oracle 1.7)")

    tree = extract_decision_tree(mlp, env)
    labels = [format_label(lab) for lab in bundle.table.labels]
    export_tree_dot(tree, OUT / "toy_decision_tree.dot", labels)
    print(f"decision tree: {len(tree.nodes)} nodes, expected depth "
          f"{tree.expected_depth:.3f} -> {OUT / 'toy_decision_tree.dot'}")


if __name__ == "__main__":
    main()
