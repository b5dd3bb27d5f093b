"""Policy and episode analysis: decision trees, curves, histograms, exports.

The decision tree unrolls a trained greedy policy through the deterministic
branch map of the environment: each node is a (quantized) population state
with its greedy pulse, and each edge carries the probability of one
measurement outcome. States reached along different paths that agree after
quantization are merged into a single node, so nodes can have more than two
children. Probability mass is conserved explicitly across leaves, pruned
branches, and unexpanded frontier nodes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .agent import Mlp, forward
from .env import EpisodeRecord, StatePrepEnv
from .levels import PopulationState

__all__ = [
    "DecisionTreeNode",
    "DecisionTree",
    "extract_decision_tree",
    "success_curve",
    "pulses_to_fraction",
    "terminal_histogram",
    "family_fraction",
    "belief_q",
    "export_tree_dot",
    "export_curve_csv",
    "read_curve_csv",
    "plot_curves",
]

_QUANTUM = 1e-6


@dataclass
class DecisionTreeNode:
    """One merged state in the greedy decision tree.

    ``children`` holds ``(branch probability, child)`` pairs where a child is
    another node, a terminal marker ``("terminal", level index, purity)``, or
    a pruned marker ``("pruned",)``. Probabilities are conditional on
    reaching this node.
    """

    fingerprint: tuple
    state: PopulationState
    action: int
    depth: int
    children: list = field(default_factory=list)
    reach_probability: float = 0.0

    @property
    def is_expanded(self) -> bool:
        return bool(self.children)


@dataclass
class DecisionTree:
    """Extraction result with explicit probability bookkeeping."""

    root: DecisionTreeNode
    nodes: dict                 # fingerprint -> node
    leaf_mass: float            # probability of reaching a terminal marker
    pruned_mass: float          # mass dropped below the pruning floor
    unexpanded_mass: float      # mass stranded at max_depth (partial tree)
    terminal_mass: dict         # level index -> absorbed probability
    expected_depth: float       # leaf-mass weighted pulse count

    @property
    def complete(self) -> bool:
        return self.unexpanded_mass <= 1e-9


def _fingerprint(p: np.ndarray) -> tuple:
    return tuple(np.round(p / _QUANTUM).astype(np.int64))


def extract_decision_tree(mlp: Mlp, env: StatePrepEnv,
                          prune_prob: float = 1e-4,
                          max_depth: int = 200) -> DecisionTree:
    """Breadth-first unroll of the greedy policy through both branches.

    Branch probabilities below ``prune_prob`` are cut and their mass
    recorded; nodes still open at ``max_depth`` leave the tree partial
    (flagged via ``complete``/``unexpanded_mass``).
    """
    if prune_prob < 0:
        raise ValueError("prune_prob must be nonnegative")
    start = env.reset()
    root_fp = _fingerprint(start.p)
    root = DecisionTreeNode(root_fp, start, int(np.argmax(forward(mlp, start.p))) + 1, 0)
    nodes = {root_fp: root}
    leaf_mass = 0.0
    pruned_mass = 0.0
    terminal_mass: dict = {}
    depth_mass = 0.0  # sum over terminals of (absorbed mass * pulse count)

    # Mass flows level by level so that nodes merged across paths (or
    # revisited through loops) are accounted once structurally but carry
    # the full probability that ever reaches them.
    level = {root_fp: 1.0}
    for depth in range(max_depth):
        if not level:
            break
        next_level: dict = {}
        for fp, mass in level.items():
            node = nodes[fp]
            node.reach_probability += mass
            if not node.is_expanded:
                for prob, nxt, _reward, terminated in env.step_branches(node.state, node.action):
                    if nxt is None:
                        continue
                    if prob < prune_prob:
                        node.children.append((prob, ("pruned",)))
                        continue
                    if terminated:
                        idx = int(np.argmax(nxt.p))
                        node.children.append((prob, ("terminal", idx, float(nxt.p.max()))))
                        continue
                    child_fp = _fingerprint(nxt.p)
                    child = nodes.get(child_fp)
                    if child is None:
                        child = DecisionTreeNode(
                            child_fp, nxt,
                            int(np.argmax(forward(mlp, nxt.p))) + 1, depth + 1)
                        nodes[child_fp] = child
                    node.children.append((prob, child))
            for prob, child in node.children:
                flow = mass * prob
                if isinstance(child, DecisionTreeNode):
                    next_level[child.fingerprint] = next_level.get(child.fingerprint, 0.0) + flow
                elif child[0] == "terminal":
                    leaf_mass += flow
                    terminal_mass[child[1]] = terminal_mass.get(child[1], 0.0) + flow
                    depth_mass += flow * (depth + 1)
                else:
                    pruned_mass += flow
        level = next_level

    unexpanded = sum(level.values())
    expected_depth = depth_mass / leaf_mass if leaf_mass > 0 else float("inf")
    total = leaf_mass + pruned_mass + unexpanded
    if abs(total - 1.0) > 1e-6:
        raise RuntimeError(f"tree mass accounting broke: total {total!r}")
    return DecisionTree(root, nodes, leaf_mass, pruned_mass, unexpanded,
                        terminal_mass, expected_depth)


def success_curve(records) -> list:
    """Cumulative finished fraction versus pulse count.

    Returns ``[(pulse count, fraction), ...]`` for counts 1..max length; the
    curve is nondecreasing and ends at the overall finished fraction.
    """
    records = list(records)
    if not records:
        raise ValueError("need at least one episode record")
    horizon = max(r.length for r in records)
    finished = np.zeros(horizon + 1)
    for r in records:
        if r.terminated:
            finished[r.length] += 1
    cum = np.cumsum(finished) / len(records)
    return [(k, float(cum[k])) for k in range(1, horizon + 1)]


def pulses_to_fraction(curve, fraction: float):
    """Smallest pulse count whose cumulative success reaches ``fraction``."""
    for k, f in curve:
        if f >= fraction:
            return k
    return None


def terminal_histogram(records):
    """Counts of terminal level indices and of applied actions.

    Returns ``(per_state, per_action)`` dictionaries; terminal counts sum to
    the number of finished episodes.
    """
    per_state: dict = {}
    per_action: dict = {}
    for r in records:
        for _, action, _, _ in r.transitions:
            per_action[action] = per_action.get(action, 0) + 1
        if r.terminated and r.terminal_state_index is not None:
            idx = r.terminal_state_index
            per_state[idx] = per_state.get(idx, 0) + 1
    return per_state, per_action


def family_fraction(per_state: dict, family_indices) -> float:
    """Fraction of finished episodes ending inside a designated state family."""
    total = sum(per_state.values())
    if total == 0:
        return 0.0
    family = set(family_indices)
    return sum(c for idx, c in per_state.items() if idx in family) / total


def belief_q(belief: np.ndarray, mlp: Mlp) -> np.ndarray:
    """Action values under state uncertainty: sum_s b(s) Q(s, a).

    ``belief`` is a normalized distribution over pure basis states; the
    result is the belief-weighted combination of the per-state Q rows and is
    exactly linear in the belief.
    """
    b = np.asarray(belief, dtype=float)
    if abs(b.sum() - 1.0) > 1e-9 or b.min() < -1e-12:
        raise ValueError("belief must be a normalized distribution")
    n = len(b)
    q = np.zeros(mlp.widths[-1])
    eye = np.eye(n)
    for s in range(n):
        if b[s] != 0.0:
            q += b[s] * forward(mlp, eye[s])
    return q


# --- exports -----------------------------------------------------------------

def export_tree_dot(tree: DecisionTree, path, state_labels=None) -> None:
    """Write the tree as a DOT digraph with probability-labeled edges."""
    ids = {fp: f"n{i}" for i, fp in enumerate(tree.nodes)}
    lines = ["digraph decision_tree {", "  rankdir=TB;"]
    for fp, node in tree.nodes.items():
        top = int(np.argmax(node.state.p))
        label = f"pulse {node.action}\\nmax p[{top}]={node.state.p.max():.3f}"
        lines.append(f'  {ids[fp]} [label="{label}"];')
    term_count = 0
    for fp, node in tree.nodes.items():
        for prob, child in node.children:
            if isinstance(child, DecisionTreeNode):
                lines.append(f'  {ids[fp]} -> {ids[child.fingerprint]} [label="{prob:.4f}"];')
            elif child[0] == "pruned":
                continue
            else:
                _, idx, purity = child
                name = state_labels[idx] if state_labels is not None else str(idx)
                tid = f"t{term_count}"
                term_count += 1
                lines.append(f'  {tid} [shape=box, label="{name}\\npurity {purity:.4f}"];')
                lines.append(f'  {ids[fp]} -> {tid} [label="{prob:.4f}"];')
    lines.append("}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def export_curve_csv(curve, path, header=("pulses", "fraction")) -> None:
    """Write a two-column curve with full float repr for exact round-trips."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for x, y in curve:
            writer.writerow([repr(x), repr(y)])


def read_curve_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [(int(row[0]) if "." not in row[0] else float(row[0]), float(row[1]))
                for row in reader]


def plot_curves(curves: dict, path, xlabel: str = "pulses",
                ylabel: str = "fraction", title: str | None = None) -> None:
    """Render one or more labeled curves to a standalone SVG file."""
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, curve in curves.items():
        xs = [x for x, _ in curve]
        ys = [y for _, y in curve]
        ax.plot(xs, ys, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(curves) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
