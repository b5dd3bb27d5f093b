"""Molecular level structures: Hamiltonian construction, diagonalization,
level-table ingestion, and thermal initial populations.

Energies are stored as E/h in Hz throughout; files use kHz (converted at the
ingestion boundary). The list order of a :class:`LevelTable` is the canonical
basis order for every downstream matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import KB_OVER_H, NUCLEAR_MAGNETON, PLANCK_H

__all__ = [
    "LevelLabel",
    "LevelTable",
    "CahConstants",
    "PopulationState",
    "cah_label",
    "h3o_label",
    "format_label",
    "build_cah_hamiltonian",
    "diagonalize_to_levels",
    "load_level_table",
    "save_level_table",
    "boltzmann_populations",
]

_CAH_KEYS = ("J", "m", "xi")
_H3O_KEYS = ("J", "K", "parity", "m_F", "xi")


@dataclass(frozen=True)
class LevelLabel:
    """A labeled molecular eigenstate.

    ``quantum_numbers`` is an ordered tuple of (name, value) pairs; two label
    conventions are supported:

    * ``(J, m, xi)`` with ``xi`` a sign string ``'+'``/``'-'`` (diatomic
      hyperfine/Zeeman eigenstates),
    * ``(J, K, parity, m_F, xi)`` with ``parity`` a sign string and ``xi`` a
      positive integer ordering states with equal other numbers by energy
      (symmetric-top inversion-rotation eigenstates).
    """

    manifold_id: int
    quantum_numbers: tuple

    def __post_init__(self):
        keys = tuple(k for k, _ in self.quantum_numbers)
        vals = dict(self.quantum_numbers)
        if keys == _CAH_KEYS:
            if vals["xi"] not in ("+", "-"):
                raise ValueError(f"xi must be '+' or '-', got {vals['xi']!r}")
            if abs(vals["m"]) > vals["J"] + 0.5 + 1e-12:
                raise ValueError(f"|m|={abs(vals['m'])} exceeds J+1/2 for J={vals['J']}")
        elif keys == _H3O_KEYS:
            if vals["parity"] not in ("+", "-"):
                raise ValueError(f"parity must be '+' or '-', got {vals['parity']!r}")
            if vals["K"] > vals["J"]:
                raise ValueError(f"K={vals['K']} exceeds J={vals['J']}")
            if not (isinstance(vals["xi"], int) and vals["xi"] >= 1):
                raise ValueError(f"xi must be a positive integer, got {vals['xi']!r}")
        else:
            raise ValueError(f"unrecognized quantum-number set {keys}")

    def __getitem__(self, key):
        return dict(self.quantum_numbers)[key]

    @property
    def keys(self):
        return tuple(k for k, _ in self.quantum_numbers)


def cah_label(manifold_id: int, J: int, m: float, xi: str) -> LevelLabel:
    return LevelLabel(manifold_id, (("J", J), ("m", m), ("xi", xi)))


def h3o_label(manifold_id: int, J: int, K: int, parity: str, m_F: float, xi: int) -> LevelLabel:
    return LevelLabel(
        manifold_id, (("J", J), ("K", K), ("parity", parity), ("m_F", m_F), ("xi", xi))
    )


def format_label(label: LevelLabel) -> str:
    """Canonical compact text form, e.g. ``1,-0.5,-`` or ``2,2,+,1.5,1``."""
    return ",".join(f"{v:g}" if isinstance(v, (int, float)) else str(v)
                    for _, v in label.quantum_numbers)


@dataclass(frozen=True)
class PopulationState:
    """The environment state: a normalized population vector over the level basis."""

    p: np.ndarray
    step_time: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if not np.all(np.isfinite(p)):
            raise ValueError("population vector has non-finite entries")
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-9):
            raise ValueError("population components must lie in [0, 1]")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"population vector not normalized: sum={p.sum()!r}")
        p = np.clip(p, 0.0, 1.0)
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def purity(self) -> float:
        """Largest single-state population."""
        return float(self.p.max())


@dataclass(frozen=True)
class CahConstants:
    """Molecular and field constants for the diatomic hyperfine/Zeeman Hamiltonian.

    ``rotational_constant`` and ``spin_rotation`` are E/h values in Hz; the
    nuclear spin is fixed at 1/2.
    """

    rotational_constant: float  # R, Hz
    g_rot: float  # rotational g-factor
    g_nuc: float  # nuclear g-factor
    spin_rotation: float  # c_IJ, Hz
    b_field: float  # T
    nuclear_magneton: float = NUCLEAR_MAGNETON  # J/T

    def __post_init__(self):
        if self.rotational_constant <= 0:
            raise ValueError("rotational constant must be positive")
        if self.b_field < 0:
            raise ValueError("magnetic field must be nonnegative")


@dataclass(frozen=True)
class LevelTable:
    """Labeled eigenstates with E/h energies (Hz); list order is basis order."""

    labels: tuple
    energies: np.ndarray  # Hz
    vectors: tuple | None = None  # eigenvectors in each manifold's product basis

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        if not np.all(np.isfinite(e)):
            raise ValueError("level energies must be finite")
        if len(self.labels) != e.size:
            raise ValueError("label/energy length mismatch")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate level labels")
        e.setflags(write=False)
        object.__setattr__(self, "energies", e)

    @property
    def n_states(self) -> int:
        return len(self.labels)

    def index(self, label: LevelLabel) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"label {format_label(label)} not in table") from None

    def index_by_text(self, text: str) -> int:
        for i, lab in enumerate(self.labels):
            if format_label(lab) == text:
                return i
        raise KeyError(f"label {text!r} not in table")


# --- CaH+-style Hamiltonian ------------------------------------------------

def _ang_ops(j: float):
    """Jz, J+, J- matrices in the |j, m> basis with m descending from j to -j."""
    ms = np.arange(j, -j - 1, -1.0)
    dim = ms.size
    jz = np.diag(ms)
    jp = np.zeros((dim, dim))
    for k in range(1, dim):
        m = ms[k]
        jp[k - 1, k] = math.sqrt(j * (j + 1) - m * (m + 1))
    return jz, jp, jp.T


def build_cah_hamiltonian(constants: CahConstants, j_manifolds) -> list:
    """Assemble the hyperfine/Zeeman Hamiltonian for each rotational manifold.

    Returns one Hermitian ``(2J+1)*2`` matrix per J, in E/h (Hz) units, over
    the product basis |J, m_J> (x) |m_I> with m_J and m_I descending.
    The implemented operator is

        R J^2 - (g mu_N B / h) J_z - (g_I mu_N B / h) I_z - c_IJ I.J

    for a magnetic field along z and nuclear spin 1/2.
    """
    j_manifolds = list(j_manifolds)
    if not j_manifolds:
        raise ValueError("need at least one J manifold")
    if len(set(j_manifolds)) != len(j_manifolds):
        raise ValueError("duplicate J manifolds")
    if any(j < 0 for j in j_manifolds):
        raise ValueError("J must be nonnegative")

    zeeman_hz = constants.nuclear_magneton * constants.b_field / PLANCK_H
    iz, ip, im = _ang_ops(0.5)
    i2 = np.eye(2)

    out = []
    for j in j_manifolds:
        jz, jp, jm = _ang_ops(float(j))
        dim_j = jz.shape[0]
        ej = np.eye(dim_j)
        j_sq = j * (j + 1) * np.kron(ej, i2)
        h = constants.rotational_constant * j_sq
        h = h - constants.g_rot * zeeman_hz * np.kron(jz, i2)
        h = h - constants.g_nuc * zeeman_hz * np.kron(ej, iz)
        idotj = np.kron(jz, iz) + 0.5 * (np.kron(jp, im) + np.kron(jm, ip))
        h = h - constants.spin_rotation * idotj
        if np.abs(h - h.T.conj()).max() >= 1e-12 * max(1.0, np.abs(h).max()):
            raise RuntimeError("assembled Hamiltonian is not Hermitian")
        out.append(h)
    return out


def _default_xi_rule(block_vectors: np.ndarray) -> list:
    """Assign the sign label within an m block.

    Within a block the eigenvectors are ordered by ascending eigenvalue. For a
    one-state block the label is '-'. For larger blocks the label is the
    relative sign between the largest-|coefficient| component and the other
    nonzero component; if that sign is degenerate across the block (e.g. exact
    B=0 ties leaving basis vectors), fall back to eigenvalue order: '-' first,
    then '+'.
    """
    n = block_vectors.shape[1]
    if n == 1:
        return ["-"]
    signs = []
    for k in range(n):
        v = block_vectors[:, k]
        order = np.argsort(-np.abs(v))
        a, b = v[order[0]], v[order[1]]
        if abs(b) < 1e-12:
            signs.append(None)
        else:
            signs.append("-" if a * b < 0 else "+")
    if None in signs or len(set(signs)) != n:
        signs = ["-", "+"][:n] if n <= 2 else [str(k) for k in range(n)]
    return signs


def diagonalize_to_levels(h_per_manifold, j_manifolds, manifold_ids=None,
                          xi_rule=_default_xi_rule) -> LevelTable:
    """Diagonalize per-manifold Hamiltonians into a labeled level table.

    The total magnetic quantum number m = m_J + m_I is conserved (the
    Hamiltonian is block diagonal over m); eigenstates are labeled |J, m, xi>
    with xi disambiguating states within an m block (see ``_default_xi_rule``).
    Eigenvectors are retained for dipole-coupling contraction.
    """
    j_manifolds = list(j_manifolds)
    if manifold_ids is None:
        manifold_ids = list(range(1, len(j_manifolds) + 1))
    labels, energies, vectors = [], [], []
    for mid, j, h in zip(manifold_ids, j_manifolds, h_per_manifold):
        h = np.asarray(h, dtype=float)
        if np.abs(h - h.T).max() > 1e-9 * max(1.0, np.abs(h).max()):
            raise ValueError("Hamiltonian must be Hermitian")
        mj = np.repeat(np.arange(j, -j - 1, -1.0), 2)
        mi = np.tile([0.5, -0.5], 2 * j + 1)
        m_tot = mj + mi
        # conserved-m audit: off-block elements must vanish
        off = h[np.abs(m_tot[:, None] - m_tot[None, :]) > 1e-9]
        if off.size and np.abs(off).max() > 1e-12 * max(1.0, np.abs(h).max()):
            raise ValueError("Hamiltonian couples different total-m blocks")

        manifold_levels = []
        for m in np.unique(m_tot):
            idx = np.flatnonzero(np.abs(m_tot - m) < 1e-9)
            try:
                vals, vecs = np.linalg.eigh(h[np.ix_(idx, idx)])
            except np.linalg.LinAlgError as exc:
                raise RuntimeError(f"eigensolver failed on m={m} block of J={j}") from exc
            signs = xi_rule(vecs)
            for k, (val, sign) in enumerate(zip(vals, signs)):
                full = np.zeros(h.shape[0])
                full[idx] = vecs[:, k]
                manifold_levels.append((val, cah_label(mid, j, float(m), sign), full))
        manifold_levels.sort(key=lambda t: t[0])
        for val, lab, vec in manifold_levels:
            energies.append(val)
            labels.append(lab)
            vectors.append(vec)
    return LevelTable(tuple(labels), np.array(energies), tuple(vectors))


# --- file ingestion ----------------------------------------------------------

_HEADER = ("manifold_id", "J", "K", "parity", "m", "xi", "energy_kHz")


def load_level_table(path, delimiter: str = "\t") -> LevelTable:
    """Load a level table from delimiter-separated text.

    Columns: manifold_id, J, K (blank for diatomic labels), parity (blank for
    diatomic labels), m, xi, energy in kHz. A header row is required; lines
    starting with '#' are comments. Row order is preserved as basis order.
    """
    labels, energies = [], []
    seen = {}
    with open(path) as fh:
        header = None
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if header is None:
                header = tuple(c.strip() for c in line.split(delimiter))
                if header != _HEADER:
                    raise ValueError(f"bad header {header}, expected {_HEADER}")
                continue
            cols = [c.strip() for c in line.split(delimiter)]
            if len(cols) != len(_HEADER):
                raise ValueError(f"row {lineno}: expected {len(_HEADER)} columns, got {len(cols)}")
            try:
                mid = int(cols[0])
                j = int(cols[1])
                m = float(cols[4])
                e_khz = float(cols[6])
            except ValueError as exc:
                raise ValueError(f"row {lineno}: malformed numeric field: {exc}") from None
            if cols[2] == "" and cols[3] == "":
                label = cah_label(mid, j, m, cols[5])
            else:
                try:
                    k = int(cols[2])
                    xi = int(cols[5])
                except ValueError as exc:
                    raise ValueError(f"row {lineno}: malformed numeric field: {exc}") from None
                label = h3o_label(mid, j, k, cols[3], m, xi)
            if label in seen:
                raise ValueError(f"row {lineno}: duplicate label {format_label(label)} "
                                 f"(first at row {seen[label]})")
            seen[label] = lineno
            labels.append(label)
            energies.append(e_khz * 1e3)
    if header is None or not labels:
        raise ValueError(f"{path}: no level rows found")
    return LevelTable(tuple(labels), np.array(energies))


def save_level_table(table: LevelTable, path, delimiter: str = "\t") -> None:
    with open(path, "w") as fh:
        fh.write(delimiter.join(_HEADER) + "\n")
        for lab, e in zip(table.labels, table.energies):
            d = dict(lab.quantum_numbers)
            if lab.keys == _CAH_KEYS:
                row = [lab.manifold_id, d["J"], "", "", f"{d['m']:g}", d["xi"], repr(float(e) / 1e3)]
            else:
                row = [lab.manifold_id, d["J"], d["K"], d["parity"], f"{d['m_F']:g}",
                       d["xi"], repr(float(e) / 1e3)]
            fh.write(delimiter.join(str(c) for c in row) + "\n")


def boltzmann_populations(table: LevelTable, temperature: float) -> PopulationState:
    """Thermal populations P_j ~ exp(-E_j / (k_B T / h)).

    ``temperature=math.inf`` gives the uniform distribution; ``temperature=0``
    puts all population on the minimum-energy level (ties split equally).
    Energies are offset by the minimum before exponentiation.
    """
    e = table.energies
    if math.isinf(temperature):
        p = np.full(table.n_states, 1.0 / table.n_states)
    elif temperature == 0.0:
        ground = np.abs(e - e.min()) < 1e-9 * max(1.0, abs(e.min()))
        p = ground / ground.sum()
    elif temperature > 0:
        w = np.exp(-(e - e.min()) / (KB_OVER_H * temperature))
        p = w / w.sum()
    else:
        raise ValueError("temperature must be positive (or the 0 / inf limit flags)")
    return PopulationState(p)
