"""Black-body radiation: Planck density, rate generators, propagation."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlqls.constants import BOLTZMANN_K, HBAR, KB_OVER_H, SPEED_OF_LIGHT, TWO_PI
from rlqls.levels import LevelTable, PopulationState, cah_label
from rlqls.pulses import PulseLibrary, PulseSpec
from rlqls.thermal import (BbrGenerator, EinsteinTable, bbr_propagate,
                           bbr_rates, load_einstein_table,
                           planck_energy_density, purity_degradation_bounds)


def _table(energies):
    labels = tuple(cah_label(1, 3, -3.5 + k, "-") for k in range(len(energies)))
    return LevelTable(labels, np.array(energies, dtype=float))


def _boltzmann(energies, t):
    w = np.exp(-np.asarray(energies) / (KB_OVER_H * t))
    return w / w.sum()


class TestPlanck:
    def test_zero_temperature(self):
        assert planck_energy_density(1e12, 0.0) == 0.0

    def test_rejects_nonpositive_omega(self):
        with pytest.raises(ValueError):
            planck_energy_density(0.0, 300.0)

    def test_rayleigh_jeans_limit(self):
        t = 300.0
        omega = 0.01 * BOLTZMANN_K * t / HBAR  # hbar w / kT = 0.01
        rj = omega ** 2 * BOLTZMANN_K * t / (math.pi ** 2 * SPEED_OF_LIGHT ** 3)
        assert planck_energy_density(omega, t) == pytest.approx(rj, rel=0.01)

    def test_strictly_increasing_in_temperature(self):
        omega = 1e12
        vals = [planck_energy_density(omega, t) for t in (10, 100, 300, 1000)]
        assert all(a < b for a, b in zip(vals, vals[1:]))


class TestGeneratorType:
    def test_rejects_negative_off_diagonal(self):
        g = np.array([[-1.0, -0.5], [1.0, 0.5]])
        with pytest.raises(ValueError, match="nonnegative"):
            BbrGenerator(g, 300.0, 1e-5)

    def test_rejects_nonzero_column_sums(self):
        g = np.array([[-1.0, 0.0], [0.9, 0.0]])
        with pytest.raises(ValueError, match="sum"):
            BbrGenerator(g, 300.0, 1e-5)


class TestBbrRates:
    def test_zero_temperature_spontaneous_only(self):
        table = _table([0.0, 1e11])
        gen = bbr_rates(EinsteinTable(((1, 0, 2.0),)), table, 0.0)
        assert gen.G[0, 1] == pytest.approx(2.0)  # decay only
        assert gen.G[1, 0] == 0.0  # no absorption at T = 0

    def test_two_level_stationary_is_boltzmann(self):
        energies = [0.0, 3e11]
        table = _table(energies)
        gen = bbr_rates(EinsteinTable(((1, 0, 5.0),)), table, 200.0)
        # stationary distribution from the null space
        w, v = np.linalg.eig(gen.G)
        k = np.argmin(np.abs(w))
        stat = np.real(v[:, k])
        stat = stat / stat.sum()
        assert np.abs(stat - _boltzmann(energies, 200.0)).max() < 1e-10

    def test_columns_sum_to_zero(self):
        table = _table([0.0, 1e11, 3e11])
        gen = bbr_rates(EinsteinTable(((1, 0, 1.0), (2, 1, 2.0), (2, 0, 0.5))),
                        table, 300.0)
        assert np.abs(gen.G.sum(axis=0)).max() < 1e-12 * np.abs(gen.G).max()

    def test_detailed_balance(self):
        energies = [0.0, 2e11, 5e11]
        table = _table(energies)
        gen = bbr_rates(EinsteinTable(((1, 0, 1.0), (2, 1, 2.0), (2, 0, 0.5))),
                        table, 250.0)
        for upper, lower in ((1, 0), (2, 1), (2, 0)):
            up = gen.G[upper, lower]
            down = gen.G[lower, upper]
            gap = energies[upper] - energies[lower]
            assert up / down == pytest.approx(
                math.exp(-gap / (KB_OVER_H * 250.0)), rel=1e-10)

    def test_rejects_zero_frequency(self):
        table = _table([0.0, 0.0])
        tab = EinsteinTable(((1, 0, 1.0),))
        with pytest.raises(ValueError):
            bbr_rates(tab, table, 300.0)

    def test_rejects_inverted_entry(self):
        table = _table([0.0, 1e11])
        with pytest.raises(ValueError, match="not higher"):
            bbr_rates(EinsteinTable(((0, 1, 1.0),)), table, 300.0)


class TestPropagate:
    def _gen(self, a=5.0, gap=3e11, t=200.0):
        table = _table([0.0, gap])
        return table, bbr_rates(EinsteinTable(((1, 0, a),)), table, t)

    def test_zero_duration_identity(self):
        table, gen = self._gen()
        s = PopulationState(np.array([0.3, 0.7]))
        assert bbr_propagate(s, gen, 0.0) is s

    def test_converges_to_boltzmann(self):
        table, gen = self._gen()
        s = PopulationState(np.array([1.0, 0.0]))
        out = bbr_propagate(s, gen, 10.0 / np.abs(np.diag(gen.G)).min())
        assert np.abs(out.p - _boltzmann([0.0, 3e11], 200.0)).sum() < 1e-4

    def test_norm_conserved(self):
        table, gen = self._gen()
        rng = np.random.default_rng(0)
        for _ in range(5):
            p = rng.dirichlet(np.ones(2))
            out = bbr_propagate(PopulationState(p), gen, 1.0)
            assert abs(out.p.sum() - 1.0) < 1e-12

    def test_permutation_equivariance(self):
        energies = [0.0, 2e11, 5e11]
        entries = ((1, 0, 1.0), (2, 1, 2.0), (2, 0, 0.5))
        table = _table(energies)
        gen = bbr_rates(EinsteinTable(entries), table, 300.0)
        perm = np.array([2, 0, 1])  # new[i] = old[perm[i]]
        table_p = _table([energies[i] for i in perm])
        inv = np.argsort(perm)
        entries_p = tuple((int(inv[u]), int(inv[l]), a) for u, l, a in entries)
        gen_p = bbr_rates(EinsteinTable(entries_p), table_p, 300.0)
        p = np.array([0.5, 0.3, 0.2])
        out = bbr_propagate(PopulationState(p), gen, 0.01)
        out_p = bbr_propagate(PopulationState(p[perm]), gen_p, 0.01)
        assert np.allclose(out.p[perm], out_p.p, atol=1e-12)

    def test_auto_halving_warns(self):
        table = _table([0.0, 3e11])
        g = np.array([[-100.0, 0.0], [100.0, 0.0]])
        gen = BbrGenerator(g, 0.0, dt=0.1)  # step matrix has negative entries
        with pytest.warns(UserWarning, match="halving"):
            out = bbr_propagate(PopulationState(np.array([0.0, 1.0])), gen, 0.2)
        assert out.p.sum() == pytest.approx(1.0)

    def test_dimension_mismatch(self):
        _, gen = self._gen()
        with pytest.raises(ValueError):
            bbr_propagate(PopulationState(np.array([1.0, 0.0, 0.0])), gen, 1.0)


class TestDegradationBounds:
    def _library(self, durations):
        pulses = tuple(
            PulseSpec(id=k + 1, transitions=((0, 1),), laser_frequency=1e9,
                      rabi_rate=1e4, duration=d)
            for k, d in enumerate(durations))
        return PulseLibrary(pulses)

    def test_zero_generator(self):
        table = _table([0.0, 3e11])
        gen = BbrGenerator(np.zeros((2, 2)), 0.0, 1e-5)
        lo, hi = purity_degradation_bounds(table, gen, self._library([1e-3, 2e-3]))
        assert lo == 0.0 and hi == 0.0

    def test_longer_exposure_degrades_more(self):
        table = _table([0.0, 3e11])
        gen = bbr_rates(EinsteinTable(((1, 0, 50.0),)), table, 300.0)
        at_longest, at_shortest = purity_degradation_bounds(
            table, gen, self._library([1e-3, 5e-3]))
        assert at_longest >= at_shortest

    def test_two_level_closed_form(self):
        # pure decay at rate r for duration D: upper-state purity e^{-rD}
        r, d = 1.0, 0.01
        table = _table([0.0, 3e11])
        g = np.array([[0.0, r], [0.0, -r]])
        gen = BbrGenerator(g, 0.0, dt=1e-8)
        at_longest, _ = purity_degradation_bounds(table, gen, self._library([d]))
        assert at_longest == pytest.approx(1.0 - math.exp(-r * d), abs=1e-6)

    def test_empty_library_rejected(self):
        table = _table([0.0, 3e11])
        gen = BbrGenerator(np.zeros((2, 2)), 0.0, 1e-5)
        with pytest.raises(ValueError):
            purity_degradation_bounds(table, gen, PulseLibrary(()))


class TestEinsteinFile:
    def test_load_by_labels(self, tmp_path):
        table = _table([0.0, 3e11])
        path = tmp_path / "einstein.tsv"
        path.write_text("# upper lower A\n3,-2.5,-\t3,-3.5,-\t2.5\n")
        tab = load_einstein_table(path, table)
        assert tab.entries == ((1, 0, 2.5),)

    def test_unknown_label_rejected(self, tmp_path):
        table = _table([0.0, 3e11])
        path = tmp_path / "einstein.tsv"
        path.write_text("9,9.5,-\t1,-3.5,-\t2.5\n")
        with pytest.raises(ValueError, match="unknown level"):
            load_einstein_table(path, table)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=1.0, max_value=500.0),
       st.floats(min_value=1e10, max_value=1e12))
def test_detailed_balance_property(temperature, gap):
    table = _table([0.0, gap])
    gen = bbr_rates(EinsteinTable(((1, 0, 1.0),)), table, temperature)
    ratio = gen.G[1, 0] / gen.G[0, 1]
    assert ratio == pytest.approx(math.exp(-gap / (KB_OVER_H * temperature)), rel=1e-10)
