"""Bundled presets: toy model, desk model, and the 130-level dataset."""

import numpy as np
import pytest

from rlqls.constants import TWO_PI
from rlqls.levels import boltzmann_populations
from rlqls.presets import (cah_desk, desk_einstein_table, h3o, load_preset,
                           toy_three_state, toy_transition_matrices)
from rlqls.propagator import compile_library
from rlqls.thermal import bbr_rates


class TestToy:
    def test_thermal_start_is_exact(self):
        bundle = toy_three_state()
        start = boltzmann_populations(bundle.table,
                                      bundle.env_config.initial_temperature)
        assert np.allclose(start.p, [0.6, 0.3, 0.1], atol=1e-12)

    def test_transition_matrices_valid(self):
        for tm in toy_transition_matrices():
            total = tm.A0 + tm.A1
            assert np.abs(total.sum(axis=0) - 1.0).max() < 1e-12
            assert tm.A0.min() >= 0.0 and tm.A1.min() >= 0.0

    def test_two_pulses(self):
        bundle = toy_three_state()
        assert bundle.library.n_actions == 2
        assert len(bundle.durations) == 2


class TestDesk:
    def test_sixteen_states(self):
        bundle = cah_desk()
        assert len(bundle.table.labels) == 16

    def test_library_compiles_to_valid_povm(self):
        bundle = cah_desk()
        tms = compile_library(bundle.library, bundle.table, bundle.trap,
                              step="auto")
        for tm in tms:
            assert np.abs((tm.A0 + tm.A1).sum(axis=0) - 1.0).max() < 1e-6

    def test_einstein_table_connected_and_valid(self):
        bundle = cah_desk()
        tab = bundle.einstein
        assert tab is not None
        # every J = 2 level decays; the generator then has a unique stationary
        # state, which for detailed-balance rates is the Boltzmann vector
        uppers = {u for u, _, _ in tab.entries}
        j2 = {i for i, lab in enumerate(bundle.table.labels) if lab["J"] == 2}
        assert uppers == j2
        gen = bbr_rates(tab, bundle.table, 300.0)
        stat = boltzmann_populations(bundle.table, 300.0).p
        assert np.abs(gen.G @ stat).max() < 1e-12 * np.abs(gen.G).max()

    def test_absorbing_state_has_no_outgoing_pulse(self):
        bundle = cah_desk()
        sources = {i for p in bundle.library.pulses for i, _ in p.transitions}
        # the stretched state of the lowest manifold is never a pulse source
        j1 = [i for i, lab in enumerate(bundle.table.labels) if lab["J"] == 1]
        stretched = max(j1, key=lambda i: bundle.table.labels[i]["m"])
        assert stretched not in sources

    def test_larger_manifolds(self):
        bundle = cah_desk(j_manifolds=(2, 3))
        assert len(bundle.table.labels) == 24


@pytest.fixture(scope="module")
def bundle():
    return h3o()


class TestH3o:
    def test_level_count(self, bundle):
        assert len(bundle.table.labels) == 130

    def test_pulse_count(self, bundle):
        assert bundle.library.n_actions == 273

    def test_rates_in_expected_band(self, bundle):
        rates = [p.rabi_rate for p in bundle.library.pulses]
        assert min(rates) >= TWO_PI * 100.0  # weak-drive floor
        assert max(rates) < TWO_PI * 1e5

    def test_energies_sorted_within_manifolds(self, bundle):
        labels = bundle.table.labels
        energies = bundle.table.energies
        by_manifold: dict = {}
        for lab, e in zip(labels, energies):
            by_manifold.setdefault((lab.manifold_id, lab["m_F"]), []).append(e)
        for es in by_manifold.values():
            assert es == sorted(es)


class TestLoadPreset:
    def test_names(self):
        assert load_preset("synthetic").name == "synthetic"
        assert load_preset("cah_desk").name == "cah_desk"

    def test_unknown_rejected(self):
        with pytest.raises(ValueError, match="unknown preset"):
            load_preset("nope")

    def test_kwargs_forwarded(self):
        bundle = load_preset("cah_desk", overlap_penalty=2.0)
        assert bundle.env_config.overlap_penalty == 2.0
