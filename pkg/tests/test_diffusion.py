"""Simulator laws, snapshot windows, and dataset generation."""

import numpy as np
import pytest

from sourceset.diffusion import (
    INFECTED,
    RECOVERED,
    SUSCEPTIBLE,
    GenerativeConfig,
    SirParams,
    auto_first_observation,
    load_dataset,
    observe,
    sample_dataset,
    save_dataset,
    simulate,
)
from sourceset.graph import build_graph, complete_graph, barabasi_albert_graph


def star_forest(n_stars, leaves):
    """Disjoint stars: center i at index i*(leaves+1), leaves after it."""
    edges = []
    for s in range(n_stars):
        center = s * (leaves + 1)
        edges += [(center, center + 1 + j) for j in range(leaves)]
    return build_graph(n_stars * (leaves + 1), edges), leaves + 1


def three_sigma_band(p, trials):
    return 3.0 * np.sqrt(p * (1.0 - p) / trials)


class TestSirParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            SirParams(sigma_inf=0.0, sigma_rec=0.1)
        with pytest.raises(ValueError):
            SirParams(sigma_inf=1.2, sigma_rec=0.1)
        with pytest.raises(ValueError):
            SirParams(sigma_inf=0.5, sigma_rec=1.0)

    def test_from_r0_derivation(self):
        p = SirParams.from_r0(r0=5.0, sigma_rec=0.2, lambda1=4.0)
        assert p.sigma_inf == pytest.approx(0.25)
        assert p.r0 == 5.0

    def test_from_r0_out_of_range(self):
        with pytest.raises(ValueError):
            SirParams.from_r0(r0=50.0, sigma_rec=0.5, lambda1=2.0)
        with pytest.raises(ValueError):
            SirParams.from_r0(r0=5.0, sigma_rec=0.0, lambda1=4.0)


class TestSimulate:
    def test_sources_infected_at_time_zero(self):
        g = complete_graph(6)
        traj = simulate(g, SirParams(0.3, 0.1, horizon=4), [1, 4], seed=0)
        start = traj.statuses[0]
        assert set(np.flatnonzero(start == INFECTED)) == {1, 4}
        assert np.all(start[[0, 2, 3, 5]] == SUSCEPTIBLE)

    def test_no_infected_neighbor_means_no_infection(self):
        # two components: infection cannot jump the gap
        g = build_graph(4, [(0, 1), (2, 3)])
        traj = simulate(g, SirParams(1.0, 0.0, horizon=6), [0], seed=3)
        assert np.all(traj.statuses[:, 2] == SUSCEPTIBLE)
        assert np.all(traj.statuses[:, 3] == SUSCEPTIBLE)

    def test_single_contact_infection_frequency(self):
        # one infected leaf per star: center catches it w.p. sigma_inf
        trials = 100_000
        for sigma in (0.1, 0.25):
            g, block = star_forest(trials, 1)
            sources = np.arange(trials) * block + 1
            traj = simulate(g, SirParams(sigma, 0.0, horizon=1), sources, seed=42)
            centers = np.arange(trials) * block
            freq = np.mean(traj.statuses[1, centers] == INFECTED)
            assert abs(freq - sigma) <= three_sigma_band(sigma, trials)

    def test_recovery_frequency(self):
        trials = 100_000
        sigma_rec = 0.3
        g = build_graph(trials, [])
        traj = simulate(g, SirParams(0.5, sigma_rec, horizon=1),
                        np.arange(trials), seed=9)
        freq = np.mean(traj.statuses[1] == RECOVERED)
        assert abs(freq - sigma_rec) <= three_sigma_band(sigma_rec, trials)

    def test_si_never_recovers(self):
        g = barabasi_albert_graph(30, 2, seed=1)
        for seed in range(50):
            traj = simulate(g, SirParams(0.4, 0.0, horizon=15), [seed % 30], seed=seed)
            assert not np.any(traj.statuses == RECOVERED)

    def test_statuses_monotone_per_node(self):
        g = barabasi_albert_graph(40, 2, seed=5)
        for seed in range(30):
            traj = simulate(g, SirParams(0.3, 0.2, horizon=12), [0, 7], seed=seed)
            diffs = np.diff(traj.statuses.astype(np.int16), axis=0)
            assert np.all(diffs >= 0)
            # S -> R in one step is illegal
            before = traj.statuses[:-1]
            after = traj.statuses[1:]
            assert not np.any((before == SUSCEPTIBLE) & (after == RECOVERED))

    def test_new_infections_have_infected_neighbor(self):
        g = barabasi_albert_graph(40, 2, seed=6)
        traj = simulate(g, SirParams(0.5, 0.1, horizon=10), [3], seed=11)
        for t in range(1, traj.horizon + 1):
            fresh = np.flatnonzero((traj.statuses[t] == INFECTED)
                                   & (traj.statuses[t - 1] == SUSCEPTIBLE))
            for v in fresh:
                assert np.any(traj.statuses[t - 1][g.neighbors(v)] == INFECTED)

    def test_deterministic_per_seed(self):
        g = barabasi_albert_graph(25, 2, seed=2)
        a = simulate(g, SirParams(0.3, 0.1, horizon=8), [1], seed=77)
        b = simulate(g, SirParams(0.3, 0.1, horizon=8), [1], seed=77)
        assert np.array_equal(a.statuses, b.statuses)

    def test_rejects_bad_sources(self):
        g = complete_graph(4)
        with pytest.raises(ValueError):
            simulate(g, SirParams(0.5, 0.0, horizon=2), [], seed=0)
        with pytest.raises(ValueError):
            simulate(g, SirParams(0.5, 0.0, horizon=2), [9], seed=0)


class TestObserve:
    def test_single_snapshot_equals_trajectory_column(self):
        g = complete_graph(8)
        traj = simulate(g, SirParams(0.4, 0.1, horizon=5), [2], seed=1)
        x = observe(traj, t_first=1, n_snapshots=1)
        assert np.array_equal(x.statuses[:, 0], traj.statuses[1])
        assert x.times.tolist() == [1]

    def test_default_window_matches_protocol(self):
        g = complete_graph(5)
        traj = simulate(g, SirParams(0.4, 0.1, horizon=40), [0], seed=1)
        x = observe(traj, t_first=2)
        assert x.n_snapshots == 16
        assert x.times.tolist() == list(range(2, 18))

    def test_window_beyond_horizon_rejected(self):
        g = complete_graph(5)
        traj = simulate(g, SirParams(0.4, 0.1, horizon=10), [0], seed=1)
        with pytest.raises(ValueError):
            observe(traj, t_first=2, n_snapshots=16)
        with pytest.raises(ValueError):
            observe(traj, t_first=0, n_snapshots=1)

    def test_columns_monotone_over_many_trajectories(self):
        g = barabasi_albert_graph(30, 2, seed=3)
        for seed in range(1000):
            traj = simulate(g, SirParams(0.35, 0.25, horizon=9), [seed % 30],
                            seed=seed)
            x = observe(traj, t_first=1, n_snapshots=5, stride=2)
            assert np.all(np.diff(x.statuses.astype(np.int16), axis=1) >= 0)


class TestAutoFirstObservation:
    def test_rule(self):
        assert auto_first_observation(1, None) == 2
        assert auto_first_observation(1, 40.0) == 2
        assert auto_first_observation(5, 7.0) == 2
        assert auto_first_observation(5, 20.0) == 1
        assert auto_first_observation(5, None) == 1


class TestSampleDataset:
    def gen(self, **overrides):
        values = dict(source_count=(1, 5), r0=(1.0, 8.0), sigma_rec=(0.1, 0.4),
                      horizon=40, n_snapshots=6, stride=1)
        values.update(overrides)
        return GenerativeConfig(**values)

    def test_zero_samples(self):
        g = complete_graph(10)
        assert sample_dataset(g, self.gen(), 0, seed=1) == []

    def test_deterministic_rerun_byte_identical(self, tmp_path):
        g = barabasi_albert_graph(40, 2, seed=1)
        config = {"note": "determinism check"}
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_dataset(sample_dataset(g, self.gen(), 20, seed=5), p1, 5, config)
        save_dataset(sample_dataset(g, self.gen(), 20, seed=5), p2, 5, config)
        assert p1.read_bytes() == p2.read_bytes()

    def test_samples_respect_config(self):
        g = barabasi_albert_graph(40, 2, seed=1)
        samples = sample_dataset(g, self.gen(), 30, seed=7)
        for s in samples:
            assert 1 <= s.sources.size <= 5
            assert 0.1 <= s.params.sigma_rec <= 0.4
            assert 1.0 <= s.params.r0 <= 8.0
            assert s.x.n_snapshots == 6
            # r0 range sits inside [1, 15], so observation starts at 2
            assert s.x.times[0] == 2

    def test_t_first_rule_applied_per_sample(self):
        # dense graph so fast r0 values still give sigma_inf <= 1
        g = complete_graph(40)
        fast = self.gen(r0=(20.0, 25.0), source_count=(3, 5))
        for s in sample_dataset(g, fast, 10, seed=3):
            assert s.x.times[0] == 1
        single = self.gen(r0=(20.0, 25.0), source_count=1)
        for s in sample_dataset(g, single, 10, seed=3):
            assert s.x.times[0] == 2

    def test_derived_sigma_inf_out_of_range_is_parameter_error(self):
        g = barabasi_albert_graph(40, 2, seed=1)
        with pytest.raises(ValueError, match="sigma_inf"):
            sample_dataset(g, self.gen(r0=(25.0, 25.0)), 10, seed=3)

    def test_si_mode_with_fixed_sigma_inf(self):
        g = barabasi_albert_graph(40, 2, seed=1)
        gen = self.gen(r0=None, sigma_inf=0.25, sigma_rec=0.0)
        samples = sample_dataset(g, gen, 10, seed=2)
        for s in samples:
            assert s.params.sigma_inf == 0.25
            assert s.params.r0 is None
            assert not np.any(s.x.statuses == RECOVERED)

    def test_source_count_exceeding_nodes_rejected(self):
        g = complete_graph(4)
        with pytest.raises(ValueError):
            sample_dataset(g, self.gen(source_count=(1, 10)), 5, seed=1)

    def test_roundtrip_through_file(self, tmp_path):
        g = barabasi_albert_graph(30, 2, seed=1)
        samples = sample_dataset(g, self.gen(), 12, seed=9)
        path = tmp_path / "data.jsonl"
        save_dataset(samples, path, 9, {"graph_spec": "ba:30,2"})
        loaded, header = load_dataset(path)
        assert header["config"]["graph_spec"] == "ba:30,2"
        assert len(loaded) == len(samples)
        for a, b in zip(samples, loaded):
            assert a.index == b.index
            assert np.array_equal(a.sources, b.sources)
            assert np.array_equal(a.x.statuses, b.x.statuses)
            assert np.array_equal(a.x.times, b.x.times)
            assert a.params.sigma_inf == b.params.sigma_inf
            assert a.params.sigma_rec == b.params.sigma_rec

    def test_config_requires_exactly_one_rate_spec(self):
        with pytest.raises(ValueError):
            GenerativeConfig(r0=None, sigma_inf=None)
        with pytest.raises(ValueError):
            GenerativeConfig(r0=(1, 2), sigma_inf=(0.1, 0.2))
