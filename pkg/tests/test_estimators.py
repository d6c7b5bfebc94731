"""Estimator contracts: output invariants, determinism, and sanity of ranking."""

import numpy as np
import pytest

from sourceset.diffusion import (
    INFECTED,
    GenerativeConfig,
    LabeledSample,
    SirParams,
    SnapshotMatrix,
    observe,
    sample_dataset,
    simulate,
)
from sourceset.estimators import (
    PROB_FLOOR,
    build_estimator,
    estimate_heuristic,
    estimate_monte_carlo,
    estimate_oracle,
    load_prob_vectors,
    save_prob_vectors,
    validate_prob_vector,
)
from sourceset.graph import barabasi_albert_graph, build_graph, complete_graph
from sourceset.util import substream


def path_graph(n):
    return build_graph(n, [(i, i + 1) for i in range(n - 1)])


def snapshot(statuses, times):
    return SnapshotMatrix(statuses=np.asarray(statuses, dtype=np.int8),
                          times=np.asarray(times, dtype=np.int64))


def random_samples(graph, n, seed, **gen_overrides):
    values = dict(source_count=(1, 3), r0=None, sigma_inf=(0.1, 0.4),
                  sigma_rec=(0.0, 0.3), n_snapshots=4, t_first=2)
    values.update(gen_overrides)
    return sample_dataset(graph, GenerativeConfig(**values), n, seed)


def average_ranks(values):
    """Ranks with ties averaged, ascending."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = np.asarray(values)[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0
        i = j + 1
    return ranks


def spearman(a, b):
    ra, rb = average_ranks(a), average_ranks(b)
    return float(np.corrcoef(ra, rb)[0, 1])


class TestHeuristic:
    def test_all_susceptible_gives_floor_everywhere(self):
        g = complete_graph(5)
        x = snapshot(np.zeros((5, 3)), [1, 2, 3])
        probs = estimate_heuristic(x, g)
        assert np.all(probs == PROB_FLOOR)

    def test_single_infected_node_dominates(self):
        g = barabasi_albert_graph(20, 2, seed=1)
        statuses = np.zeros((20, 2), dtype=np.int8)
        statuses[7, :] = INFECTED
        probs = estimate_heuristic(snapshot(statuses, [1, 2]), g)
        assert np.argmax(probs) == 7
        assert np.sum(probs == probs[7]) == 1

    def test_later_first_sight_scores_lower(self):
        g = path_graph(6)
        statuses = np.zeros((6, 3), dtype=np.int8)
        statuses[0, :] = INFECTED          # seen from the first snapshot
        statuses[1, 1:] = INFECTED         # appears one snapshot later
        probs = estimate_heuristic(snapshot(statuses, [1, 2, 3]), g)
        assert probs[0] > probs[1] > PROB_FLOOR

    def test_beats_random_scorer_at_ranking_sources(self):
        g = barabasi_albert_graph(100, 2, seed=3)
        samples = random_samples(g, 500, seed=21, source_count=1,
                                 sigma_inf=(0.1, 0.2))
        top = max(1, g.n_nodes // 10)
        heuristic_hits = 0
        random_hits = 0
        for i, s in enumerate(samples):
            probs = estimate_heuristic(s.x, g)
            rand = substream(99, i).random(g.n_nodes)
            src = int(s.sources[0])
            for scores, bump in ((probs, "h"), (rand, "r")):
                order = np.argsort(-scores, kind="stable")
                hit = src in set(order[:top].tolist())
                if bump == "h":
                    heuristic_hits += hit
                else:
                    random_hits += hit
        assert heuristic_hits > random_hits

    def test_output_contract_fuzz(self):
        g = barabasi_albert_graph(30, 2, seed=5)
        rng = np.random.default_rng(0)
        for _ in range(200):
            m = int(rng.integers(1, 5))
            statuses = np.minimum(np.cumsum(
                rng.integers(0, 2, size=(30, m)), axis=1), 2).astype(np.int8)
            x = snapshot(statuses, np.arange(1, m + 1))
            validate_prob_vector(estimate_heuristic(x, g), 30)


class TestMonteCarlo:
    def test_deterministic_spread_gives_fitness_one(self):
        g = path_graph(7)
        params = SirParams(sigma_inf=1.0, sigma_rec=0.0, horizon=4)
        traj = simulate(g, params, [3], seed=0)
        x = observe(traj, t_first=1, n_snapshots=3)
        probs = estimate_monte_carlo(x, g, params, k_sims=5, seed=4)
        assert probs[3] == pytest.approx(1.0)
        assert np.argmax(probs) == 3

    def test_disconnected_candidate_gets_floor(self):
        # two components; observed spread lives in the first one
        edges = [(0, 1), (1, 2), (3, 4), (4, 5)]
        g = build_graph(6, edges)
        params = SirParams(sigma_inf=1.0, sigma_rec=0.0, horizon=3)
        statuses = np.zeros((6, 2), dtype=np.int8)
        statuses[[0, 1, 2], :] = INFECTED
        statuses[3, :] = INFECTED  # implausible candidate in the other component
        probs = estimate_monte_carlo(snapshot(statuses, [1, 2]), g, params,
                                     k_sims=10, seed=1)
        assert probs[3] < probs[0]
        assert probs[5] == PROB_FLOOR  # never a candidate

    def test_seed_stability_spearman(self):
        g = barabasi_albert_graph(50, 2, seed=7)
        params = SirParams(sigma_inf=0.3, sigma_rec=0.1, horizon=6)
        traj = simulate(g, params, [11], seed=2)
        x = observe(traj, t_first=2, n_snapshots=4)
        a = estimate_monte_carlo(x, g, params, k_sims=200, seed=100)
        b = estimate_monte_carlo(x, g, params, k_sims=200, seed=200)
        assert spearman(a, b) > 0.8

    def test_deterministic_per_seed(self):
        g = barabasi_albert_graph(25, 2, seed=7)
        params = SirParams(sigma_inf=0.3, sigma_rec=0.1, horizon=5)
        traj = simulate(g, params, [4], seed=2)
        x = observe(traj, t_first=1, n_snapshots=4)
        a = estimate_monte_carlo(x, g, params, k_sims=20, seed=5)
        b = estimate_monte_carlo(x, g, params, k_sims=20, seed=5)
        assert np.array_equal(a, b)

    def test_output_contract(self):
        g = barabasi_albert_graph(25, 2, seed=9)
        samples = random_samples(g, 20, seed=31)
        for s in samples:
            probs = estimate_monte_carlo(s.x, g, s.params, k_sims=3, seed=s.index)
            validate_prob_vector(probs, 25)


class TestOracle:
    def make_sample(self, n=20, sources=(3, 8)):
        statuses = np.zeros((n, 1), dtype=np.int8)
        x = snapshot(statuses, [1])
        return LabeledSample(index=0, x=x,
                             sources=np.asarray(sources, dtype=np.int64),
                             params=SirParams(0.5, 0.0, horizon=1))

    def test_noise_zero_is_indicator(self):
        s = self.make_sample()
        probs = estimate_oracle(s, noise=0.0, seed=1)
        assert np.all(probs[list(s.sources)] == 1.0)
        mask = np.ones(20, dtype=bool)
        mask[list(s.sources)] = False
        assert np.all(probs[mask] == 0.0)

    def test_noise_one_ignores_sources(self):
        s = self.make_sample()
        probs = estimate_oracle(s, noise=1.0, seed=1)
        expected = substream(1).random(20)
        assert np.array_equal(probs, expected)

    def test_intermediate_noise_between_extremes(self):
        s = self.make_sample()
        src = list(s.sources)
        separations = []
        for noise in (0.0, 0.5, 1.0):
            probs = estimate_oracle(s, noise=noise, seed=3)
            non_src = np.delete(probs, src)
            separations.append(float(probs[src].min() - non_src.max()))
        assert separations[0] > separations[1] > separations[2]

    def test_noise_validation(self):
        s = self.make_sample()
        with pytest.raises(ValueError):
            estimate_oracle(s, noise=1.5, seed=0)


class TestProbVectorFiles:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        table = {0: rng.random(6), 3: rng.random(6)}
        path = tmp_path / "probs.txt"
        save_prob_vectors(table, 6, path)
        loaded = load_prob_vectors(path)
        assert set(loaded) == {0, 3}
        for k in table:
            assert np.array_equal(loaded[k], table[k])

    def test_file_estimator_lookup(self, tmp_path):
        g = complete_graph(6)
        rng = np.random.default_rng(4)
        table = {0: rng.random(6)}
        path = tmp_path / "probs.txt"
        save_prob_vectors(table, 6, path)
        est = build_estimator(f"file:{path}", g)
        statuses = np.zeros((6, 1), dtype=np.int8)
        sample = LabeledSample(index=0, x=snapshot(statuses, [1]),
                               sources=np.array([0]),
                               params=SirParams(0.5, 0.0, horizon=1))
        assert np.array_equal(est(sample, None), table[0])
        missing = LabeledSample(index=7, x=sample.x, sources=sample.sources,
                                params=sample.params)
        with pytest.raises(KeyError):
            est(missing, None)


class TestBuildEstimator:
    def test_known_specs(self):
        g = complete_graph(5)
        for spec in ("heuristic", "oracle:0.5", "mc:3"):
            assert callable(build_estimator(spec, g))
        with pytest.raises(ValueError):
            build_estimator("gnn", g)

    def test_validate_prob_vector_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            validate_prob_vector(np.array([0.1, 1.4]))
        with pytest.raises(ValueError):
            validate_prob_vector(np.array([0.0, 0.0]))
        with pytest.raises(ValueError):
            validate_prob_vector(np.array([0.5, 0.5]), 3)
