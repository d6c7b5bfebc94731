"""End-to-end evaluation harness: repeated splits, inclusion rates, CSV reports.

Each trial draws a fresh pooled dataset, splits it uniformly at random into
calibration and test halves (pool-then-split keeps the halves exchangeable by
construction), calibrates one threshold per (score, alpha, beta) cell, and
evaluates inclusion (recall >= 1-beta) and set size on the test half. Results
aggregate over trials with mean and standard error.

Substream layout under the master seed:
    (0, trial, i)  dataset sample i of a trial
    (1, trial)     calibration/test split permutation
    (2, trial, i)  estimator randomness for sample i
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from sourceset import conformal
from sourceset.conformal import NominalLevels, SCORE_KINDS, required_hits
from sourceset.diffusion import GenerativeConfig, sample_dataset
from sourceset.estimators import build_estimator
from sourceset.graph import Graph, graph_from_spec, spectral_radius
from sourceset.util import config_hash, substream, VERSION, TOOL_NAME

_STREAM_DATA, _STREAM_SPLIT, _STREAM_EST = 0, 1, 2


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to run one repeated-splits experiment.

    Defaults mirror the full-scale evaluation protocol (7600 calibration /
    400 test samples over 50 splits); `desk_scale` is the fast preset used
    by the acceptance suite.
    """

    graph_spec: str
    generative: GenerativeConfig
    alphas: tuple[float, ...] = (0.05, 0.1, 0.15)
    betas: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7)
    score_kinds: tuple[str, ...] = SCORE_KINDS
    estimator: str = "heuristic"
    n_cal: int = 7600
    n_test: int = 400
    n_trials: int = 50
    seed: int = 0
    graph_seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.n_cal < 1 or self.n_test < 1 or self.n_trials < 1:
            raise ValueError("n_cal, n_test and n_trials must all be >= 1")
        if not self.alphas or not self.betas:
            raise ValueError("need at least one alpha and one beta")
        for kind in self.score_kinds:
            if kind not in SCORE_KINDS:
                raise ValueError(f"unknown score kind {kind!r}")
        # fail fast on invalid levels
        for a in self.alphas:
            for b in self.betas:
                NominalLevels(alpha=a, beta=b)

    @classmethod
    def desk_scale(cls, graph_spec: str, generative: GenerativeConfig,
                   **overrides) -> "ExperimentConfig":
        values = dict(n_cal=500, n_test=200, n_trials=100)
        values.update(overrides)
        return cls(graph_spec=graph_spec, generative=generative, **values)

    def to_dict(self) -> dict:
        return {
            "graph_spec": self.graph_spec,
            "generative": self.generative.to_dict(),
            "alphas": list(self.alphas),
            "betas": list(self.betas),
            "score_kinds": list(self.score_kinds),
            "estimator": self.estimator,
            "n_cal": self.n_cal,
            "n_test": self.n_test,
            "n_trials": self.n_trials,
            "seed": self.seed,
            "graph_seed": self.graph_seed,
        }


@dataclass
class CellStats:
    """Per-(score, alpha, beta) results across trials."""

    score: str
    alpha: float
    beta: float
    inclusion_rates: np.ndarray
    set_sizes: np.ndarray

    @property
    def n_trials(self) -> int:
        return self.inclusion_rates.size

    @property
    def inclusion_mean(self) -> float:
        return float(self.inclusion_rates.mean())

    @property
    def inclusion_stderr(self) -> float:
        if self.n_trials < 2:
            return math.nan
        return float(self.inclusion_rates.std(ddof=1) / math.sqrt(self.n_trials))

    @property
    def size_mean(self) -> float:
        return float(self.set_sizes.mean())

    @property
    def size_stderr(self) -> float:
        if self.n_trials < 2:
            return math.nan
        return float(self.set_sizes.std(ddof=1) / math.sqrt(self.n_trials))


@dataclass
class TrialReport:
    """Aggregated experiment output plus per-trial raw vectors."""

    config: ExperimentConfig
    cells: list[CellStats]
    trial_runtimes: list[float] = field(default_factory=list)
    total_runtime: float = 0.0

    def cell(self, score: str, alpha: float, beta: float) -> CellStats:
        for c in self.cells:
            if c.score == score and c.alpha == alpha and c.beta == beta:
                return c
        raise KeyError(f"no cell ({score}, {alpha}, {beta})")


@dataclass
class _SampleView:
    """Precomputed per-sample arrays shared by every (score, alpha, beta) cell."""

    order: np.ndarray
    sorted_vals: np.ndarray
    prefix: np.ndarray
    sources: np.ndarray
    source_positions: np.ndarray  # positions of the sources in `order`


def _view_of(probs: np.ndarray, sources: np.ndarray) -> _SampleView:
    order = conformal.probability_order(probs)
    sorted_vals = probs[order]
    prefix = conformal._prefix_sums(sorted_vals)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    return _SampleView(order=order, sorted_vals=sorted_vals, prefix=prefix,
                       sources=sources, source_positions=inverse[sources])


def _calibration_score(view: _SampleView, kind: str, beta: float) -> float:
    """Score of the shrunken source set, via the shared canonical arrays.

    Bit-identical to
    set_score(kind, probs, shrink_set(probs, sources, beta)): the shrunken
    set's smallest kept probability is its closure threshold.
    """
    keep = required_hits(view.sources.size, beta)
    kept_positions = np.sort(view.source_positions)[:keep]
    threshold = view.sorted_vals[kept_positions[-1]]
    size = int(conformal._closure_sizes(view.sorted_vals, threshold))
    return float(conformal._score_from_prefix(kind, view.prefix, view.sorted_vals, size))


def _singleton_score_array(view: _SampleView, kind: str) -> np.ndarray:
    sizes = conformal._closure_sizes(view.sorted_vals, view.sorted_vals)
    return np.asarray(conformal._score_from_prefix(kind, view.prefix,
                                                   view.sorted_vals, sizes))


def _run_trial(graph: Graph, cfg: ExperimentConfig, estimator, lambda1: float | None,
               trial: int) -> dict[tuple[str, float, float], tuple[float, float]]:
    pool_n = cfg.n_cal + cfg.n_test
    samples = sample_dataset(graph, cfg.generative, pool_n, cfg.seed,
                             lambda1=lambda1, seed_path=(_STREAM_DATA, trial))
    views = []
    for i, sample in enumerate(samples):
        probs = estimator(sample, substream(cfg.seed, _STREAM_EST, trial, i))
        views.append(_view_of(np.asarray(probs, dtype=np.float64), sample.sources))
    perm = substream(cfg.seed, _STREAM_SPLIT, trial).permutation(pool_n)
    cal_views = [views[i] for i in perm[:cfg.n_cal]]
    test_views = [views[i] for i in perm[cfg.n_cal:]]

    results: dict[tuple[str, float, float], tuple[float, float]] = {}
    for kind in cfg.score_kinds:
        test_scores = [_singleton_score_array(v, kind) for v in test_views]
        for beta in cfg.betas:
            cal_scores = np.asarray([_calibration_score(v, kind, beta)
                                     for v in cal_views])
            needed = np.asarray([required_hits(v.sources.size, beta)
                                 for v in test_views])
            for alpha in cfg.alphas:
                q_hat = conformal.finite_sample_quantile(cal_scores, alpha)
                included = 0
                total_size = 0
                for v, scores, need in zip(test_views, test_scores, needed):
                    passing = scores <= q_hat
                    total_size += int(np.count_nonzero(passing))
                    hits = int(np.count_nonzero(passing[v.source_positions]))
                    included += int(hits >= need)
                results[(kind, alpha, beta)] = (
                    included / cfg.n_test, total_size / cfg.n_test)
    return results


def run_experiment(cfg: ExperimentConfig, graph: Graph | None = None) -> TrialReport:
    """Run all trials and aggregate per-cell statistics.

    Deterministic for a fixed config: per-trial seeds derive from the master
    seed, so serial and threaded runs produce identical reports.
    """
    started = time.perf_counter()
    if graph is None:
        graph = graph_from_spec(cfg.graph_spec, seed=cfg.graph_seed)
    needs_lambda1 = cfg.generative.r0 is not None or cfg.generative.t_first == "auto"
    lambda1 = spectral_radius(graph) if needs_lambda1 else None
    estimator = build_estimator(cfg.estimator, graph)

    def one(trial: int):
        t0 = time.perf_counter()
        cells = _run_trial(graph, cfg, estimator, lambda1, trial)
        return trial, cells, time.perf_counter() - t0

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outcomes = list(pool.map(one, range(cfg.n_trials)))
    else:
        outcomes = [one(t) for t in range(cfg.n_trials)]
    outcomes.sort(key=lambda item: item[0])

    cells = []
    for kind in cfg.score_kinds:
        for alpha in cfg.alphas:
            for beta in cfg.betas:
                inc = np.asarray([o[1][(kind, alpha, beta)][0] for o in outcomes])
                size = np.asarray([o[1][(kind, alpha, beta)][1] for o in outcomes])
                cells.append(CellStats(score=kind, alpha=alpha, beta=beta,
                                       inclusion_rates=inc, set_sizes=size))
    return TrialReport(config=cfg, cells=cells,
                       trial_runtimes=[o[2] for o in outcomes],
                       total_runtime=time.perf_counter() - started)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def sweep(cfg: ExperimentConfig, axis: str, values) -> list[tuple[object, TrialReport]]:
    """One report per axis value; all reports share the master seed, so sweeps
    over nominal levels are paired on identical datasets."""
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one axis value")
    reports = []
    for value in values:
        if axis == "alpha":
            sub = replace(cfg, alphas=(float(value),))
        elif axis == "beta":
            sub = replace(cfg, betas=(float(value),))
        elif axis == "r0":
            rng = tuple(value) if isinstance(value, (tuple, list)) \
                else (float(value), float(value))
            sub = replace(cfg, generative=replace(cfg.generative, r0=rng,
                                                  sigma_inf=None))
        elif axis == "n_sources":
            count = tuple(int(v) for v in value) if isinstance(value, (tuple, list)) \
                else (int(value), int(value))
            sub = replace(cfg, generative=replace(cfg.generative, source_count=count))
        else:
            raise ValueError(f"unknown sweep axis {axis!r}")
        reports.append((value, run_experiment(sub)))
    return reports


# ---------------------------------------------------------------------------
# CSV reports
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "NA"
    return repr(float(x))


def _comment_header(cfg: ExperimentConfig) -> str:
    return (f"# tool={TOOL_NAME} version={VERSION} seed={cfg.seed} "
            f"config_hash={config_hash(cfg.to_dict())}\n")


def write_reports(report: TrialReport, trials_path, summary_path,
                  include_timing: bool = False) -> None:
    """Write the per-trial and aggregated CSV reports.

    Timing values are wall-clock and vary between runs, so the runtime_s
    column is left empty unless include_timing=True; with timing off,
    identical config + seed produces byte-identical files.
    """
    cfg = report.config
    with open(trials_path, "w", encoding="utf-8") as fh:
        fh.write(_comment_header(cfg))
        fh.write("score,alpha,beta,trial,inclusion_rate,mean_set_size,runtime_s\n")
        for cell in report.cells:
            for t in range(cell.n_trials):
                runtime = _fmt(report.trial_runtimes[t]) if include_timing else ""
                fh.write(f"{cell.score},{_fmt(cell.alpha)},{_fmt(cell.beta)},{t},"
                         f"{_fmt(cell.inclusion_rates[t])},"
                         f"{_fmt(cell.set_sizes[t])},{runtime}\n")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(_comment_header(cfg))
        fh.write("score,alpha,beta,n_trials,inclusion_mean,inclusion_stderr,"
                 "set_size_mean,set_size_stderr\n")
        for cell in report.cells:
            fh.write(f"{cell.score},{_fmt(cell.alpha)},{_fmt(cell.beta)},"
                     f"{cell.n_trials},{_fmt(cell.inclusion_mean)},"
                     f"{_fmt(cell.inclusion_stderr)},{_fmt(cell.size_mean)},"
                     f"{_fmt(cell.size_stderr)}\n")
