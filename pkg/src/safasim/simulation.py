"""Multi-round driver tying data, population and protocol together."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_fraction, check_positive
from .env import RoundReport, TimingConfig, sample_population
from .learners import Dataset, LearnerSpec, evaluate, init_model, partition_dataset
from .metrics import futility, sync_ratio
from .protocol import PROTOCOLS, ROUND_FUNCTIONS, FederatedEnv, ServerState, make_clients


@dataclass
class Summary:
    rounds: int
    best_accuracy: float
    final_accuracy: float
    final_loss: float
    initial_accuracy: float
    initial_loss: float
    mean_round_length: float
    mean_t_dist: float
    sync_ratio: float
    mean_eur: float
    version_variance: float
    futility: float
    total_time: float


def summarize(reports, m, initial=(float("nan"), float("nan"))) -> Summary:
    loss0, acc0 = initial
    if not reports:
        return Summary(0, acc0, acc0, loss0, acc0, loss0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    attempted = sum(r.epochs_attempted for r in reports)
    lengths = np.array([r.round_length for r in reports])
    return Summary(
        rounds=len(reports),
        best_accuracy=max(r.accuracy for r in reports),
        final_accuracy=reports[-1].accuracy,
        final_loss=reports[-1].loss,
        initial_accuracy=acc0,
        initial_loss=loss0,
        mean_round_length=float(lengths.mean()),
        mean_t_dist=float(np.mean([r.t_dist for r in reports])),
        sync_ratio=sync_ratio([r.m_sync for r in reports], m),
        mean_eur=float(np.mean([r.eur for r in reports])),
        version_variance=float(np.mean([r.version_variance for r in reports])),
        futility=futility([r.epochs_wasted for r in reports], [attempted]) if attempted else 0.0,
        total_time=float(lengths.sum()),
    )


@dataclass
class Simulation:
    """One federated run: build the population once, then call :meth:`step`.

    The population, partitions and crash pattern depend only on ``seed``, so
    different protocols run with the same seed face the same environment.
    """

    protocol: str
    dataset: Dataset
    learner: LearnerSpec
    timing: TimingConfig = field(default_factory=TimingConfig)
    m: int = 5
    fraction: float = 0.1
    crash_prob: float = 0.0
    lag_tolerance: int = 5
    seed: int = 0
    perf_lambda: float = 1.0
    base_rate: float = 1.0
    partition_std: float = 0.3
    eval_dataset: Dataset | None = None

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        check_positive(self.m, "m", integer=True)
        check_fraction(self.fraction, "fraction", low_open=True)
        check_fraction(self.crash_prob, "crash_prob")
        check_positive(self.lag_tolerance, "lag_tolerance", integer=True)
        self.partitions = partition_dataset(self.dataset, self.m, self.partition_std, self.seed)
        self.profiles = sample_population(
            self.m, self.perf_lambda, self.crash_prob, [p.size for p in self.partitions],
            seed=self.seed, base_rate=self.base_rate, bandwidth=self.timing.client_bw,
        )
        w0 = init_model(self.learner, self.dataset.d, self.dataset.num_classes)
        self.clients = make_clients(self.dataset, self.partitions, self.profiles, self.learner, w0)
        self.server = ServerState.initial(w0, self.m, self.lag_tolerance, self.fraction)
        self.env = FederatedEnv(self.dataset, self.learner, self.timing, self.seed, self.eval_dataset)
        self.t = 0
        self.reports: list[RoundReport] = []
        self.initial_metrics = evaluate(w0, self.env.evaluation_data, self.learner)
        self._round = ROUND_FUNCTIONS[self.protocol]

    @property
    def global_model(self):
        return self.server.global_model

    def step(self) -> RoundReport:
        self.t += 1
        report = self._round(self.server, self.clients, self.env, self.t)
        self.reports.append(report)
        return report

    def run(self, rounds: int, callback=None):
        check_positive(rounds, "rounds", integer=True, allow_zero=True)
        for _ in range(rounds):
            report = self.step()
            if callback is not None:
                callback(report)
        return self.reports

    def summary(self) -> Summary:
        return summarize(self.reports, self.m, self.initial_metrics)
