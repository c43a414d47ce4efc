"""Deterministic simulator for semi-asynchronous federated learning.

Implements the SAFA protocol (lag-tolerant distribution, compensatory
first-come-first-merge selection, cache/bypass aggregation) next to FedAvg,
FedCS and fully-local baselines, together with efficiency metrics and an
analysis of selection bias.
"""

from ._validation import NumericDivergenceError, ProtocolStateError
from .bias import (AnalyticInconsistencyError, BiasCase, BiasParams, BiasTrace, bias_fedavg,
                   bias_monte_carlo, bias_safa_recurrence, bias_sigma_closed_form,
                   bias_sigma_corrected, classify_bias_case, sigma_recurrence)
from .config import ConfigError, RunConfig, SweepSpec
from .env import ClientProfile, RoundReport, TimingConfig, round_length, sample_crashes, sample_population
from .estimators import FederatedLinearRegression, FederatedLinearSVM, FederatedSoftmaxClassifier
from .learners import (Dataset, LearnerSpec, ModelKind, ModelParams, Partition, TaskKind,
                       client_update, evaluate, partition_dataset)
from .metrics import eur_empirical, eur_theoretical, futility, sync_ratio, version_variance
from .protocol import (ClientState, Outcome, ServerState, SyncClass, aggregate, cfcfm_select,
                       classify_clients, distribute, post_aggregation_cache_update,
                       pre_aggregation_cache_update, run_round_fedavg, run_round_fedcs,
                       run_round_fully_local, run_round_safa)
from .runner import run_bias_analysis, run_experiment, run_sweep
from .simulation import Simulation, Summary

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
