"""Simulated edge environment: device heterogeneity, crashes and timing.

The timing model turns protocol events into wall-clock round lengths.
A client's round costs download + local training + upload; the server
adds a distribution overhead proportional to the number of model copies
it sends. All randomness comes from per-purpose streams of the master
seed, so two runs with the same seed see the same devices and the same
crash pattern regardless of protocol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import _random
from ._validation import check_fraction, check_positive

# "10 MB" read as 10**7 bytes
DEFAULT_MODEL_SIZE_BITS = 8e7
DEFAULT_CLIENT_BW = 1.40e6
DEFAULT_SERVER_BW = 1e10


@dataclass(frozen=True)
class ClientProfile:
    perf: float            # batches per second
    crash_prob: float
    bandwidth: float       # bits per second
    partition_size: int

    def __post_init__(self):
        check_positive(self.perf, "perf")
        check_fraction(self.crash_prob, "crash_prob")
        check_positive(self.bandwidth, "bandwidth")
        check_positive(self.partition_size, "partition_size", integer=True)


@dataclass(frozen=True)
class TimingConfig:
    model_size: float = DEFAULT_MODEL_SIZE_BITS
    client_bw: float = DEFAULT_CLIENT_BW
    server_bw: float = DEFAULT_SERVER_BW
    t_lim: float = 830.0
    per_model_dist_time: float | None = None
    # "tables": T_dist + min(T_lim, wait); "literal": min(T_lim, T_dist + wait)
    cap_mode: str = "tables"

    def __post_init__(self):
        check_positive(self.model_size, "model_size", allow_zero=True)
        check_positive(self.client_bw, "client_bw")
        check_positive(self.server_bw, "server_bw")
        check_positive(self.t_lim, "t_lim")
        if self.per_model_dist_time is not None:
            check_positive(self.per_model_dist_time, "per_model_dist_time", allow_zero=True)
        if self.cap_mode not in ("tables", "literal"):
            raise ValueError(f"cap_mode must be 'tables' or 'literal', got {self.cap_mode!r}")

    @property
    def per_model_time(self) -> float:
        if self.per_model_dist_time is not None:
            return float(self.per_model_dist_time)
        return self.model_size / self.server_bw


@dataclass
class RoundReport:
    round: int
    protocol: str
    round_length: float
    t_dist: float
    loss: float
    accuracy: float
    eur: float
    m_sync: int
    picked: int
    undrafted: int
    crashed: int
    deprecated: int
    version_variance: float
    futility: float
    epochs_wasted: float = 0.0
    epochs_attempted: float = 0.0
    aggregated: bool = True
    m: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.m and self.picked + self.undrafted + self.crashed > self.m:
            raise ValueError("outcome counts exceed the population")

    def as_row(self) -> dict:
        row = asdict(self)
        row.pop("m")
        return row


FIELDS = [f for f in RoundReport.__dataclass_fields__ if f != "m"]


def sample_population(m, perf_lambda=1.0, crash_prob=0.0, partition_sizes=None, seed=0, *,
                      base_rate=1.0, floor_fraction=0.05, bandwidth=DEFAULT_CLIENT_BW):
    """Draw ``m`` device profiles.

    Performance is ``base_rate * Exponential(perf_lambda)``; draws below
    ``floor_fraction * base_rate`` are re-drawn so no device is arbitrarily
    slow.
    """
    check_positive(m, "m", integer=True)
    check_positive(perf_lambda, "perf_lambda")
    check_fraction(crash_prob, "crash_prob")
    if partition_sizes is None:
        partition_sizes = [1] * m
    if len(partition_sizes) != m:
        raise ValueError("need one partition size per client")
    rng = _random.stream(seed, _random.POPULATION)
    raw = rng.exponential(1.0 / perf_lambda, size=m)
    low = raw < floor_fraction
    while low.any():
        raw[low] = rng.exponential(1.0 / perf_lambda, size=int(low.sum()))
        low = raw < floor_fraction
    return [
        ClientProfile(float(base_rate * s), float(crash_prob), float(bandwidth), int(n_k))
        for s, n_k in zip(raw, partition_sizes)
    ]


def sample_crashes(profiles, t, seed=0):
    """Return {client id: crash-time fraction in [0, 1)} for round ``t``."""
    rng = _random.stream(seed, _random.CRASH, t)
    m = len(profiles)
    u = rng.random(m)
    frac = rng.random(m)
    rho = np.array([p.crash_prob for p in profiles])
    return {k: float(frac[k]) for k in np.flatnonzero(u < rho).tolist()}


def t_train(profile: ClientProfile, epochs, batch_size) -> float:
    return math.ceil(profile.partition_size / batch_size) * epochs / profile.perf


def t_updown(profile: ClientProfile, cfg: TimingConfig):
    t = cfg.model_size / profile.bandwidth
    return t, t


def t_dist(m_sync, cfg: TimingConfig) -> float:
    check_positive(m_sync, "m_sync", allow_zero=True)
    return m_sync * cfg.per_model_time


def round_length(participant_times, t_dist_value, t_lim, cap_mode="tables") -> float:
    """Length of a round given the per-client times the server waits on.

    ``math.inf`` marks a waited-on client that never answers (crash).
    """
    times = list(participant_times)
    if not times:
        return float(t_dist_value)
    wait = max(times)
    if cap_mode == "literal":
        return float(min(t_lim, t_dist_value + wait))
    return float(t_dist_value + min(t_lim, wait))
