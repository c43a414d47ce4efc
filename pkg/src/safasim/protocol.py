"""Round procedures for SAFA and the FedAvg / FedCS / fully-local baselines.

SAFA's round, in order:

1. classify every client by the version its local model is based on and
   push the global model to up-to-date and deprecated clients only;
2. every client trains; crashes and deadline misses are sampled from the
   environment;
3. arrivals are selected with compensatory first-come-first-merge (clients
   that were not picked last round go first);
4. picked updates (and the global model, for deprecated clients) are written
   into the cache, the cache is averaged into the new global model, and the
   undrafted updates waiting in the bypass are moved into the cache.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import _random
from ._validation import ProtocolStateError, check_finite, check_fraction, check_positive
from .env import ClientProfile, RoundReport, TimingConfig, round_length, sample_crashes, t_dist, t_train, t_updown
from .learners import Dataset, LearnerSpec, ModelParams, Partition, batches_per_epoch, design_matrix, evaluate, local_sgd
from .metrics import eur_empirical, population_variance


class SyncClass(str, enum.Enum):
    UP_TO_DATE = "up_to_date"
    TOLERABLE = "tolerable"
    DEPRECATED = "deprecated"


class Outcome(str, enum.Enum):
    PICKED = "picked"
    UNDRAFTED = "undrafted"
    CRASHED = "crashed"
    NOT_RUN = "not_run"


PROTOCOLS = ("safa", "fedavg", "fedcs", "local")


@dataclass
class ClientState:
    client_id: int
    partition: Partition
    profile: ClientProfile
    model: ModelParams
    last_complete: ModelParams
    # completed fraction of an interrupted pass that is still on the device
    pending_fraction: float = 0.0
    sync_class: SyncClass | None = None
    outcome: Outcome = Outcome.NOT_RUN
    A: np.ndarray = field(default=None, repr=False)
    y: np.ndarray = field(default=None, repr=False)


@dataclass
class ServerState:
    global_model: ModelParams
    cache: list
    bypass: dict = field(default_factory=dict)
    missed_last_round: set = field(default_factory=set)
    lag_tolerance: int = 5
    fraction: float = 0.1

    def __post_init__(self):
        check_positive(self.lag_tolerance, "lag_tolerance", integer=True)
        check_fraction(self.fraction, "fraction", low_open=True)

    @property
    def m(self) -> int:
        return len(self.cache)

    @property
    def picked_last(self) -> set:
        return set(range(self.m)) - self.missed_last_round

    @classmethod
    def initial(cls, w0: ModelParams, m: int, lag_tolerance=5, fraction=0.1):
        return cls(w0.copy(), [w0.copy() for _ in range(m)], {}, set(), lag_tolerance, fraction)


@dataclass
class FederatedEnv:
    """Everything a round needs besides the mutable server and client state."""

    dataset: Dataset
    learner: LearnerSpec
    timing: TimingConfig
    seed: int = 0
    eval_dataset: Dataset | None = None

    @property
    def evaluation_data(self) -> Dataset:
        return self.dataset if self.eval_dataset is None else self.eval_dataset


def make_clients(dataset: Dataset, partitions, profiles, learner: LearnerSpec, w0: ModelParams):
    clients = []
    for part, prof in zip(partitions, profiles):
        idx = part.sample_indices
        clients.append(ClientState(
            part.client_id, part, prof, w0.copy(), w0.copy(),
            A=design_matrix(dataset.features[idx], learner), y=dataset.labels[idx],
        ))
    return clients


# -- selection primitives -----------------------------------------------------

def selection_quota(fraction: float, m: int) -> int:
    # round() strips float noise such as 0.3 * 100 = 30.000000000000004
    return max(1, math.ceil(round(fraction * m, 9)))


def classify_clients(client_versions, t: int, tau: int):
    """Lag-tolerant classification of each client's base-model version."""
    if t < 1:
        raise ValueError("round index starts at 1")
    out = []
    for k, v in enumerate(client_versions):
        if v >= t:
            raise ProtocolStateError(f"client {k} has version {v} at round {t} (ahead of server)")
        if v == t - 1:
            out.append(SyncClass.UP_TO_DATE)
        elif v >= t - tau:
            out.append(SyncClass.TOLERABLE)
        else:
            out.append(SyncClass.DEPRECATED)
    return out


def distribute(server: ServerState, clients) -> int:
    """Send w(t-1) to up-to-date and deprecated clients; return m_sync."""
    m_sync = 0
    for c in clients:
        if c.sync_class is None:
            raise ProtocolStateError(f"client {c.client_id} not classified before distribution")
        if c.sync_class is SyncClass.TOLERABLE:
            continue
        c.model = server.global_model.copy()
        c.pending_fraction = 0.0
        m_sync += 1
    return m_sync


def _cfcfm(arrival_ids, picked_last, quota):
    """Core of CFCFM; returns (picked, undrafted, close position)."""
    picked, deferred = [], []
    close = len(arrival_ids) - 1
    for i, k in enumerate(arrival_ids):
        if k in picked_last:
            deferred.append(k)
        else:
            picked.append(k)
        if len(picked) == quota:
            close = i
            break
    if len(picked) < quota:
        picked.extend(deferred[:quota - len(picked)])
    chosen = set(picked)
    undrafted = [k for k in arrival_ids if k not in chosen]
    return picked, undrafted, close


def cfcfm_select(arrivals, picked_last, C, m, round_deadline=math.inf):
    """Compensatory first-come-first-merge selection.

    ``arrivals`` is time-ordered; items are ``(client_id, model)`` or
    ``(client_id, model, arrival_time)``. Arrivals after ``round_deadline``
    are ignored. Selection closes as soon as the quota is filled by clients
    that were not picked last round; otherwise the shortfall is filled from
    last round's picks in arrival order.
    """
    ids = [a[0] for a in arrivals if len(a) < 3 or a[2] <= round_deadline]
    picked, undrafted, _ = _cfcfm(ids, set(picked_last), selection_quota(C, m))
    return set(picked), set(undrafted)


# -- the three cache steps ------------------------------------------------------

def pre_aggregation_cache_update(server: ServerState, picked, trained_models, deprecated_ids):
    overlap = set(picked) & set(deprecated_ids)
    if overlap:
        raise ProtocolStateError(f"clients {sorted(overlap)} are both picked and deprecated")
    for k in picked:
        server.cache[k] = trained_models[k].copy()
    for k in deprecated_ids:
        server.cache[k] = server.global_model.copy()
    return server.cache


def aggregate(cache, partition_sizes, version=None, *, round=None) -> ModelParams:
    """Data-size weighted average of every entry in ``cache``."""
    sizes = np.asarray(partition_sizes, dtype=float)
    if len(cache) != len(sizes) or len(cache) == 0:
        raise ValueError("need one partition size per cache entry")
    n = sizes.sum()
    w = np.zeros_like(cache[0].weights)
    for entry, n_k in zip(cache, sizes):
        check_finite(entry.weights, round=round, what="cache entry")
        w += (n_k / n) * entry.weights
    if version is None:
        version = max(e.version for e in cache)
    return ModelParams(w, version)


def post_aggregation_cache_update(server: ServerState, undrafted, trained_models):
    for k in undrafted:
        server.cache[k] = trained_models[k].copy()
    server.bypass.clear()
    return server.cache


# -- local phase ----------------------------------------------------------------

@dataclass
class LocalPhase:
    arrivals: list          # [(time, client_id)] sorted by time then id
    trained: dict           # client_id -> ModelParams of finished passes
    crashed: dict           # client_id -> crash fraction of the training interval
    times: dict             # client_id -> down + train + up (planned)


def run_local_phase(ids, clients, env: FederatedEnv, t, *, synced, retain_partial, crashes=None):
    spec = env.learner
    timing = env.timing
    if crashes is None:
        crashes = sample_crashes([c.profile for c in clients], t, env.seed)
    arrivals, trained, crashed, times = [], {}, {}, {}
    num_classes = env.dataset.num_classes
    for k in ids:
        c = clients[k]
        down, up = t_updown(c.profile, timing)
        if k not in synced:
            down = 0.0
        train = t_train(c.profile, spec.epochs, spec.batch_size)
        total = down + train + up
        times[k] = total
        frac = crashes.get(k)
        if frac is None and total > timing.t_lim:
            # still working at the deadline: reckoned crashed
            frac = min(max((timing.t_lim - down) / train, 0.0), np.nextafter(1.0, 0.0)) if train > 0 else 0.0
        rng = _random.stream(env.seed, _random.BATCH, k, t)
        if frac is not None:
            crashed[k] = frac
            if retain_partial:
                steps = int(frac * spec.epochs * batches_per_epoch(len(c.y), spec.batch_size))
                if steps:
                    w, _ = local_sgd(c.model.weights, c.A, c.y, spec, rng, num_classes=num_classes,
                                     max_steps=steps, client=k, round=t)
                    c.model = ModelParams(w, c.model.version)
            continue
        w, _ = local_sgd(c.model.weights, c.A, c.y, spec, rng, num_classes=num_classes, client=k, round=t)
        trained[k] = ModelParams(w, c.model.version)
        arrivals.append((total, k))
    arrivals.sort()
    return LocalPhase(arrivals, trained, crashed, times)


def _evaluate_global(server, env):
    return evaluate(server.global_model, env.evaluation_data, env.learner)


def _reset_outcomes(clients):
    for c in clients:
        c.outcome = Outcome.NOT_RUN
        c.sync_class = None


# -- protocols ------------------------------------------------------------------

def run_round_safa(server: ServerState, clients, env: FederatedEnv, t: int, *, crashes=None) -> RoundReport:
    m = len(clients)
    E = env.learner.epochs
    _reset_outcomes(clients)
    classes = classify_clients([c.model.version for c in clients], t, server.lag_tolerance)
    for c, cls in zip(clients, classes):
        c.sync_class = cls
    deprecated = {k for k, cls in enumerate(classes) if cls is SyncClass.DEPRECATED}
    synced = {k for k, cls in enumerate(classes) if cls is not SyncClass.TOLERABLE}
    # forced sync throws away whatever interrupted pass a deprecated client holds
    wasted = float(sum(clients[k].pending_fraction * E for k in deprecated))
    m_sync = distribute(server, clients)

    phase = run_local_phase(range(m), clients, env, t, synced=synced, retain_partial=True, crashes=crashes)
    arrival_ids = [k for _, k in phase.arrivals]
    picked, undrafted, close = _cfcfm(arrival_ids, server.picked_last, selection_quota(server.fraction, m))
    waited = [phase.arrivals[i][0] for i in range(close + 1)] if arrival_ids else []
    T_dist = t_dist(m_sync, env.timing)
    length = round_length(waited, T_dist, env.timing.t_lim, env.timing.cap_mode)

    server.bypass = {k: phase.trained[k] for k in undrafted}
    pre_aggregation_cache_update(server, picked, phase.trained, sorted(deprecated - set(picked)))
    server.global_model = aggregate(server.cache, [c.partition.size for c in clients], version=t, round=t)
    post_aggregation_cache_update(server, undrafted, phase.trained)

    committed = picked + undrafted
    base_versions = [clients[k].model.version for k in committed]
    for k in picked:
        clients[k].outcome = Outcome.PICKED
    for k in undrafted:
        clients[k].outcome = Outcome.UNDRAFTED
    for k in committed:
        c = clients[k]
        c.model = phase.trained[k].copy(version=t)
        c.last_complete = c.model.copy()
        c.pending_fraction = 0.0
    for k, frac in phase.crashed.items():
        clients[k].outcome = Outcome.CRASHED
        clients[k].pending_fraction = frac
    server.missed_last_round = set(range(m)) - set(picked)

    loss, acc = _evaluate_global(server, env)
    attempted = float(m * E)
    return RoundReport(
        round=t, protocol="safa", round_length=length, t_dist=T_dist, loss=loss, accuracy=acc,
        eur=eur_empirical(set(picked), set(phase.crashed), m), m_sync=m_sync,
        picked=len(picked), undrafted=len(undrafted), crashed=len(phase.crashed),
        deprecated=len(deprecated), version_variance=population_variance(base_versions),
        futility=wasted / attempted, epochs_wasted=wasted, epochs_attempted=attempted, m=m,
    )


def _synchronous_round(name, selected, waited_times, server, clients, env, t, crashes):
    """Shared tail of FedAvg and FedCS: overwrite, train, wait, average."""
    m = len(clients)
    E = env.learner.epochs
    for k in selected:
        clients[k].model = server.global_model.copy()
        clients[k].pending_fraction = 0.0
    m_sync = len(selected)
    phase = run_local_phase(selected, clients, env, t, synced=set(selected), retain_partial=False,
                            crashes=crashes)
    # selected clients always restart from the global model, so an interrupted pass is lost
    wasted = float(sum(frac * E for frac in phase.crashed.values()))
    committed = sorted(phase.trained)
    T_dist = t_dist(m_sync, env.timing)
    length = round_length(waited_times(phase), T_dist, env.timing.t_lim, env.timing.cap_mode)
    if committed:
        server.global_model = aggregate([phase.trained[k] for k in committed],
                                        [clients[k].partition.size for k in committed], version=t, round=t)
    else:
        server.global_model = server.global_model.copy(version=t)
    for k in committed:
        c = clients[k]
        c.model = phase.trained[k].copy(version=t)
        c.last_complete = c.model.copy()
        c.outcome = Outcome.PICKED
    for k in phase.crashed:
        clients[k].outcome = Outcome.CRASHED
    server.missed_last_round = set(range(m)) - set(committed)
    loss, acc = _evaluate_global(server, env)
    attempted = float(len(selected) * E)
    return RoundReport(
        round=t, protocol=name, round_length=length, t_dist=T_dist, loss=loss, accuracy=acc,
        eur=eur_empirical(set(committed), set(phase.crashed), m), m_sync=m_sync,
        picked=len(committed), undrafted=0, crashed=len(phase.crashed), deprecated=0,
        version_variance=0.0, futility=wasted / attempted if attempted else 0.0,
        epochs_wasted=wasted, epochs_attempted=attempted, aggregated=bool(committed), m=m,
    )


def run_round_fedavg(server: ServerState, clients, env: FederatedEnv, t: int, *, crashes=None) -> RoundReport:
    """Random selection before training; the server waits for every selected client."""
    m = len(clients)
    _reset_outcomes(clients)
    quota = selection_quota(server.fraction, m)
    rng = _random.stream(env.seed, _random.SELECT, t)
    selected = sorted(rng.choice(m, size=quota, replace=False).tolist())

    def waited(phase):
        return [phase.times[k] if k in phase.trained else math.inf for k in selected]

    return _synchronous_round("fedavg", selected, waited, server, clients, env, t, crashes)


def estimated_round_times(clients, env: FederatedEnv):
    """Perfect estimate of each client's download + train + upload time."""
    out = []
    for c in clients:
        down, up = t_updown(c.profile, env.timing)
        out.append(down + t_train(c.profile, env.learner.epochs, env.learner.batch_size) + up)
    return out


def run_round_fedcs(server: ServerState, clients, env: FederatedEnv, t: int, *, crashes=None) -> RoundReport:
    """Deadline-aware selection of the fastest clients, using true timings."""
    m = len(clients)
    _reset_outcomes(clients)
    quota = selection_quota(server.fraction, m)
    est = estimated_round_times(clients, env)
    tie = _random.stream(env.seed, _random.TIEBREAK, t).random(m)
    candidates = [k for k in range(m) if est[k] <= env.timing.t_lim]
    candidates.sort(key=lambda k: (est[k], tie[k]))
    selected = sorted(candidates[:quota])

    def waited(phase):
        return [est[k] for k in selected]

    return _synchronous_round("fedcs", selected, waited, server, clients, env, t, crashes)


def run_round_fully_local(server: ServerState, clients, env: FederatedEnv, t: int, *, crashes=None) -> RoundReport:
    """Independent local training; the reported model is a one-shot average.

    The average is taken over each client's last finished pass, so a client
    that never finishes contributes its initial model.
    """
    m = len(clients)
    E = env.learner.epochs
    _reset_outcomes(clients)
    phase = run_local_phase(range(m), clients, env, t, synced=set(), retain_partial=True, crashes=crashes)
    for k, w in phase.trained.items():
        c = clients[k]
        c.model = w
        c.last_complete = w.copy()
        c.pending_fraction = 0.0
        c.outcome = Outcome.PICKED
    for k, frac in phase.crashed.items():
        clients[k].outcome = Outcome.CRASHED
        clients[k].pending_fraction = frac
    server.global_model = aggregate([c.last_complete for c in clients],
                                    [c.partition.size for c in clients], version=t, round=t)
    length = round_length([tm for tm, _ in phase.arrivals], 0.0, env.timing.t_lim, env.timing.cap_mode)
    loss, acc = _evaluate_global(server, env)
    done = set(phase.trained)
    return RoundReport(
        round=t, protocol="local", round_length=length, t_dist=0.0, loss=loss, accuracy=acc,
        eur=eur_empirical(done, set(phase.crashed), m), m_sync=0, picked=len(done), undrafted=0,
        crashed=len(phase.crashed), deprecated=0, version_variance=0.0, futility=0.0,
        epochs_wasted=0.0, epochs_attempted=float(m * E), m=m,
    )


ROUND_FUNCTIONS = {
    "safa": run_round_safa,
    "fedavg": run_round_fedavg,
    "fedcs": run_round_fedcs,
    "local": run_round_fully_local,
}
