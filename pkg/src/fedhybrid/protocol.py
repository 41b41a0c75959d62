"""Hybrid HE/DP federated rounds.

Each round the server broadcasts the global weights, every client computes its
local gradient and protects it (encryption for the HE group, clipping plus
Gaussian noise for the DP group), the server sums the encrypted group under
encryption, decrypts that single aggregate, sums the noisy group in the clear
and applies ``W <- W - eta * (G_HE + G_DP) / N``.

Clients run sequentially so per-phase wall-clock times are comparable.
"""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from . import dp
from .errors import ContractError
from .he import ckks
from .he.backends import AggregationCipherBackend, CkksLite, ExactMock
from .model import (
    Dataset,
    RegressionModel,
    as_param_vector,
    gradient,
    loss,
    mean_target_bias_init,
    sgd_step,
)
from .seeding import derive_seed, make_rng
from .synth import SynthSpec, generate_cohort, holdout_split

log = logging.getLogger(__name__)

PHASES = (
    "broadcast",
    "local_train",
    "protect",
    "aggregate_he",
    "decrypt",
    "aggregate_dp",
    "update",
    "test",
)

# stream identifiers for derive_seed
_CLIENT = 1
_CAPACITY = 2
_KEYS = 3
_DP_NOISE = 10
_HE_ENC = 11
_BATCH = 12


class ClientMode(str, Enum):
    HE = "he"
    DP = "dp"


class RunMode(str, Enum):
    HYBRID = "hybrid"
    DP_ONLY = "dp-only"
    HE_ONLY = "he-only"
    PLAIN = "plain"


@dataclass(frozen=True)
class FixedRatio:
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class CapacityThreshold:
    threshold: float


@dataclass(frozen=True)
class Explicit:
    assignments: Mapping[int, ClientMode]


ModeSelectionPolicy = FixedRatio | CapacityThreshold | Explicit


@dataclass(frozen=True)
class ClientState:
    id: int
    shard: Dataset
    capacity: float = 0.5
    mode: ClientMode | None = None
    dp_params: dp.PrivacyParams | None = None
    rng_seed: int = 0


def select_modes(clients: Sequence[ClientState], policy) -> list[ClientState]:
    """Assign HE or DP to every client.

    Under ``FixedRatio(alpha)`` exactly ``round(alpha * N)`` clients (half to
    even) use HE: the highest capacities, ties broken by ascending id.
    """
    clients = list(clients)
    if not clients:
        raise ContractError("no clients to assign")
    if isinstance(policy, FixedRatio):
        n_he = round(policy.alpha * len(clients))
        ranked = sorted(clients, key=lambda c: (-c.capacity, c.id))
        he_ids = {c.id for c in ranked[:n_he]}
        modes = {c.id: ClientMode.HE if c.id in he_ids else ClientMode.DP for c in clients}
    elif isinstance(policy, CapacityThreshold):
        modes = {
            c.id: ClientMode.HE if c.capacity >= policy.threshold else ClientMode.DP
            for c in clients
        }
    elif isinstance(policy, Explicit):
        missing = [c.id for c in clients if c.id not in policy.assignments]
        if missing:
            raise ContractError(f"no explicit mode for clients {missing}")
        modes = {c.id: ClientMode(policy.assignments[c.id]) for c in clients}
    else:
        raise ContractError(f"unknown mode-selection policy {policy!r}")
    return [replace(c, mode=modes[c.id]) for c in clients]


@dataclass(frozen=True)
class ProtectedUpdate:
    client_id: int
    kind: str  # "he", "dp" or "plain"
    payload: bytes | np.ndarray


def local_gradient(
    client: ClientState,
    model: RegressionModel,
    eta: float,
    round_index: int = 0,
    batch_size: int | None = None,
) -> np.ndarray:
    """Full-batch gradient, or the gradient-equivalent of one mini-batch epoch."""
    shard = client.shard
    if batch_size is None or batch_size >= shard.sample_count:
        return gradient(model, shard)
    rng = make_rng(derive_seed(client.rng_seed, round_index, _BATCH))
    order = rng.permutation(shard.sample_count)
    w = model.weights
    for start in range(0, shard.sample_count, batch_size):
        batch = shard.subset(order[start : start + batch_size])
        w = sgd_step(w, gradient(model.with_weights(w), batch), eta)
    return (model.weights - w) / eta


def protect(
    client: ClientState,
    g: np.ndarray,
    run_mode: RunMode,
    backend: AggregationCipherBackend | None,
    round_index: int = 0,
) -> ProtectedUpdate:
    if run_mode is RunMode.PLAIN:
        return ProtectedUpdate(client.id, "plain", g)
    if client.mode is ClientMode.HE:
        if backend is None:
            raise ContractError("HE client without an aggregation cipher")
        chunks = backend.encrypt(g, derive_seed(client.rng_seed, round_index, _HE_ENC))
        return ProtectedUpdate(client.id, "he", backend.dumps(chunks))
    if client.mode is ClientMode.DP:
        if client.dp_params is None:
            raise ContractError(f"DP client {client.id} has no privacy parameters")
        seed = derive_seed(client.rng_seed, round_index, _DP_NOISE)
        return ProtectedUpdate(client.id, "dp", dp.dp_protect(g, client.dp_params, seed))
    raise ContractError(f"client {client.id} has no mode assigned")


def client_update(
    client: ClientState,
    model: RegressionModel,
    eta: float,
    run_mode: RunMode = RunMode.HYBRID,
    backend: AggregationCipherBackend | None = None,
    round_index: int = 0,
    batch_size: int | None = None,
) -> ProtectedUpdate:
    g = local_gradient(client, model, eta, round_index, batch_size)
    return protect(client, g, run_mode, backend, round_index)


def sum_encrypted(payloads: Sequence[bytes], backend) -> list:
    total = backend.loads(payloads[0])
    for payload in payloads[1:]:
        total = backend.add(total, backend.loads(payload))
    return total


def aggregate_he(payloads: Sequence[bytes], backend, dim: int) -> np.ndarray:
    """Sum encrypted updates chunk-wise, then decrypt the single aggregate."""
    if not payloads:
        return np.zeros(dim)
    return backend.decrypt(sum_encrypted(payloads, backend), dim)


def aggregate_dp(updates: Sequence[np.ndarray], dim: int) -> np.ndarray:
    total = np.zeros(dim)
    for u in updates:
        total = total + as_param_vector(u, dim)
    return total


def global_update(weights, g_he, g_dp, eta: float, n_clients: int) -> np.ndarray:
    if n_clients < 1:
        raise ContractError("global update needs at least one participating client")
    w = as_param_vector(weights)
    g_he = as_param_vector(g_he, w.shape[0])
    g_dp = as_param_vector(g_dp, w.shape[0])
    return w - eta * (g_he + g_dp) / n_clients


@dataclass
class RoundRecord:
    round_index: int
    global_mse: float
    per_phase_times: dict[str, float]
    total_time: float
    n_he: int
    n_dp: int
    client_protect_times: dict[int, tuple[str, float]] = field(default_factory=dict)
    shard_sizes: dict[int, int] = field(default_factory=dict)
    config_echo: dict = field(default_factory=dict)


@dataclass
class ServerState:
    model: RegressionModel
    test_set: Dataset
    eta: float
    run_mode: RunMode
    backend: AggregationCipherBackend | None = None
    batch_size: int | None = None
    config_echo: dict = field(default_factory=dict)


class _PhaseTimer:
    def __init__(self):
        self.times = dict.fromkeys(PHASES, 0.0)

    @contextmanager
    def __call__(self, phase: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.times[phase] += time.perf_counter() - start


def run_round(
    server: ServerState, clients: Sequence[ClientState], round_index: int
) -> tuple[RegressionModel, RoundRecord]:
    timer = _PhaseTimer()
    started = time.perf_counter()
    model = server.model
    dim = model.dim

    with timer("broadcast"):
        wire = model.weights.tobytes()
        received = [
            model.with_weights(np.frombuffer(wire, dtype=np.float64)) for _ in clients
        ]

    he_payloads: list[bytes] = []
    clear_updates: list[np.ndarray] = []
    protect_times: dict[int, tuple[str, float]] = {}
    for client, local_model in zip(clients, received):
        with timer("local_train"):
            g = local_gradient(client, local_model, server.eta, round_index, server.batch_size)
        t0 = time.perf_counter()
        with timer("protect"):
            update = protect(client, g, server.run_mode, server.backend, round_index)
        protect_times[client.id] = (update.kind, time.perf_counter() - t0)
        if update.kind == "he":
            he_payloads.append(update.payload)
        else:
            clear_updates.append(update.payload)

    g_he = np.zeros(dim)
    if he_payloads:
        with timer("aggregate_he"):
            total = sum_encrypted(he_payloads, server.backend)
        with timer("decrypt"):
            g_he = server.backend.decrypt(total, dim)

    with timer("aggregate_dp"):
        g_dp = aggregate_dp(clear_updates, dim)

    with timer("update"):
        new_model = model.with_weights(
            global_update(model.weights, g_he, g_dp, server.eta, len(clients))
        )

    with timer("test"):
        test_mse = loss(new_model, server.test_set)

    record = RoundRecord(
        round_index=round_index,
        global_mse=test_mse,
        per_phase_times=timer.times,
        total_time=time.perf_counter() - started,
        n_he=len(he_payloads),
        n_dp=len(clear_updates),
        client_protect_times=protect_times,
        shard_sizes={c.id: c.shard.sample_count for c in clients},
        config_echo=server.config_echo,
    )
    server.model = new_model
    return new_model, record


@dataclass(frozen=True)
class TrainingConfig:
    run_mode: RunMode = RunMode.HYBRID
    n_clients: int = 5
    alpha: float | None = None
    epsilon: float = 4.0
    delta: float = 1e-5
    clip_norm: float = 20.0
    rounds: int = 10
    eta: float = 1.0
    seed: int = 101
    he_params: ckks.HeParams | None = None
    backend: str = "ckks"
    synth: SynthSpec = field(default_factory=SynthSpec)
    adjacency: str = "add-remove"
    batch_size: int | None = None
    test_fraction: float = 0.2
    policy: object | None = None
    dp_override: dp.PrivacyParams | None = None

    def resolved_policy(self):
        if self.policy is not None:
            return self.policy
        if self.run_mode is RunMode.HE_ONLY:
            return FixedRatio(1.0)
        if self.run_mode in (RunMode.DP_ONLY, RunMode.PLAIN):
            return FixedRatio(0.0)
        if self.alpha is None:
            raise ContractError("hybrid runs need alpha or an explicit policy")
        return FixedRatio(self.alpha)


@dataclass
class TrainingResult:
    records: list[RoundRecord]
    initial_model: RegressionModel
    final_model: RegressionModel
    clients: list[ClientState]


def build_backend(config: TrainingConfig) -> AggregationCipherBackend:
    if config.backend == "mock":
        return ExactMock(tag=config.seed)
    if config.backend == "ckks":
        params = config.he_params or ckks.desk_params()
        return CkksLite(params, derive_seed(config.seed, _KEYS))
    raise ContractError(f"unknown backend {config.backend!r}")


def setup(config: TrainingConfig, backend=None):
    """Build cohort, clients and server state for a run."""
    spec = replace(config.synth, master_seed=config.seed)
    cohort = generate_cohort(spec, config.n_clients)
    train, test = holdout_split(cohort, config.test_fraction)
    if config.run_mode is RunMode.PLAIN:
        privacy = None
    elif config.dp_override is not None:
        privacy = config.dp_override
    else:
        privacy = dp.PrivacyParams.calibrated(
            config.epsilon, config.delta, config.clip_norm, config.adjacency
        )
    clients = []
    for k, shard in enumerate(train):
        capacity = float(make_rng((config.seed, _CAPACITY, k)).uniform())
        clients.append(
            ClientState(
                id=k,
                shard=shard,
                capacity=capacity,
                dp_params=privacy,
                rng_seed=derive_seed(config.seed, _CLIENT, k),
            )
        )
    if config.run_mode is not RunMode.PLAIN:
        clients = select_modes(clients, config.resolved_policy())
    needs_he = any(c.mode is ClientMode.HE for c in clients)
    if backend is None and needs_he:
        backend = build_backend(config)
    initial = mean_target_bias_init(
        RegressionModel.zeros(spec.n_features, spec.n_targets), Dataset.concat(train)
    )
    echo = {
        "run_mode": config.run_mode.value,
        "n_clients": config.n_clients,
        "alpha": config.alpha,
        "epsilon": config.epsilon,
        "delta": config.delta,
        "clip_norm": config.clip_norm,
        "sigma": privacy.sigma if privacy else None,
        "eta": config.eta,
        "seed": config.seed,
        "privacy_accounting": f"{config.rounds} single-round releases, per-round delta",
    }
    server = ServerState(
        model=initial,
        test_set=test,
        eta=config.eta,
        run_mode=config.run_mode,
        backend=backend,
        batch_size=config.batch_size,
        config_echo=echo,
    )
    return server, clients


def run_training(config: TrainingConfig, backend=None) -> TrainingResult:
    if config.rounds < 1:
        raise ContractError("rounds must be >= 1")
    server, clients = setup(config, backend)
    initial = server.model
    records = []
    for t in range(config.rounds):
        _, record = run_round(server, clients, t)
        records.append(record)
        log.debug("round %d mse=%.6g time=%.3fs", t, record.global_mse, record.total_time)
    return TrainingResult(records, initial, server.model, clients)
