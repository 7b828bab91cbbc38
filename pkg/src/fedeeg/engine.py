"""Synchronous federated training over the message transport.

Strategies
----------
``unweighted``
    Every round, each client runs its local epochs and the server takes the
    plain average of the returned parameter vectors.
``weighted``
    Same local work; the server weights each client by its training-set
    share n_k / N.
``random_subset``
    Each local epoch runs on a fresh uniform subset of fixed size M drawn
    without replacement, and the server simple-averages, so every client
    contributes the same sample count per round regardless of n_k.

Clients are simulated sequentially but communicate only through encoded
``RoundMessage`` frames, and the server enforces round/version discipline:
stale, duplicate, or malformed updates are rejected (and recorded) without
contaminating the aggregate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model
from .data import ClientDataset
from .errors import ConfigError, ProtocolError
from .messages import (
    PROTOCOL_VERSION,
    SERVER_ID,
    LoopbackTransport,
    MessageKind,
    RoundMessage,
    validate_message,
)

STRATEGIES = ("unweighted", "weighted", "random_subset")


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 50
    local_epochs: int = 1
    eta: float = 0.05
    strategy: str = "weighted"
    batch_size: int = 64
    subset_size: int | None = None
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.rounds < 0:
            raise ConfigError(f"rounds must be >= 0, got {self.rounds}")
        if self.local_epochs < 1:
            raise ConfigError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"strategy must be one of {STRATEGIES}, got {self.strategy!r}"
            )
        if self.strategy == "random_subset":
            if self.subset_size is None or self.subset_size < 1:
                raise ConfigError(
                    "random_subset needs a positive subset_size, got "
                    f"{self.subset_size}"
                )


@dataclass
class ClientState:
    """One simulated hospital: its data and private RNG stream."""

    client_id: int
    dataset: ClientDataset
    rng: np.random.Generator


def make_client_states(
    datasets: list[ClientDataset], rng_seed: int
) -> list[ClientState]:
    states = []
    for cid, ds in enumerate(datasets):
        rng = np.random.default_rng(np.random.SeedSequence([rng_seed, cid]))
        states.append(ClientState(cid, ds, rng))
    return states


def _run_epoch(
    params: np.ndarray,
    config: model.ModelConfig,
    ds: ClientDataset,
    order: np.ndarray,
    cfg: TrainConfig,
) -> np.ndarray:
    for start in range(0, len(order), cfg.batch_size):
        idx = np.sort(order[start : start + cfg.batch_size])
        batch = model.Batch(ds.inputs[idx], ds.labels[idx])
        _, grad = model.loss_and_grad(params, config, batch)
        params = model.sgd_step(params, grad, cfg.eta)
    return params


def client_local_update(
    state: ClientState,
    global_params: np.ndarray,
    config: model.ModelConfig,
    cfg: TrainConfig,
) -> np.ndarray:
    """Local epochs of mini-batch SGD over the client's full dataset."""
    params = global_params
    for _ in range(cfg.local_epochs):
        order = state.rng.permutation(state.dataset.n)
        params = _run_epoch(params, config, state.dataset, order, cfg)
    return params


def sample_subset(state: ClientState, subset_size: int) -> np.ndarray:
    """Uniform sample of row indices without replacement."""
    n = state.dataset.n
    if subset_size > n:
        raise ConfigError(
            f"subset_size {subset_size} exceeds client {state.client_id}'s "
            f"{n} training rows"
        )
    return state.rng.choice(n, size=subset_size, replace=False)


def client_subset_update(
    state: ClientState,
    global_params: np.ndarray,
    config: model.ModelConfig,
    cfg: TrainConfig,
) -> np.ndarray:
    """Local epochs, each over a fresh fixed-size uniform subset."""
    assert cfg.subset_size is not None
    params = global_params
    for _ in range(cfg.local_epochs):
        order = sample_subset(state, cfg.subset_size)
        params = _run_epoch(params, config, state.dataset, order, cfg)
    return params


def aggregate_unweighted(updates: list[np.ndarray]) -> np.ndarray:
    if not updates:
        raise ValueError("nothing to aggregate")
    return np.mean(np.stack(updates), axis=0)


def aggregate_weighted(updates: list[np.ndarray], sizes: list[int]) -> np.ndarray:
    if not updates:
        raise ValueError("nothing to aggregate")
    if len(updates) != len(sizes):
        raise ValueError(f"{len(updates)} updates but {len(sizes)} sizes")
    if min(sizes) < 1:
        raise ValueError(f"client sizes must be positive, got {sizes}")
    weights = np.asarray(sizes, dtype=np.float64) / float(sum(sizes))
    total = np.zeros_like(updates[0])
    for w, u in zip(weights, updates):
        total = total + w * u
    return total


@dataclass
class TrainResult:
    params: np.ndarray
    history: list[np.ndarray] = field(default_factory=list)
    protocol_errors: list[str] = field(default_factory=list)
    transport: LoopbackTransport | None = None


def _collect_updates(
    transport: LoopbackTransport,
    round_idx: int,
    n_clients: int,
    n_params: int,
    errors: list[str],
) -> dict[int, np.ndarray]:
    """Drain the server inbox, keeping exactly one valid update per client.

    Invalid frames (wrong round, version, kind, sender, or a duplicate) are
    rejected and recorded; they never touch the aggregate.  Missing clients
    violate the synchronous contract and abort the round.
    """
    updates: dict[int, np.ndarray] = {}
    for msg in transport.drain(SERVER_ID):
        try:
            validate_message(msg, round_idx, MessageKind.CLIENT_UPDATE)
            if not 0 <= msg.sender < n_clients:
                raise ProtocolError(f"unknown client id {msg.sender}")
            if msg.sender in updates:
                raise ProtocolError(
                    f"duplicate update from client {msg.sender} in round {round_idx}"
                )
            params = model.params_from_bytes(msg.payload)
            if params.size != n_params:
                raise ProtocolError(
                    f"client {msg.sender} sent {params.size} parameters, "
                    f"expected {n_params}"
                )
            updates[msg.sender] = params
        except ProtocolError as exc:
            errors.append(str(exc))
    if len(updates) != n_clients:
        missing = sorted(set(range(n_clients)) - set(updates))
        raise ProtocolError(
            f"round {round_idx} is missing updates from clients {missing}"
        )
    return updates


def run_training(
    datasets: list[ClientDataset],
    config: model.ModelConfig,
    cfg: TrainConfig,
    transport: LoopbackTransport | None = None,
    initial_params: np.ndarray | None = None,
    keep_history: bool = True,
) -> TrainResult:
    """Drive ``cfg.rounds`` synchronous rounds and return the final model."""
    if not datasets:
        raise ConfigError("need at least one client dataset")
    widths = {ds.d for ds in datasets}
    if widths != {config.input_dim}:
        raise ConfigError(
            f"client input widths {sorted(widths)} do not match the model's "
            f"input_dim={config.input_dim}"
        )
    if cfg.strategy == "random_subset":
        smallest = min(ds.n for ds in datasets)
        if cfg.subset_size > smallest:
            raise ConfigError(
                f"subset_size={cfg.subset_size} exceeds the smallest client's "
                f"{smallest} training rows"
            )

    transport = transport or LoopbackTransport()
    states = make_client_states(datasets, cfg.rng_seed)
    sizes = [ds.n for ds in datasets]
    params = init_params = (
        np.asarray(initial_params, dtype=np.float64)
        if initial_params is not None
        else model.init_params(config)
    )
    if init_params.size != config.n_params:
        raise ConfigError(
            f"initial parameter vector has {init_params.size} entries, "
            f"model needs {config.n_params}"
        )
    result = TrainResult(params=params, transport=transport)

    update_fn = client_subset_update if cfg.strategy == "random_subset" else client_local_update
    for t in range(cfg.rounds):
        payload = model.params_to_bytes(params)
        for st in states:
            transport.send(st.client_id, RoundMessage(
                PROTOCOL_VERSION, t, MessageKind.BROADCAST, SERVER_ID, payload
            ))
        for st in states:
            msg = transport.receive(st.client_id)
            validate_message(msg, t, MessageKind.BROADCAST)
            local = update_fn(st, model.params_from_bytes(msg.payload), config, cfg)
            transport.send(SERVER_ID, RoundMessage(
                PROTOCOL_VERSION, t, MessageKind.CLIENT_UPDATE, st.client_id,
                model.params_to_bytes(local),
            ))
        updates = _collect_updates(
            transport, t, len(states), config.n_params, result.protocol_errors
        )
        ordered = [updates[cid] for cid in range(len(states))]
        if cfg.strategy == "weighted":
            params = aggregate_weighted(ordered, sizes)
        else:
            params = aggregate_unweighted(ordered)
        if keep_history:
            result.history.append(params)
        result.params = params
    return result
