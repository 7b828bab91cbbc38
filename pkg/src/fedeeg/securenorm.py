"""Secure federation-wide standardization via pairwise zero-sum masking.

Each client holds raw segments it must never reveal.  To standardize all
clients against shared statistics, every client submits its local sample
sum, element count, and (in a second pass) squared-deviation sum, each
blinded by pairwise masks that cancel exactly when the server adds all
shares.  The server therefore learns only the federation totals, from
which it derives the global mean and standard deviation and broadcasts
them; each client then applies ``(x - mu) / sigma`` locally.

Masks live in 64-bit modular arithmetic.  Real-valued sums are carried as
fixed-point words (``round(x * 2**scale_bits) mod 2**64``) so cancellation
is exact rather than approximate; counts are masked as plain integers.
Pair seeds come from a trusted dealer (stand-in for a key exchange), and
per-value masks are derived from the pair seed with a keyed hash so the
mean, count, and variance streams never reuse a mask word.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from .data import ClientDataset
from .errors import ProtocolError, ZeroVarianceError
from .messages import (
    PROTOCOL_VERSION,
    SERVER_ID,
    LoopbackTransport,
    MessageKind,
    RoundMessage,
    validate_message,
)

WORD_BITS = 64
_WORD_MOD = 1 << WORD_BITS
_HALF_MOD = 1 << (WORD_BITS - 1)

STREAM_SUM = "stats/sum"
STREAM_COUNT = "stats/count"
STREAM_VAR = "stats/var"

# Tiny negative radicands are quantization residue, anything worse is a bug.
_VAR_CLAMP = -1e-9


@dataclass(frozen=True)
class FixedPointCodec:
    """Signed fixed-point encoding into 64-bit modular words.

    ``max_abs`` bounds encodable magnitudes so that a federation-wide sum
    of K shares cannot wrap past the sign bit; raise ``scale_bits`` for
    more precision or lower it for more headroom.
    """

    scale_bits: int = 20
    word_bits: int = WORD_BITS

    def __post_init__(self) -> None:
        if not 0 < self.scale_bits < 62:
            raise ValueError(f"scale_bits must be in (0, 62), got {self.scale_bits}")
        if self.word_bits != WORD_BITS:
            raise ValueError(f"only {WORD_BITS}-bit words are supported")

    @property
    def max_abs(self) -> float:
        return float(1 << (62 - self.scale_bits))

    def encode(self, x: float) -> int:
        x = float(x)
        if not math.isfinite(x):
            raise OverflowError(f"cannot encode non-finite value {x}")
        if abs(x) > self.max_abs:
            raise OverflowError(
                f"|{x}| exceeds the codec bound {self.max_abs}; "
                f"use fewer scale_bits or rescale the data"
            )
        return int(round(x * (1 << self.scale_bits))) % _WORD_MOD

    def decode(self, word: int) -> float:
        word %= _WORD_MOD
        if word >= _HALF_MOD:
            word -= _WORD_MOD
        return word / (1 << self.scale_bits)


@dataclass(frozen=True)
class GlobalStats:
    """Federation-wide standardization constants over N' scalar samples."""

    mu: float
    sigma: float
    n_total: int


@dataclass(frozen=True)
class MaskedShare:
    """One client's blinded contribution; absent fields are None."""

    client_id: int
    masked_sum: int | None = None
    masked_count: int | None = None
    masked_var: int | None = None


@dataclass(frozen=True)
class PairwiseSeeds:
    """Seeds dealt to the client pairs of a K-party federation."""

    n_clients: int
    seeds: dict[tuple[int, int], int]


def deal_pairwise_seeds(n_clients: int, rng_seed: int) -> PairwiseSeeds:
    """Trusted-dealer seed assignment for every unordered client pair."""
    if n_clients < 2:
        raise ProtocolError(f"masking needs at least 2 clients, got {n_clients}")
    rng = np.random.default_rng(rng_seed)
    seeds = {}
    for p in range(n_clients):
        for q in range(p + 1, n_clients):
            seeds[(p, q)] = int(rng.integers(0, _WORD_MOD, dtype=np.uint64))
    return PairwiseSeeds(n_clients, seeds)


def _prg_word(seed: int, stream: str) -> int:
    h = hashlib.blake2b(
        stream.encode("utf-8"), digest_size=8, key=seed.to_bytes(8, "little")
    )
    return int.from_bytes(h.digest(), "little")


def expand_mask(seeds: PairwiseSeeds, client: int, stream: str) -> int:
    """This client's net mask word for one value stream.

    The lower-indexed member of each pair adds the pair word and the
    higher-indexed member subtracts it, so summing all K masks telescopes
    to zero mod 2**64.
    """
    if not 0 <= client < seeds.n_clients:
        raise ProtocolError(f"client {client} outside federation of {seeds.n_clients}")
    total = 0
    for q in range(seeds.n_clients):
        if q == client:
            continue
        pair = (client, q) if client < q else (q, client)
        word = _prg_word(seeds.seeds[pair], stream)
        total += word if client < q else -word
    return total % _WORD_MOD


def client_masked_stats(
    dataset: ClientDataset, client_id: int, seeds: PairwiseSeeds, codec: FixedPointCodec
) -> MaskedShare:
    """First-pass share: blinded sample sum and blinded element count."""
    s_k = float(np.asarray(dataset.inputs, dtype=np.float64).sum())
    n_elems = dataset.n * dataset.d
    masked_sum = (codec.encode(s_k) + expand_mask(seeds, client_id, STREAM_SUM)) % _WORD_MOD
    masked_count = (n_elems + expand_mask(seeds, client_id, STREAM_COUNT)) % _WORD_MOD
    return MaskedShare(client_id, masked_sum=masked_sum, masked_count=masked_count)


def client_masked_variance(
    dataset: ClientDataset,
    mu: float,
    client_id: int,
    seeds: PairwiseSeeds,
    codec: FixedPointCodec,
) -> MaskedShare:
    """Second-pass share: blinded sum of squared deviations from ``mu``."""
    v_k = float(((np.asarray(dataset.inputs, dtype=np.float64) - mu) ** 2).sum())
    masked_var = (codec.encode(v_k) + expand_mask(seeds, client_id, STREAM_VAR)) % _WORD_MOD
    return MaskedShare(client_id, masked_var=masked_var)


def _check_roster(shares: list[MaskedShare], n_clients: int) -> None:
    ids = [s.client_id for s in shares]
    if sorted(ids) != list(range(n_clients)):
        raise ProtocolError(
            f"need exactly one share from each of {n_clients} clients, "
            f"got client ids {sorted(ids)}"
        )


def server_aggregate_mean(
    shares: list[MaskedShare], n_clients: int, codec: FixedPointCodec
) -> tuple[float, int]:
    """Unmask the totals and return (mu, n_total); masks must all be present."""
    _check_roster(shares, n_clients)
    sum_word = 0
    count_word = 0
    for s in shares:
        if s.masked_sum is None or s.masked_count is None:
            raise ProtocolError(f"client {s.client_id} share is missing sum or count")
        sum_word = (sum_word + s.masked_sum) % _WORD_MOD
        count_word = (count_word + s.masked_count) % _WORD_MOD
    n_total = count_word  # masks cancel, leaving the plain nonnegative count
    if n_total == 0 or n_total >= _HALF_MOD:
        raise ProtocolError(
            f"unmasked element count {n_total} is implausible; "
            f"shares are inconsistent or a client is missing"
        )
    total = codec.decode(sum_word)
    return total / n_total, n_total


def server_aggregate_std(
    shares: list[MaskedShare], n_total: int, n_clients: int, codec: FixedPointCodec
) -> float:
    """Unmask the squared-deviation total and return the global sigma."""
    _check_roster(shares, n_clients)
    var_word = 0
    for s in shares:
        if s.masked_var is None:
            raise ProtocolError(f"client {s.client_id} share is missing the variance term")
        var_word = (var_word + s.masked_var) % _WORD_MOD
    if n_total < 1:
        raise ProtocolError(f"n_total must be positive, got {n_total}")
    radicand = codec.decode(var_word) / n_total
    if radicand < _VAR_CLAMP:
        raise ProtocolError(
            f"variance radicand {radicand} is negative beyond quantization residue"
        )
    sigma = math.sqrt(max(radicand, 0.0))
    if sigma == 0.0:
        raise ZeroVarianceError("federation-wide signal is constant; sigma = 0")
    return sigma


# ---------------------------------------------------------------------------
# Local normalization maps
# ---------------------------------------------------------------------------


def standardize_params(dataset: ClientDataset) -> tuple[float, float]:
    x = np.asarray(dataset.inputs, dtype=np.float64)
    mu = float(x.mean())
    sigma = float(x.std())
    if sigma == 0.0:
        raise ZeroVarianceError(f"dataset {dataset.name!r} is constant")
    return mu, sigma


def apply_standardize(dataset: ClientDataset, mu: float, sigma: float) -> ClientDataset:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return dataset.with_inputs((dataset.inputs - mu) / sigma)


def normalize_local(dataset: ClientDataset, stats: GlobalStats) -> ClientDataset:
    """Apply the broadcast federation statistics to one client's data."""
    return apply_standardize(dataset, stats.mu, stats.sigma)


def minmax_params(dataset: ClientDataset) -> tuple[float, float]:
    lo = float(np.min(dataset.inputs))
    hi = float(np.max(dataset.inputs))
    if hi == lo:
        raise ZeroVarianceError(f"dataset {dataset.name!r} is constant; min-max undefined")
    return lo, hi


def apply_minmax(dataset: ClientDataset, lo: float, hi: float) -> ClientDataset:
    if hi <= lo:
        raise ValueError(f"need hi > lo, got [{lo}, {hi}]")
    return dataset.with_inputs((dataset.inputs - lo) / (hi - lo))


def local_minmax(dataset: ClientDataset) -> ClientDataset:
    """Rescale one client's data to [0, 1] using its own extremes."""
    lo, hi = minmax_params(dataset)
    return apply_minmax(dataset, lo, hi)


# ---------------------------------------------------------------------------
# Share payload codecs (RoundMessage payloads)
# ---------------------------------------------------------------------------

_FLAG_SUM = 1
_FLAG_COUNT = 2
_FLAG_VAR = 4


def encode_share_payload(share: MaskedShare, codec: FixedPointCodec) -> bytes:
    """Codec header (scale/word bits) then flag byte then present u64 words."""
    flags = 0
    words = []
    for flag, value in (
        (_FLAG_SUM, share.masked_sum),
        (_FLAG_COUNT, share.masked_count),
        (_FLAG_VAR, share.masked_var),
    ):
        if value is not None:
            flags |= flag
            words.append(value)
    return struct.pack(
        f"<IIB{len(words)}Q", codec.scale_bits, codec.word_bits, flags, *words
    )


def decode_share_payload(
    data: bytes, sender: int, codec: FixedPointCodec
) -> MaskedShare:
    if len(data) < 9:
        raise ProtocolError("masked share payload is truncated")
    scale_bits, word_bits, flags = struct.unpack_from("<IIB", data, 0)
    if (scale_bits, word_bits) != (codec.scale_bits, codec.word_bits):
        raise ProtocolError(
            f"fixed-point header ({scale_bits}, {word_bits}) does not match "
            f"the federation codec ({codec.scale_bits}, {codec.word_bits})"
        )
    n_words = bin(flags & 7).count("1")
    expected = 9 + 8 * n_words
    if len(data) != expected:
        raise ProtocolError(f"share payload has {len(data)} bytes, expected {expected}")
    words = list(struct.unpack_from(f"<{n_words}Q", data, 9))
    fields: dict[str, int | None] = {"masked_sum": None, "masked_count": None, "masked_var": None}
    for flag, name in ((_FLAG_SUM, "masked_sum"), (_FLAG_COUNT, "masked_count"), (_FLAG_VAR, "masked_var")):
        if flags & flag:
            fields[name] = words.pop(0)
    return MaskedShare(sender, **fields)


_STAGE_MEAN = 1
_STAGE_FULL = 2


def encode_stats_payload(
    mu: float, sigma: float | None, n_total: int, codec: FixedPointCodec
) -> bytes:
    stage = _STAGE_MEAN if sigma is None else _STAGE_FULL
    return struct.pack(
        "<IIBddQ", codec.scale_bits, codec.word_bits, stage,
        mu, 0.0 if sigma is None else sigma, n_total,
    )


def decode_stats_payload(
    data: bytes, codec: FixedPointCodec
) -> tuple[float, float | None, int]:
    if len(data) != struct.calcsize("<IIBddQ"):
        raise ProtocolError("stat broadcast payload has the wrong size")
    scale_bits, word_bits, stage, mu, sigma, n_total = struct.unpack("<IIBddQ", data)
    if (scale_bits, word_bits) != (codec.scale_bits, codec.word_bits):
        raise ProtocolError(
            f"fixed-point header ({scale_bits}, {word_bits}) does not match "
            f"the federation codec ({codec.scale_bits}, {codec.word_bits})"
        )
    if stage == _STAGE_MEAN:
        return mu, None, n_total
    if stage == _STAGE_FULL:
        return mu, sigma, n_total
    raise ProtocolError(f"unknown stat broadcast stage {stage}")


def run_secure_standardization(
    datasets: list[ClientDataset],
    rng_seed: int,
    codec: FixedPointCodec | None = None,
    transport: LoopbackTransport | None = None,
) -> tuple[GlobalStats, LoopbackTransport]:
    """Run the two-pass masked-statistics protocol over a transport.

    ``datasets`` are the per-client collections the statistics are computed
    from (client k gets id k).  Returns the broadcast statistics and the
    transport, whose transcript (when recording) holds every frame that
    crossed the privacy boundary.  Normalization itself is left to the
    caller so the same statistics can be applied to held-out partitions.
    """
    codec = codec or FixedPointCodec()
    transport = transport or LoopbackTransport(record=True)
    k = len(datasets)
    if k < 2:
        raise ProtocolError(f"secure standardization needs at least 2 clients, got {k}")
    seeds = deal_pairwise_seeds(k, rng_seed)

    # Pass 1: masked sums and counts to the server.
    for cid, ds in enumerate(datasets):
        share = client_masked_stats(ds, cid, seeds, codec)
        transport.send(SERVER_ID, RoundMessage(
            PROTOCOL_VERSION, 0, MessageKind.MASKED_STAT_SHARE, cid,
            encode_share_payload(share, codec),
        ))
    shares = []
    for msg in transport.drain(SERVER_ID):
        validate_message(msg, 0, MessageKind.MASKED_STAT_SHARE)
        shares.append(decode_share_payload(msg.payload, msg.sender, codec))
    mu, n_total = server_aggregate_mean(shares, k, codec)
    for cid in range(k):
        transport.send(cid, RoundMessage(
            PROTOCOL_VERSION, 0, MessageKind.STAT_BROADCAST, SERVER_ID,
            encode_stats_payload(mu, None, n_total, codec),
        ))

    # Pass 2: masked squared deviations against the broadcast mean.
    for cid, ds in enumerate(datasets):
        msg = transport.receive(cid)
        validate_message(msg, 0, MessageKind.STAT_BROADCAST)
        mu_bcast, sigma_bcast, _ = decode_stats_payload(msg.payload, codec)
        if sigma_bcast is not None:
            raise ProtocolError("variance pass started before the mean broadcast")
        share = client_masked_variance(ds, mu_bcast, cid, seeds, codec)
        transport.send(SERVER_ID, RoundMessage(
            PROTOCOL_VERSION, 1, MessageKind.MASKED_STAT_SHARE, cid,
            encode_share_payload(share, codec),
        ))
    var_shares = []
    for msg in transport.drain(SERVER_ID):
        validate_message(msg, 1, MessageKind.MASKED_STAT_SHARE)
        var_shares.append(decode_share_payload(msg.payload, msg.sender, codec))
    sigma = server_aggregate_std(var_shares, n_total, k, codec)
    for cid in range(k):
        transport.send(cid, RoundMessage(
            PROTOCOL_VERSION, 1, MessageKind.STAT_BROADCAST, SERVER_ID,
            encode_stats_payload(mu, sigma, n_total, codec),
        ))

    stats = None
    for cid in range(k):
        msg = transport.receive(cid)
        validate_message(msg, 1, MessageKind.STAT_BROADCAST)
        mu_b, sigma_b, n_b = decode_stats_payload(msg.payload, codec)
        stats = GlobalStats(mu_b, sigma_b, n_b)
    assert stats is not None
    return stats, transport
