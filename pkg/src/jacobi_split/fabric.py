"""In-process message-passing fabric emulating a distributed-memory machine.

One worker thread per rank; all cross-rank traffic goes through
:class:`RankEndpoint`.  Channels are FIFO per (sender, receiver, tag) and
buffered: ``send`` never blocks on receiver readiness, ``recv`` blocks
until arrival.  Payloads are transferred by value.

Time spent inside fabric calls accumulates in ``comm_time_s`` per endpoint.
Payload volume accumulates in ``data_bytes`` (8 bytes per value) for
point-to-point sends and the all-gather; reduction collectives are never
metered so that exchange-volume comparisons between solver variants are
not polluted by the convergence test both perform identically.

Collectives stamp an internal per-endpoint sequence number into their
tags, so all ranks must reach collective call sites in the same order;
a mismatch surfaces as a deadlock timeout naming both ranks and the tag.
User tags must be non-negative; negative tags are reserved.
"""

from __future__ import annotations

import os
import queue
import threading
import time
from dataclasses import dataclass

import numpy as np

DEFAULT_TIMEOUT_S = 30.0
TIMEOUT_ENV_VAR = "JACOBI_SPLIT_TIMEOUT_S"
_POLL_S = 0.05
_COLLECTIVE_BASE = -1


class FabricError(RuntimeError):
    pass


class DeadlockError(FabricError):
    """recv waited past the deadlock timeout."""


class ProtocolError(FabricError):
    """Payload shape or collective layout mismatch."""


class WorldError(FabricError):
    """A rank worker failed; message names the rank."""


class _WorldAborted(Exception):
    """Internal unwind signal raised in peers after another rank failed."""


def default_timeout_s() -> float:
    raw = os.environ.get(TIMEOUT_ENV_VAR)
    if raw is None:
        return DEFAULT_TIMEOUT_S
    try:
        value = float(raw)
    except ValueError as exc:
        raise ValueError(f"{TIMEOUT_ENV_VAR} must be a number, got {raw!r}") from exc
    if value <= 0:
        raise ValueError(f"{TIMEOUT_ENV_VAR} must be positive")
    return value


@dataclass
class Message:
    tag: int
    payload: object
    length: int


def _normalize_payload(payload):
    """Copy into an owned value; return (value, value_count)."""
    if isinstance(payload, (bool, np.bool_)):
        return bool(payload), 1
    if isinstance(payload, (int, float, np.integer, np.floating)):
        return float(payload), 1
    arr = np.array(payload, dtype=np.float64, copy=True)
    return arr, int(arr.size)


class _World:
    def __init__(self, size: int, timeout_s: float):
        self.size = size
        self.timeout_s = timeout_s
        self.failed = threading.Event()
        self._channels: dict[tuple[int, int, int], queue.SimpleQueue] = {}
        self._lock = threading.Lock()

    def channel(self, src: int, dst: int, tag: int) -> queue.SimpleQueue:
        key = (src, dst, tag)
        chan = self._channels.get(key)
        if chan is None:
            with self._lock:
                chan = self._channels.setdefault(key, queue.SimpleQueue())
        return chan


def left_right_partners(rank: int, world_size: int) -> list[int]:
    """Partner sequence rank-1, rank+1, rank-2, rank+2, ... without wraparound."""
    partners = []
    for k in range(1, world_size):
        if rank - k >= 0:
            partners.append(rank - k)
        if rank + k < world_size:
            partners.append(rank + k)
    return partners


class RankEndpoint:
    """Per-rank handle for point-to-point messages and collectives."""

    def __init__(self, rank: int, world: _World):
        self.rank = rank
        self.world_size = world.size
        self._world = world
        self.comm_time_s = 0.0
        self.data_bytes = 0
        self.sent_messages = 0
        self.received_messages = 0
        self._collective_seq = 0

    # -- point to point ---------------------------------------------------

    def _check_peer(self, peer: int):
        if not (0 <= peer < self.world_size):
            raise ValueError(f"rank {peer} outside world of size {self.world_size}")
        if peer == self.rank:
            raise ValueError("cannot send to or receive from self")

    def send(self, to: int, tag: int, payload) -> None:
        self._send(to, tag, payload, metered=True)

    def _send(self, to: int, tag: int, payload, metered: bool) -> None:
        self._check_peer(to)
        t0 = time.perf_counter()
        value, count = _normalize_payload(payload)
        self._world.channel(self.rank, to, tag).put(Message(tag, value, count))
        self.sent_messages += 1
        if metered:
            self.data_bytes += 8 * count
        self.comm_time_s += time.perf_counter() - t0

    def recv(self, from_: int, tag: int, expected_len: int | None = None):
        return self._recv(from_, tag, expected_len)

    def _recv(self, from_: int, tag: int, expected_len: int | None = None):
        self._check_peer(from_)
        t0 = time.perf_counter()
        chan = self._world.channel(from_, self.rank, tag)
        deadline = t0 + self._world.timeout_s
        while True:
            try:
                msg = chan.get(timeout=_POLL_S)
                break
            except queue.Empty:
                if self._world.failed.is_set():
                    raise _WorldAborted()
                if time.perf_counter() > deadline:
                    raise DeadlockError(
                        f"rank {self.rank} timed out receiving from rank {from_} (tag {tag})"
                    )
        self.received_messages += 1
        self.comm_time_s += time.perf_counter() - t0
        if expected_len is not None and msg.length != expected_len:
            raise ProtocolError(
                f"rank {self.rank} expected {expected_len} values from rank {from_} "
                f"(tag {tag}), got {msg.length}"
            )
        return msg.payload

    # -- collectives --------------------------------------------------------

    def _next_collective_tag(self) -> int:
        self._collective_seq += 1
        return _COLLECTIVE_BASE - self._collective_seq

    def left_right_allgather(self, local_block, block_sizes) -> np.ndarray:
        """Reconstruct the full vector from per-rank blocks with Send/Recv.

        Partners are visited left-right (rank-1, rank+1, rank-2, ...); in
        each pairing the lower rank sends first then receives.  Every rank
        returns the rank-ordered concatenation of all blocks.
        """
        sizes = [int(s) for s in block_sizes]
        if len(sizes) != self.world_size:
            raise ProtocolError("block layout must list one size per rank")
        own = np.array(local_block, dtype=np.float64, copy=True)
        if own.size != sizes[self.rank]:
            raise ProtocolError(
                f"rank {self.rank} block has {own.size} values, layout says {sizes[self.rank]}"
            )
        tag = self._next_collective_tag()
        parts: list[np.ndarray | None] = [None] * self.world_size
        parts[self.rank] = own
        for partner in left_right_partners(self.rank, self.world_size):
            if self.rank < partner:
                self._send(partner, tag, own, metered=True)
                parts[partner] = self._recv(partner, tag, expected_len=sizes[partner])
            else:
                parts[partner] = self._recv(partner, tag, expected_len=sizes[partner])
                self._send(partner, tag, own, metered=True)
        return np.concatenate(parts) if self.world_size > 1 else own

    def _binomial_all_reduce(self, value, combine):
        """Reduce up a rank-ascending binomial tree, broadcast back down.

        The lower-rank accumulator is always the left operand, so the
        reduction order is fixed and results are bitwise reproducible.
        """
        tag = self._next_collective_tag()
        acc, _ = _normalize_payload(value)
        step = 1
        while step < self.world_size:
            if self.rank % (2 * step) == step:
                self._send(self.rank - step, tag, acc, metered=False)
                break
            if self.rank % (2 * step) == 0 and self.rank + step < self.world_size:
                other = self._recv(self.rank + step, tag)
                acc = combine(acc, other)
            step *= 2
        # broadcast down the same tree
        down = 1
        while down < self.world_size:
            down *= 2
        down //= 2
        while down >= 1:
            if self.rank % (2 * down) == 0 and self.rank + down < self.world_size:
                self._send(self.rank + down, tag, acc, metered=False)
            elif self.rank % (2 * down) == down:
                acc = self._recv(self.rank - down, tag)
            down //= 2
        return acc

    @staticmethod
    def _combine_shape_check(a, b):
        a_len = a.size if isinstance(a, np.ndarray) else 1
        b_len = b.size if isinstance(b, np.ndarray) else 1
        if a_len != b_len:
            raise ProtocolError(f"all_reduce shape mismatch: {a_len} vs {b_len}")

    def all_reduce_sum(self, value):
        def combine(a, b):
            self._combine_shape_check(a, b)
            return a + b

        return self._binomial_all_reduce(value, combine)

    def all_reduce_max(self, value):
        def combine(a, b):
            self._combine_shape_check(a, b)
            return np.maximum(a, b) if isinstance(a, np.ndarray) else max(a, b)

        return self._binomial_all_reduce(value, combine)

    def all_reduce_land(self, value):
        """Logical AND across ranks, elementwise for flag vectors."""
        def combine(a, b):
            self._combine_shape_check(a, b)
            if isinstance(a, np.ndarray):
                return np.logical_and(a != 0.0, b != 0.0).astype(np.float64)
            return float(bool(a) and bool(b))

        if np.ndim(value) == 0:
            return bool(self._binomial_all_reduce(bool(value), combine))
        flags = np.asarray(value, dtype=np.float64)
        return self._binomial_all_reduce(flags, combine) != 0.0


def spawn_world(n_ranks: int, program, rank_args=None, timeout_s: float | None = None):
    """Run ``program`` on ``n_ranks`` concurrent rank workers.

    ``program(endpoint)`` is called per rank, or ``program(endpoint, arg)``
    when ``rank_args`` supplies one argument per rank.  Returns the list of
    per-rank results.  The first failure (lowest rank) is re-raised as a
    :class:`WorldError` after all workers have drained.
    """
    if n_ranks < 1:
        raise ValueError("world size must be at least 1")
    if rank_args is not None and len(rank_args) != n_ranks:
        raise ValueError("rank_args must have one entry per rank")
    world = _World(n_ranks, timeout_s if timeout_s is not None else default_timeout_s())
    endpoints = [RankEndpoint(r, world) for r in range(n_ranks)]
    results: list[object] = [None] * n_ranks
    errors: list[BaseException | None] = [None] * n_ranks

    def run(rank: int):
        try:
            if rank_args is None:
                results[rank] = program(endpoints[rank])
            else:
                results[rank] = program(endpoints[rank], rank_args[rank])
        except _WorldAborted:
            pass
        except BaseException as exc:  # noqa: BLE001 - reported via WorldError
            errors[rank] = exc
            world.failed.set()

    if n_ranks == 1:
        run(0)
    else:
        threads = [threading.Thread(target=run, args=(r,), name=f"rank-{r}") for r in range(n_ranks)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    for rank, exc in enumerate(errors):
        if exc is not None:
            raise WorldError(f"rank {rank} failed: {exc}") from exc
    return results
