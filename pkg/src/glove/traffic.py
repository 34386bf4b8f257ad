"""Traffic generation, FIFO buffers and the per-slot packet transport engine.

Packets live in column arrays (:class:`Packets`). Within a slot every
node is processed once, children before parents, so all packets a node
receives from upstream are known before its own queue is served. Service
is FIFO at the link's constant rate, restarting at each slot boundary; a
packet whose transmission would not finish by the slot end waits for the
next slot together with everything behind it.

Arrivals that occur at equal instants are ordered: in-flight packets from
the previous slot, then locally generated packets, then forwarded packets
by ascending sender id. A completed transmission frees its buffer place at
the completion instant, before any arrival at that same instant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from glove.config import SPEED_OF_LIGHT

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


FIELDS = ("tag", "created", "t")
_DTYPES = (np.int64, np.float64, np.float64)
# tag bit layout: packet id << 16 | origin << 8 | hop count
_ORIGIN_SHIFT, _PID_SHIFT, _BYTE = 8, 16, 0xFF


class Packets:
    """Column store of packets; ``t`` is the arrival offset within the current slot.

    Packet id, origin UAV and hop count share one int64 ``tag`` so that
    reordering touches three arrays instead of five.
    """

    __slots__ = FIELDS

    def __init__(self, tag, created, t):
        self.tag, self.created, self.t = tag, created, t

    def __len__(self) -> int:
        return len(self.tag)

    def __getitem__(self, idx) -> "Packets":
        return Packets(self.tag[idx], self.created[idx], self.t[idx])

    def take(self, perm) -> "Packets":
        return Packets(self.tag.take(perm), self.created.take(perm), self.t.take(perm))

    @property
    def pid(self) -> np.ndarray:
        return self.tag >> _PID_SHIFT

    @property
    def origin(self) -> np.ndarray:
        return (self.tag >> _ORIGIN_SHIFT) & _BYTE

    @property
    def hops(self) -> np.ndarray:
        return self.tag & _BYTE

    @classmethod
    def new(cls, first_pid: int, origin: int, created, t) -> "Packets":
        if not 0 <= origin <= _BYTE:
            raise ValueError("origin id must fit in 8 bits")
        pid = np.arange(first_pid, first_pid + len(t), dtype=np.int64)
        return cls((pid << _PID_SHIFT) | (origin << _ORIGIN_SHIFT), np.asarray(created, dtype=float), np.asarray(t, dtype=float))

    @classmethod
    def empty(cls) -> "Packets":
        return cls(*(np.zeros(0, dtype=d) for d in _DTYPES))

    @classmethod
    def concat(cls, parts) -> "Packets":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        if len(parts) == 1:
            return parts[0]
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in FIELDS))


def empty_packets() -> Packets:
    return Packets.empty()


@dataclass(frozen=True)
class Packet:
    """Read-only view of one packet at a given absolute time."""

    pid: int
    origin: int
    created_at: float
    hops: int
    accumulated_latency: float


@dataclass
class FifoBuffer:
    """Packets queued at one UAV, oldest first."""

    capacity: int
    queue: Packets = field(default_factory=Packets.empty)
    lost_count: int = 0

    def __len__(self) -> int:
        return len(self.queue)

    def packets(self, now: float) -> list[Packet]:
        q = self.queue
        return [
            Packet(int(q.pid[k]), int(q.origin[k]), float(q.created[k]), int(q.hops[k]), now - float(q.created[k]))
            for k in range(len(q))
        ]


def buffer_occupancy(buffer: FifoBuffer) -> float:
    return len(buffer.queue) / buffer.capacity


@dataclass
class SlotTrafficReport:
    slot: int
    generated: np.ndarray
    relayed_in: np.ndarray
    delivered: np.ndarray
    lost: np.ndarray
    latencies: np.ndarray
    delivered_ids: np.ndarray
    queued_start: int
    queued_end: int

    @property
    def total_lost(self) -> int:
        return int(self.lost.sum())

    @property
    def total_generated(self) -> int:
        return int(self.generated.sum())

    @property
    def total_delivered(self) -> int:
        return int(self.delivered.sum())

    @property
    def mean_latency(self) -> float:
        """Mean header-arrival latency; 0 when nothing arrived."""
        return float(self.latencies.mean()) if len(self.latencies) else 0.0

    @property
    def max_latency(self) -> float:
        return float(self.latencies.max()) if len(self.latencies) else 0.0

    def conserved(self) -> bool:
        return self.total_generated + self.queued_start == self.total_delivered + self.queued_end + self.total_lost


# -- fractional Gaussian noise -------------------------------------------------


def fgn_autocovariance(hurst: float, lags) -> np.ndarray:
    k = np.abs(np.asarray(lags, dtype=float))
    h2 = 2.0 * hurst
    return 0.5 * (np.abs(k + 1) ** h2 - 2.0 * k**h2 + np.abs(k - 1) ** h2)


def fgn(n: int, hurst: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Exact unit-variance fGn samples by circulant embedding (Davies-Harte).

    Returns shape ``(n,)`` or ``(size, n)``. Falls back to a Cholesky factor
    when the embedding is not nonnegative definite.
    """
    if not 0 < hurst < 1:
        raise ValueError("hurst must lie in (0, 1)")
    rows = 1 if size is None else size
    if n == 1:
        out = rng.standard_normal((rows, 1))
        return out[0] if size is None else out
    gamma = fgn_autocovariance(hurst, np.arange(n + 1))
    circ = np.concatenate([gamma, gamma[-2:0:-1]])
    m = len(circ)
    lam = np.fft.fft(circ).real
    if lam.min() < -1e-10 * lam.max():
        chol = np.linalg.cholesky(fgn_autocovariance(hurst, np.subtract.outer(np.arange(n), np.arange(n))))
        out = rng.standard_normal((rows, n)) @ chol.T
        return out[0] if size is None else out
    lam = np.clip(lam, 0.0, None)
    z = rng.standard_normal((rows, m))
    w = np.zeros((rows, m), dtype=complex)
    w[:, 0] = np.sqrt(lam[0] / m) * z[:, 0]
    w[:, n] = np.sqrt(lam[n] / m) * z[:, n]
    k = np.arange(1, n)
    scale = np.sqrt(lam[k] / (2 * m))
    w[:, k] = scale * (z[:, k] + 1j * z[:, m - k])
    w[:, m - k] = np.conj(w[:, k])
    out = np.fft.fft(w, axis=1).real[:, :n]
    return out[0] if size is None else out


class TrafficSource:
    """Per-UAV arrival volumes ``max(0, mean*dt + sigma*fGn)`` and in-slot offsets."""

    def __init__(
        self,
        N: int,
        mean_rate: float,
        sigma_bits: float,
        hurst: float,
        dt: float,
        packet_bits: int,
        rng: np.random.Generator,
        horizon: int = 1024,
    ):
        if not 0.5 <= hurst < 1:
            raise ValueError("hurst must satisfy 0.5 <= H < 1")
        if mean_rate < 0:
            raise ValueError("mean_rate must be >= 0")
        self.N, self.mean_rate, self.sigma_bits = N, mean_rate, sigma_bits
        self.hurst, self.dt, self.packet_bits = hurst, dt, packet_bits
        self.rng = rng
        self.horizon = max(1, horizon)
        self._noise = np.zeros((N, 0))
        self._start = 0

    def _noise_at(self, slot: int) -> np.ndarray:
        while slot >= self._start + self._noise.shape[1]:
            self._start += self._noise.shape[1]
            if self.sigma_bits > 0:
                self._noise = fgn(self.horizon, self.hurst, self.rng, size=self.N)
            else:
                self._noise = np.zeros((self.N, self.horizon))
        return self._noise[:, slot - self._start]

    def counts(self, slot: int) -> np.ndarray:
        volume = np.maximum(0.0, self.mean_rate * self.dt + self.sigma_bits * self._noise_at(slot))
        return np.floor(volume / self.packet_bits).astype(np.int64)

    def offsets(self, count: int) -> np.ndarray:
        return sorted_uniform(self.rng, count, self.dt)


def sorted_uniform(rng: np.random.Generator, count: int, high: float) -> np.ndarray:
    """Order statistics of ``count`` Uniform[0, high) draws via normalized exponential spacings."""
    if count == 0:
        return np.zeros(0)
    gaps = rng.standard_exponential(count + 1)
    cums = np.cumsum(gaps)
    return high * (cums[:-1] / cums[-1])


def generate_arrivals(
    mean_rate: float, hurst: float, dt: float, packet_bits: int, rng: np.random.Generator,
    sigma_bits: float = 0.0, noise: float | None = None,
) -> tuple[int, np.ndarray]:
    """One slot of arrivals for one UAV: packet count and sorted offsets in ``[0, dt)``.

    ``noise`` is the fGn increment for this slot; drawn as a single
    standard normal when omitted (a one-sample fGn is standard normal).
    """
    if not 0.5 <= hurst < 1:
        raise ValueError("hurst must satisfy 0.5 <= H < 1")
    if mean_rate < 0:
        raise ValueError("mean_rate must be >= 0")
    if noise is None:
        noise = float(rng.standard_normal()) if sigma_bits > 0 else 0.0
    volume = max(0.0, mean_rate * dt + sigma_bits * noise)
    count = int(math.floor(volume / packet_bits))
    return count, np.sort(rng.uniform(0.0, dt, size=count))


def aggregate_loss(incoming: int, queued: int, rate: float, dt: float, packet_bits: int, capacity: int) -> int:
    """Closed-form per-UAV loss count for one slot and a single outgoing link."""
    served = math.floor(rate * dt / packet_bits)
    return max(0, incoming + queued - capacity - served)


# -- per-node service kernel -------------------------------------------------------


@njit(cache=True)
def _serve(t, n_carried, service, dt, capacity):  # pragma: no cover - compiled
    n = t.shape[0]
    accepted = np.zeros(n, dtype=np.bool_)
    done = np.full(n, np.inf)
    order = np.empty(n, dtype=np.int64)
    n_acc = 0
    departed = 0
    free = 0.0
    blocked = not (service < np.inf)
    for k in range(n):
        a = t[k]
        if k >= n_carried:
            while departed < n_acc and done[order[departed]] <= a:
                departed += 1
            if n_acc - departed >= capacity:
                continue
        accepted[k] = True
        order[n_acc] = k
        n_acc += 1
        if not blocked:
            start = a if a > free else free
            c = start + service
            if c <= dt:
                done[k] = c
                free = c
            else:
                blocked = True
    return accepted, done


@njit(cache=True)
def _merge_runs(t, starts):  # pragma: no cover - compiled
    """Stable merge order of sorted runs ``t[starts[r]:starts[r+1]]``; ties go to the earlier run."""
    k = starts.shape[0] - 1
    n = starts[k]
    perm = np.empty(n, dtype=np.int64)
    keys = np.empty(n, dtype=np.float64)
    buf_p = np.empty(n, dtype=np.int64)
    buf_k = np.empty(n, dtype=np.float64)
    m = starts[1]
    for q in range(m):
        perm[q] = q
        keys[q] = t[q]
    for r in range(1, k):
        a, b, out = 0, starts[r], 0
        b_end = starts[r + 1]
        while a < m and b < b_end:
            if t[b] < keys[a]:
                buf_p[out] = b
                buf_k[out] = t[b]
                b += 1
            else:
                buf_p[out] = perm[a]
                buf_k[out] = keys[a]
                a += 1
            out += 1
        while a < m:
            buf_p[out] = perm[a]
            buf_k[out] = keys[a]
            a += 1
            out += 1
        while b < b_end:
            buf_p[out] = b
            buf_k[out] = t[b]
            b += 1
            out += 1
        m = out
        perm, buf_p = buf_p, perm
        keys, buf_k = buf_k, keys
    return perm


def serve_queue(t: np.ndarray, n_carried: int, rate: float, dt: float, packet_bits: int, capacity: int):
    """FIFO service with tail drop at one node for one slot.

    ``t`` holds arrival offsets in service order; the first ``n_carried``
    entries are already buffered. Returns ``(accepted, completion)``;
    completion is ``inf`` for packets not transmitted this slot.
    """
    if rate < 0:
        raise ValueError("rate must be >= 0")
    service = packet_bits / rate if rate > 0 else np.inf
    return _serve(np.ascontiguousarray(t, dtype=np.float64), n_carried, service, dt, capacity)


class TransportEngine:
    """Owns every UAV buffer plus packets in flight across a slot boundary."""

    def __init__(self, N: int, capacity: int, packet_bits: int, dt: float, trace: bool = False):
        self.N, self.capacity, self.packet_bits, self.dt = N, capacity, packet_bits, dt
        # (slot, i, j, pids in service order, pids sent) per served link
        self.trace: list | None = [] if trace else None
        self.buffers = [FifoBuffer(capacity) for _ in range(N)]
        self.inflight = [empty_packets() for _ in range(N)]
        self.next_pid = 0
        self.created_total = 0
        self.delivered_total = 0
        self.lost_total = 0

    def queued(self) -> int:
        return sum(len(b.queue) for b in self.buffers) + sum(len(f) for f in self.inflight)

    def make_packets(self, slot: int, origin: int, offsets: np.ndarray) -> Packets:
        p = Packets.new(self.next_pid, origin, slot * self.dt + offsets, offsets.copy())
        self.next_pid += len(offsets)
        return p

    def slot_transport(self, topology, rates, new_offsets, slot: int) -> SlotTrafficReport:
        """Advance all queues by one slot.

        ``rates[i]`` is the rate in bit/s of ``i``'s routed link (ignored
        when ``i`` has no next hop). ``new_offsets[i]`` are the sorted
        arrival offsets of packets generated at ``i`` in this slot.
        """
        N, dt = self.N, self.dt
        rates = np.asarray(rates, dtype=float)
        if np.any(rates < 0) or not np.all(np.isfinite(rates)):
            raise ValueError("link rates must be finite and >= 0")
        header = topology.header
        queued_start = self.queued()
        generated = np.zeros(N, dtype=np.int64)
        relayed = np.zeros(N, dtype=np.int64)
        lost = np.zeros(N, dtype=np.int64)
        forwarded: list[list[Packets]] = [[] for _ in range(N)]
        new_inflight = [empty_packets() for _ in range(N)]
        own = []
        for i in range(N):
            offs = np.asarray(new_offsets[i], dtype=float)
            generated[i] = len(offs)
            own.append(self.make_packets(slot, i, offs))
        self.created_total += int(generated.sum())

        arrived_at_header: list[Packets] = []
        for i in topology.postorder():
            sources = [p for p in [self.inflight[i], own[i], *forwarded[i]] if len(p)]
            relayed[i] = len(self.inflight[i]) + sum(len(f) for f in forwarded[i])
            if i == header:
                # arrival order at the sink is irrelevant
                arrived_at_header = sources
                continue
            fresh = Packets.concat(sources)
            if len(sources) > 1:
                starts = np.cumsum([0] + [len(p) for p in sources])
                fresh = fresh.take(_merge_runs(fresh.t, starts))
            carried = self.buffers[i].queue
            n_carried = len(carried)
            allp = Packets.concat([carried, fresh])
            t = allp.t.copy()
            t[:n_carried] = 0.0
            j = topology.next_hop[i]
            rate = rates[i] if j is not None else 0.0
            accepted, done = serve_queue(t, n_carried, rate, dt, self.packet_bits, self.capacity)
            n_acc = int(accepted.sum())
            drops = len(allp) - n_acc
            lost[i] = drops
            self.buffers[i].lost_count += drops
            sent = np.isfinite(done)
            n_sent = int(sent.sum())
            # sent packets form a prefix of the accepted ones
            if drops:
                kept = allp[accepted]
                done = done[accepted]
            else:
                kept = allp
            self.buffers[i].queue = kept[n_sent:]
            if not n_sent:
                continue
            out = kept[:n_sent]
            if self.trace is not None:
                self.trace.append((slot, i, j, allp.pid.copy(), out.pid.copy()))
            out.t = done[:n_sent] + topology.distances[i, j] / SPEED_OF_LIGHT
            out.tag = out.tag + 1
            # completion times are nondecreasing, so late arrivals form a suffix
            cut = int(np.searchsorted(out.t, dt, side="left"))
            if cut < len(out):
                spill = out[cut:]
                spill.t = spill.t - dt
                new_inflight[j] = Packets.concat([new_inflight[j], spill])
                out = out[:cut]
            forwarded[j].append(out)

        for j, f in enumerate(new_inflight):
            if len(f) > 1:
                new_inflight[j] = f.take(np.argsort(f.t, kind="stable"))
        latencies = np.concatenate([np.zeros(0)] + [(slot * dt + p.t) - p.created for p in arrived_at_header])
        delivered = np.zeros(N, dtype=np.int64)
        for p in arrived_at_header:
            delivered += np.bincount(p.origin, minlength=N)
        delivered_ids = np.concatenate([np.zeros(0, dtype=np.int64)] + [p.pid for p in arrived_at_header])
        self.inflight = new_inflight
        self.delivered_total += len(latencies)
        self.lost_total += int(lost.sum())
        return SlotTrafficReport(
            slot=slot,
            generated=generated,
            relayed_in=relayed,
            delivered=delivered,
            lost=lost,
            latencies=latencies,
            delivered_ids=delivered_ids,
            queued_start=queued_start,
            queued_end=self.queued(),
        )
