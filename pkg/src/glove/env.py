"""Reinforcement-learning environment over the UAV network simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from glove import channel as ch
from glove.config import ScenarioConfig, substream
from glove.network import Fleet, TopologySnapshot, random_fleet, snapshot, step_mobility
from glove.traffic import SlotTrafficReport, TrafficSource, TransportEngine

SIMPLEX_TOL = 1e-6
BUDGET_TOL = 1e-9


class InfeasibleAction(ValueError):
    pass


@dataclass(frozen=True)
class Observation:
    """Standardized per-UAV features plus the routing-tree adjacency.

    Feature columns: expected packets, buffer ratio, K SINR features,
    next-hop distance, x, y, header flag.
    """

    features: np.ndarray
    adjacency: np.ndarray
    mu_bar: np.ndarray
    topology: TopologySnapshot

    @property
    def N(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class ResourceAction:
    power_ratio: np.ndarray  # N x K, fraction of P_max per band
    subarray_ratio: np.ndarray  # N x 2, (Tx, Rx) fractions
    power: np.ndarray  # N x K watts on the routed link
    tx: np.ndarray  # N, Tx sub-arrays on the routed link
    rx: np.ndarray  # N x N, rx[j, i] = Rx sub-arrays at j for the link from i

    @property
    def subarrays(self) -> np.ndarray:
        return self.tx + self.rx.sum(axis=1)


@dataclass(frozen=True)
class UsageMetrics:
    U_P: np.ndarray
    U_S_tx: np.ndarray
    U_S_rx: np.ndarray

    @property
    def U_S(self) -> np.ndarray:
        return self.U_S_tx + self.U_S_rx

    @property
    def U(self) -> np.ndarray:
        return (self.U_P + self.U_S) / 2

    @property
    def mean(self) -> float:
        return float(np.mean(self.U))


@dataclass(frozen=True)
class RewardRecord:
    r: float
    usage: float
    latency: float
    loss: float
    chi1: float
    chi2: float
    chi3: float

    @property
    def terms(self) -> tuple[float, float, float]:
        return (-self.chi1 * self.usage, -self.chi2 * self.latency, -self.chi3 * self.loss)


def compute_reward(usage: float, latency: float, loss: float, chi1: float, chi2: float, chi3: float) -> RewardRecord:
    r = -(chi1 * usage + chi2 * latency + chi3 * loss)
    return RewardRecord(r, usage, latency, loss, chi1, chi2, chi3)


def heads_to_ratios(heads: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Absolute power ratios (N x K) and sub-array ratios (N x 2) from softmax heads."""
    for name in ("power_used", "power_dist", "sub_used", "sub_dist"):
        h = np.asarray(heads[name])
        if np.any(h < -SIMPLEX_TOL) or np.any(np.abs(h.sum(axis=1) - 1) > SIMPLEX_TOL):
            raise InfeasibleAction(f"head {name} is not simplex-valued")
    p = np.asarray(heads["power_used"])[:, :1] * np.asarray(heads["power_dist"])
    s = np.asarray(heads["sub_used"])[:, :1] * np.asarray(heads["sub_dist"])
    return p, s


def allocate(power_ratio, subarray_ratio, topology: TopologySnapshot, p_max: float, s_max: int) -> ResourceAction:
    """Turn ratios into watts and integer sub-array counts for the current routes.

    One sub-array is reserved per link first. The remainder is handed out
    by flooring ``remaining * ratio``. A UAV that only transmits (no
    in-links) puts its whole sub-array share on Tx; one that only receives
    (the header, or a node without a route) puts it on Rx. Rx sub-arrays are
    split evenly over in-links, leftovers going to the lowest sender ids.
    """
    p = np.asarray(power_ratio, dtype=float)
    s = np.asarray(subarray_ratio, dtype=float)
    N = topology.N
    if p.shape[0] != N or s.shape != (N, 2):
        raise InfeasibleAction("ratio shapes do not match the fleet")
    if np.any(p < 0) or np.any(s < 0):
        raise InfeasibleAction("negative allocation ratio")
    if np.any(p.sum(axis=1) > 1 + BUDGET_TOL) or np.any(s.sum(axis=1) > 1 + BUDGET_TOL):
        raise InfeasibleAction("allocation ratios exceed the budget")
    power = np.zeros_like(p)
    tx = np.zeros(N, dtype=np.int64)
    rx = np.zeros((N, N), dtype=np.int64)
    for i in range(N):
        out = topology.next_hop[i] is not None
        ins = topology.in_links[i]
        n_in = len(ins)
        remaining = s_max - int(out) - n_in
        share_tx, share_rx = s[i]
        if out and not n_in:
            share_tx, share_rx = min(1.0, share_tx + share_rx), 0.0
        elif n_in and not out:
            share_tx, share_rx = 0.0, min(1.0, share_tx + share_rx)
        if out:
            tx[i] = 1 + math.floor(remaining * share_tx)
            power[i] = p_max * np.minimum(p[i], 1.0)
        if n_in:
            total = n_in + math.floor(remaining * share_rx)
            base, extra = divmod(total, n_in)
            for rank, src in enumerate(sorted(ins)):
                rx[i, src] = base + (1 if rank < extra else 0)
    return ResourceAction(p.copy(), s.copy(), power, tx, rx)


def usage(action: ResourceAction, p_max: float, s_max: int) -> UsageMetrics:
    return UsageMetrics(
        U_P=action.power.sum(axis=1) / p_max,
        U_S_tx=action.tx / s_max,
        U_S_rx=action.rx.sum(axis=1) / s_max,
    )


def constraint_violations(action: ResourceAction, topology: TopologySnapshot, p_max: float, s_max: int) -> int:
    """Count breaches of the per-UAV power and sub-array limits and of link minimums.

    Deliberately recomputed from raw counts and watts rather than reusing
    ``usage`` so it can audit ``allocate``.
    """
    v = 0
    N = topology.N
    for i in range(N):
        watts = [float(x) for x in action.power[i]]
        v += sum(1 for w in watts if w < 0 or w > p_max * (1 + BUDGET_TOL))
        if sum(watts) > p_max * (1 + BUDGET_TOL):
            v += 1
        tx = int(action.tx[i])
        rx_counts = [int(action.rx[i, j]) for j in range(N)]
        if tx < 0 or tx > s_max:
            v += 1
        v += sum(1 for c in rx_counts if c < 0 or c > s_max)
        if tx + sum(rx_counts) > s_max:
            v += 1
        j = topology.next_hop[i]
        if j is not None and (tx < 1 or int(action.rx[j, i]) < 1):
            v += 1
        if j is None and (tx != 0 or any(w != 0 for w in watts)):
            v += 1
    return v


def uniform_baseline(topology: TopologySnapshot, K: int, p_max: float, s_max: int) -> ResourceAction:
    """Full power split evenly over bands; sub-arrays split 50/50 Tx/Rx."""
    N = topology.N
    return allocate(np.full((N, K), 1.0 / K), np.full((N, 2), 0.5), topology, p_max, s_max)


class UavEnv:
    """Slot-stepped THz UAV network. ``reset`` must be called before ``step``."""

    def __init__(self, cfg: ScenarioConfig, seed: int | None = None, horizon: int | None = None):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        self.horizon = horizon if horizon is not None else max(cfg.steps + 1, 16)
        self.band = cfg.band_plan
        self.spec = cfg.array_spec
        self.fleet: Fleet | None = None

    # -- lifecycle -------------------------------------------------------------

    def reset(self) -> Observation:
        cfg = self.cfg
        self.rng_mobility = substream(self.seed, "mobility")
        self.rng_channel = substream(self.seed, "channel")
        placement = substream(self.seed, "placement")
        self.fleet = random_fleet(
            placement, cfg.N, (cfg.region_x, cfg.region_y), cfg.altitude, cfg.v_max,
            cfg.d_max if cfg.connected_init else None,
        )
        self.traffic = TrafficSource(
            cfg.N, cfg.mean_rate, cfg.traffic_sigma_bits, cfg.hurst, cfg.slot,
            cfg.packet_bits, substream(self.seed, "traffic"), horizon=self.horizon,
        )
        self.engine = TransportEngine(cfg.N, cfg.buffer_capacity, cfg.packet_bits, cfg.slot)
        self.slot = 0
        self.topology = snapshot(self.fleet, 0, cfg.d_max, cfg.hop_weight, cfg.loss_weight)
        self.prev_sinr = np.zeros((cfg.N, cfg.K))
        self.last_links: dict[int, ch.ChannelRealization] = {}
        self.observation = self.observe()
        return self.observation

    # -- observation -----------------------------------------------------------

    def expected_load(self, topology: TopologySnapshot | None = None) -> np.ndarray:
        """Expected packets each UAV must send: own demand, queue, and subtree inflow."""
        topo = topology or self.topology
        cfg = self.cfg
        own = np.full(cfg.N, cfg.expected_packets)
        own[topo.header] = 0.0
        queue = np.array([len(b.queue) for b in self.engine.buffers], dtype=float)
        mu = own + queue
        for i in topo.postorder():
            j = topo.next_hop[i]
            if j is not None:
                mu[j] += mu[i]
        return mu

    def observe(self) -> Observation:
        cfg, topo = self.cfg, self.topology
        N, K = cfg.N, cfg.K
        mu = self.expected_load()
        occupancy = np.array([len(b.queue) for b in self.engine.buffers]) / cfg.buffer_capacity
        dist = np.array([topo.link_distance(i) for i in range(N)])
        feats = np.empty((N, K + 6))
        feats[:, 0] = mu / (cfg.expected_packets * N) if cfg.expected_packets > 0 else mu
        feats[:, 1] = occupancy
        feats[:, 2 : 2 + K] = np.log10(1.0 + self.prev_sinr) / 10.0
        feats[:, 2 + K] = dist / cfg.d_max
        feats[:, 3 + K] = self.fleet.positions[:, 0] / cfg.region_x
        feats[:, 4 + K] = self.fleet.positions[:, 1] / cfg.region_y
        feats[:, 5 + K] = self.fleet.is_header
        return Observation(feats, topo.tree_adjacency(), mu, topo)

    # -- actions ---------------------------------------------------------------

    def apply_action(self, heads: dict[str, np.ndarray]) -> ResourceAction:
        p, s = heads_to_ratios(heads)
        return self.allocate(p, s)

    def allocate(self, power_ratio, subarray_ratio) -> ResourceAction:
        return allocate(power_ratio, subarray_ratio, self.topology, self.cfg.p_max, self.cfg.s_max)

    def baseline_action(self) -> ResourceAction:
        return uniform_baseline(self.topology, self.cfg.K, self.cfg.p_max, self.cfg.s_max)

    def usage(self, action: ResourceAction) -> UsageMetrics:
        return usage(action, self.cfg.p_max, self.cfg.s_max)

    def violations(self, action: ResourceAction) -> int:
        return constraint_violations(action, self.topology, self.cfg.p_max, self.cfg.s_max)

    # -- dynamics --------------------------------------------------------------

    def realize_channels(self, action: ResourceAction) -> np.ndarray:
        """Realized rate of every UAV's routed link (0 without a route)."""
        cfg, topo = self.cfg, self.topology
        rates = np.zeros(cfg.N)
        sinr = np.zeros((cfg.N, cfg.K))
        links = {}
        noise = cfg.noise
        for i, j in topo.routed_links():
            interference = ch.sample_interference(
                self.rng_channel, cfg.interf_mean * noise, cfg.interf_std * noise, cfg.K
            )
            g_m = ch.misalignment_gain(self.rng_channel, cfg.misalign_sigma, cfg.misalign_w_eq, cfg.misalign_a0)
            link = ch.realize_link(
                i, j, float(topo.distances[i, j]), int(action.tx[i]), int(action.rx[j, i]),
                action.power[i], self.band, self.spec, noise, interference, g_m,
            )
            links[i] = link
            rates[i] = link.rate
            sinr[i] = link.sinr
        self.last_links = links
        self.prev_sinr = sinr
        return rates

    def step(self, action: ResourceAction):
        """Advance one slot. Returns ``(observation, reward, traffic_report, usage)``."""
        if self.fleet is None:
            raise RuntimeError("call reset() before step()")
        cfg = self.cfg
        if self.violations(action):
            raise InfeasibleAction("action violates power or sub-array limits")
        rates = self.realize_channels(action)
        counts = self.traffic.counts(self.slot)
        counts[self.topology.header] = 0
        offsets = [self.traffic.offsets(int(c)) for c in counts]
        report = self.engine.slot_transport(self.topology, rates, offsets, self.slot)
        self.last_rates = rates
        metrics = self.usage(action)
        reward = compute_reward(
            metrics.mean, report.mean_latency, float(report.total_lost), cfg.chi1, cfg.chi2, cfg.chi3
        )
        self.fleet = step_mobility(self.fleet, cfg.slot, self.rng_mobility)
        self.slot += 1
        self.topology = snapshot(self.fleet, self.slot, cfg.d_max, cfg.hop_weight, cfg.loss_weight)
        self.observation = self.observe()
        return self.observation, reward, report, metrics


def transition_width(K: int) -> int:
    """Scalars per UAV in a serialized transition: K+6 features, K+2 ratios, 1 reward."""
    return (K + 6) + (K + 2) + 1


@dataclass(frozen=True)
class Transition:
    """One on-policy experience: state, action ratios, reward, next state."""

    state: Observation
    power_ratio: np.ndarray
    subarray_ratio: np.ndarray
    reward: float
    next_state: Observation

    def per_uav(self) -> np.ndarray:
        """Float32 rows of state features, action ratios and the shared reward."""
        N = self.state.N
        return np.column_stack(
            [self.state.features, self.power_ratio, self.subarray_ratio, np.full(N, self.reward)]
        ).astype(np.float32)

    def serialize(self) -> bytes:
        return self.per_uav().tobytes()
