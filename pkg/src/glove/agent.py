"""GLOVE actor/critic, safe initialization, safe exploration and the on-policy DDPG step."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from glove.config import ScenarioConfig
from glove.env import (
    InfeasibleAction,
    Observation,
    ResourceAction,
    Transition,
    UavEnv,
    heads_to_ratios,
)
from glove.env import uniform_baseline as _uniform_allocation
from glove.nn import (
    Adam,
    GcnLayer,
    Linear,
    Tensor,
    assign_params,
    concat,
    load_params,
    normalized_adjacency,
    parameter,
    save_params,
)

HEAD_INIT = 3e-3
HEAD_NAMES = ("power_used", "power_dist", "sub_used", "sub_dist")


def _small_linear(rng, in_dim: int, out_dim: int, name: str) -> Linear:
    layer = Linear(rng, in_dim, out_dim, "identity", name)
    layer.W.data = rng.uniform(-HEAD_INIT, HEAD_INIT, size=(in_dim, out_dim))
    return layer


class TaskLayer:
    """Dense layer over ``[graph | self]`` features, kept as two weight blocks.

    Splitting the weight lets the ablated actor (no self-node path) share
    exactly the same arithmetic as the full actor with a zeroed self path.
    """

    def __init__(self, rng, hidden: int, out_dim: int, with_self: bool, name: str):
        in_dim = 2 * hidden if with_self else hidden
        full = Linear(rng, in_dim, out_dim, "tanh", name)
        self.W_g = parameter(full.W.data[:hidden], f"{name}.W_graph")
        self.W_s = parameter(full.W.data[hidden:], f"{name}.W_self") if with_self else None
        self.b = full.b

    def parameters(self) -> list[Tensor]:
        return [self.W_g] + ([self.W_s] if self.W_s is not None else []) + [self.b]

    def __call__(self, g: Tensor, s: Tensor | None) -> Tensor:
        y = g @ self.W_g
        if self.W_s is not None and s is not None:
            y = y + s @ self.W_s
        return (y + self.b).tanh()


class Actor:
    """Shared GCN stack, optional self-node FC stack, and two task heads."""

    def __init__(self, rng, n_features: int, K: int, hidden: int = 64, self_node: bool = True):
        self.n_features, self.K, self.hidden, self.self_node = n_features, K, hidden, self_node
        self.gcn1 = GcnLayer(rng, n_features, hidden, "tanh", "actor.gcn1")
        self.gcn2 = GcnLayer(rng, hidden, hidden, "tanh", "actor.gcn2")
        if self_node:
            self.fc1 = Linear(rng, n_features, hidden, "tanh", "actor.self1")
            self.fc2 = Linear(rng, hidden, hidden, "tanh", "actor.self2")
        self.power_task = TaskLayer(rng, hidden, hidden, self_node, "actor.power")
        self.sub_task = TaskLayer(rng, hidden, hidden, self_node, "actor.sub")
        self.heads = {
            "power_used": _small_linear(rng, hidden, 2, "actor.power_used"),
            "power_dist": _small_linear(rng, hidden, K, "actor.power_dist"),
            "sub_used": _small_linear(rng, hidden, 2, "actor.sub_used"),
            "sub_dist": _small_linear(rng, hidden, 2, "actor.sub_dist"),
        }

    def parameters(self) -> list[Tensor]:
        ps = self.gcn1.parameters() + self.gcn2.parameters()
        if self.self_node:
            ps += self.fc1.parameters() + self.fc2.parameters()
        ps += self.power_task.parameters() + self.sub_task.parameters()
        for name in HEAD_NAMES:
            ps += self.heads[name].parameters()
        return ps

    def self_features(self, x: Tensor) -> Tensor | None:
        if not self.self_node:
            return None
        return self.fc2(self.fc1(x))

    def forward(self, features, a_norm, self_override: Tensor | None = None) -> dict[str, Tensor]:
        x = Tensor(features)
        if x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features per UAV, got {x.shape[1]}")
        g = self.gcn2(a_norm, self.gcn1(a_norm, x))
        s = self_override if self_override is not None else self.self_features(x)
        hp = self.power_task(g, s)
        hs = self.sub_task(g, s)
        return {
            "power_used": self.heads["power_used"](hp).softmax(),
            "power_dist": self.heads["power_dist"](hp).softmax(),
            "sub_used": self.heads["sub_used"](hs).softmax(),
            "sub_dist": self.heads["sub_dist"](hs).softmax(),
        }


class Critic:
    """Three per-input branches (FC then GCN), node-mean pooling and a shared stack to Q."""

    def __init__(self, rng, n_features: int, K: int, hidden: int = 64):
        self.state_fc = Linear(rng, n_features, hidden, "relu", "critic.state_fc")
        self.state_gcn = GcnLayer(rng, hidden, hidden, "relu", "critic.state_gcn")
        self.power_fc = Linear(rng, K, hidden, "relu", "critic.power_fc")
        self.power_gcn = GcnLayer(rng, hidden, hidden, "relu", "critic.power_gcn")
        self.sub_fc = Linear(rng, 2, hidden, "relu", "critic.sub_fc")
        self.sub_gcn = GcnLayer(rng, hidden, hidden, "relu", "critic.sub_gcn")
        self.shared = Linear(rng, 3 * hidden, hidden, "relu", "critic.shared")
        self.out = Linear(rng, hidden, 1, "identity", "critic.out")

    def parameters(self) -> list[Tensor]:
        layers = [
            self.state_fc, self.state_gcn, self.power_fc, self.power_gcn,
            self.sub_fc, self.sub_gcn, self.shared, self.out,
        ]
        return [p for layer in layers for p in layer.parameters()]

    def forward(self, features, power_ratio, subarray_ratio, a_norm) -> Tensor:
        x, p, s = (v if isinstance(v, Tensor) else Tensor(v) for v in (features, power_ratio, subarray_ratio))
        if not x.shape[0] == p.shape[0] == s.shape[0]:
            raise ValueError("state and action row counts differ")
        fs = self.state_gcn(a_norm, self.state_fc(x))
        fp = self.power_gcn(a_norm, self.power_fc(p))
        fa = self.sub_gcn(a_norm, self.sub_fc(s))
        pooled = concat([fs, fp, fa], axis=1).mean(axis=0, keepdims=True)
        return self.out(self.shared(pooled)).sum()


def heads_to_ratio_tensors(heads: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Differentiable version of ``env.heads_to_ratios``."""
    p = heads["power_used"][:, 0:1] * heads["power_dist"]
    s = heads["sub_used"][:, 0:1] * heads["sub_dist"]
    return p, s


def actor_forward(actor: Actor, observation: Observation, adjacency=None) -> dict[str, np.ndarray]:
    a = observation.adjacency if adjacency is None else adjacency
    heads = actor.forward(observation.features, normalized_adjacency(a))
    return {k: v.data.copy() for k, v in heads.items()}


def critic_forward(critic: Critic, observation: Observation, power_ratio, subarray_ratio, adjacency=None) -> float:
    a = observation.adjacency if adjacency is None else adjacency
    return float(critic.forward(observation.features, power_ratio, subarray_ratio, normalized_adjacency(a)).data)


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def safe_init(actor: Actor, target_used_ratio: float = 0.95) -> Actor:
    """Bias both used/unused heads so a zero hidden state allocates ``target_used_ratio``."""
    if not 0.0 < target_used_ratio < 1.0:
        raise ValueError("target_used_ratio must lie in (0, 1)")
    for name in ("power_used", "sub_used"):
        actor.heads[name].b.data[:] = [[logit(target_used_ratio), 0.0]]
    for name in ("power_dist", "sub_dist"):
        actor.heads[name].b.data[:] = 0.0
    return actor


def _perturb_rows(values: np.ndarray, scale: float, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Zero-sum multiplicative Gaussian noise per row; rows that would go negative keep their values."""
    out = values.copy()
    noise = rng.standard_normal(values.shape) * (scale * values)
    noise -= noise.mean(axis=1, keepdims=True)
    discarded = 0
    for r in range(values.shape[0]):
        target = np.sum(values[r])
        cand = values[r] + noise[r]
        # rounding can leave the sum a few ulps off; push the residual into the largest entry
        for _ in range(4):
            resid = target - np.sum(cand)
            if resid == 0.0:
                break
            cand[np.argmax(cand)] += resid
        if np.any(cand < 0) or np.sum(cand) != target:
            discarded += 1
            continue
        out[r] = cand
    return out, discarded


def safe_explore(
    power_ratio: np.ndarray, subarray_ratio: np.ndarray, noise_scale: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, int]:
    """Perturb each UAV's power vector and Tx/Rx pair without changing their totals.

    Returns the perturbed ratios and the number of groups whose noise was discarded.
    """
    p = np.asarray(power_ratio, dtype=float)
    s = np.asarray(subarray_ratio, dtype=float)
    if noise_scale == 0:
        return p.copy(), s.copy(), 0
    p2, dp = _perturb_rows(p, noise_scale, rng)
    s2, ds = _perturb_rows(s, noise_scale, rng)
    return p2, s2, dp + ds


def uniform_baseline(observation: Observation, cfg: ScenarioConfig) -> ResourceAction:
    return _uniform_allocation(observation.topology, cfg.K, cfg.p_max, cfg.s_max)


@dataclass
class StepDiagnostics:
    critic_loss: float
    q: float
    discarded: int
    violations: int


class GloveAgent:
    """Actor, critic and their optimizers for one training run."""

    def __init__(self, cfg: ScenarioConfig, rng: np.random.Generator, self_node: bool | None = None):
        self.cfg = cfg
        self.n_features = cfg.K + 6
        self.self_node = cfg.self_node if self_node is None else self_node
        self.actor = Actor(rng, self.n_features, cfg.K, cfg.hidden_actor, self.self_node)
        self.critic = Critic(rng, self.n_features, cfg.K, cfg.hidden_critic)
        safe_init(self.actor, cfg.safe_init_target)
        self.actor_opt = Adam(self.actor.parameters(), cfg.lr_actor)
        self.critic_opt = Adam(self.critic.parameters(), cfg.lr_critic)

    # -- bookkeeping -------------------------------------------------------------

    def parameters(self) -> list[Tensor]:
        return self.actor.parameters() + self.critic.parameters()

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def architecture(self) -> dict[str, str]:
        return {
            "features": str(self.n_features),
            "K": str(self.cfg.K),
            "hidden_actor": str(self.cfg.hidden_actor),
            "hidden_critic": str(self.cfg.hidden_critic),
            "self_node": str(self.self_node).lower(),
        }

    def save(self, path) -> None:
        save_params(path, self.parameters(), self.architecture())

    def load(self, path) -> None:
        arrays, meta = load_params(path)
        mine = self.architecture()
        diff = {k: (meta.get(k), v) for k, v in mine.items() if meta.get(k) != v}
        if diff:
            raise ValueError(f"checkpoint architecture mismatch: {diff}")
        assign_params(self.parameters(), arrays)

    # -- acting ------------------------------------------------------------------------

    def ratios(self, observation: Observation) -> tuple[np.ndarray, np.ndarray]:
        return heads_to_ratios(actor_forward(self.actor, observation))

    def act(self, env: UavEnv, rng: np.random.Generator | None = None, noise_scale: float = 0.0):
        """Allocation for the current slot. Returns ``(action, discarded_groups)``."""
        p, s = self.ratios(env.observation)
        discarded = 0
        if noise_scale > 0:
            p, s, discarded = safe_explore(p, s, noise_scale, rng)
        return env.allocate(p, s), discarded

    def q_value(self, observation: Observation, p, s) -> Tensor:
        return self.critic.forward(observation.features, p, s, normalized_adjacency(observation.adjacency))

    # -- learning ------------------------------------------------------------------------

    def actor_update(self, state: Observation) -> None:
        """One Adam ascent step on Q(s, actor(s)); only actor parameters move."""
        self.actor_opt.zero_grad()
        a_norm = normalized_adjacency(state.adjacency)
        heads = self.actor.forward(state.features, a_norm)
        p, s = heads_to_ratio_tensors(heads)
        self.critic.forward(state.features, p, s, a_norm).backward()
        self.actor_opt.step("ascend")

    def critic_update(self, state: Observation, power_ratio, subarray_ratio, target: float) -> tuple[float, float]:
        """One Adam descent step on (target - Q(s, a))^2 with the target held fixed."""
        self.critic_opt.zero_grad()
        q = self.q_value(state, power_ratio, subarray_ratio)
        td = q - target
        loss = td * td
        loss.backward()
        self.critic_opt.step("descend")
        return float(loss.data), float(q.data)

    def train_step(self, env: UavEnv, rng: np.random.Generator):
        """One on-policy update. Returns ``(transition, reward, report, usage, action, diagnostics)``."""
        cfg = self.cfg
        state = env.observation
        action, discarded = self.act(env, rng, cfg.noise_scale)
        violations = env.violations(action)
        if violations:
            raise InfeasibleAction(f"{violations} constraint violations in the emitted action")
        next_state, reward, report, usage = env.step(action)

        p_next, s_next = self.ratios(next_state)
        q_next = float(self.q_value(next_state, p_next, s_next).data)
        discount = cfg.kappa if cfg.kappa_in_target else 1.0
        y = reward.r + discount * q_next

        # actor ascends Q(s, actor(s)) against the critic as it stood before this step
        self.actor_update(state)
        loss, q = self.critic_update(state, action.power_ratio, action.subarray_ratio, y)

        transition = Transition(state, action.power_ratio, action.subarray_ratio, reward.r, next_state)
        diag = StepDiagnostics(loss, q, discarded, violations)
        return transition, reward, report, usage, action, diag


def train_step(agent: GloveAgent, env: UavEnv, rng: np.random.Generator):
    return agent.train_step(env, rng)
