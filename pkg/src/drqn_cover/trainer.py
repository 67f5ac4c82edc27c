"""Double-DQN training loop with prioritized replay and best-path tracking."""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import grid_env as env
from .config import TrainConfig
from .errors import AllMaskedError, InsufficientSamplesError, SchemaMismatchError
from .nn import Adam, mse_loss
from .qmodel import RECURRENT, LstmState, QNetwork, masked_argmax, masked_argmax_batch
from .replay import PriorityBuffer, Transition, beta_schedule
from .state_codec import encode

CSV_HEADER = ("episode", "steps", "coverage_pct", "violations", "reward", "epsilon", "is_best")


@dataclass
class EpisodeRecord:
    index: int
    steps: int
    coverage_pct: float
    violations: int
    total_reward: float
    epsilon: float
    is_best: bool

    @property
    def full_coverage(self) -> bool:
        return self.coverage_pct >= 100.0


@dataclass
class BestSolution:
    path: list[tuple[int, int]]
    reward: float
    episode: int

    def to_json(self, grid: env.GridMap, budget: int) -> dict:
        return {
            "map_hash": map_hash(grid),
            "budget": budget,
            "path": [list(p) for p in self.path],
            "reward": self.reward,
            "episode": self.episode,
        }


@dataclass
class TrainingLog:
    records: list[EpisodeRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_HEADER) + "\n")
        for r in self.records:
            buf.write(f"{r.index},{r.steps},{r.coverage_pct:.6f},{r.violations},{r.total_reward:.6f},"
                      f"{r.epsilon:.6f},{int(r.is_best)}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainingLog":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise SchemaMismatchError(f"unexpected metrics header {header!r}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise SchemaMismatchError(f"line {lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                records.append(EpisodeRecord(int(row[0]), int(row[1]), float(row[2]), int(row[3]),
                                             float(row[4]), float(row[5]), row[6] == "1"))
            except ValueError as exc:
                raise SchemaMismatchError(f"line {lineno}: {exc}") from None
        return cls(records)


def map_hash(grid: env.GridMap) -> str:
    return hashlib.sha256(env.render_map(grid).encode("utf-8")).hexdigest()


def params_hash(net: QNetwork) -> str:
    h = hashlib.sha256()
    for name, arr in net.state_dict().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def epsilon(episode: int, cfg: TrainConfig) -> float:
    return cfg.eps_end + (cfg.eps_start - cfg.eps_end) * math.exp(-episode / cfg.eps_decay)


def moving_average(series, window=100) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` entries average what is available."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def select_action(net: QNetwork, obs, hidden, mask, eps: float, rng: np.random.Generator):
    """Epsilon-greedy over legal actions.  The forward pass always runs so the
    recurrent state tracks the trajectory even on exploratory steps."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise AllMaskedError("no legal action")
    q, hidden = net.q_values(obs, hidden)
    if rng.random() < eps:
        return int(rng.choice(np.flatnonzero(mask))), hidden
    return masked_argmax(q, mask), hidden


def td_target(batch, policy: QNetwork, target: QNetwork, gamma: float, hiddens=(None, None)) -> np.ndarray:
    """Double-DQN target: policy net picks the next action, target net values it.

    ``hiddens`` gives the LSTM states (policy, target) to evaluate ``x'`` from;
    None means zeros.
    """
    q_policy, _ = policy.forward(batch.next_states, batch.next_budgets, hiddens[0], training=False)
    best = masked_argmax_batch(q_policy, batch.next_masks)
    q_target, _ = target.forward(batch.next_states, batch.next_budgets, hiddens[1], training=False)
    bootstrap = q_target[np.arange(len(best)), best].astype(np.float64)
    live = ~batch.dones & batch.next_masks.any(axis=1)
    return batch.rewards + gamma * np.where(live, bootstrap, 0.0)


def burn_in(net: QNetwork, states, budgets, valid):
    """Advance a zero LSTM state over ``(L, m, ...)`` history without gradients.

    Each row starts at its first valid entry, so a short history reproduces
    the rollout state exactly.
    """
    hidden = net.initial_state(states.shape[1])
    for k in range(states.shape[0]):
        keep = valid[k]
        if not keep.any():
            continue
        _, nxt = net.forward(states[k], budgets[k], hidden, training=False)
        keep = keep[:, None]
        hidden = LstmState(np.where(keep, nxt.hidden, hidden.hidden), np.where(keep, nxt.cell, hidden.cell))
    return hidden


def train_step(policy: QNetwork, target: QNetwork, buffer: PriorityBuffer, optimizer: Adam, cfg: TrainConfig,
               beta: float = 1.0):
    """One prioritized minibatch regression step; returns the loss, or None before warm-up."""
    if len(buffer) < max(cfg.batch_size, cfg.warmup):
        return None
    batch, indices, weights = buffer.sample(cfg.batch_size, beta)
    if cfg.burn_in_len and policy.variant == RECURRENT:
        hist = buffer.history(indices, cfg.burn_in_len)
        h_policy, h_target = burn_in(policy, *hist), burn_in(target, *hist)
        _, h_policy_next = policy.forward(batch.states, batch.budgets, h_policy, training=False)
        _, h_target_next = target.forward(batch.states, batch.budgets, h_target, training=False)
        y = td_target(batch, policy, target, cfg.gamma, (h_policy_next, h_target_next))
        return regress(policy, optimizer, batch, y, weights, buffer, indices, hidden=h_policy)
    y = td_target(batch, policy, target, cfg.gamma)
    return regress(policy, optimizer, batch, y, weights, buffer, indices)


def regress(policy, optimizer, batch, y, weights, buffer=None, indices=None, hidden=None):
    """Weighted MSE step on the taken actions' Q-values; other outputs get zero gradient."""
    policy.zero_grad()
    q, _ = policy.forward(batch.states, batch.budgets, hidden, training=True)
    rows = np.arange(len(batch.actions))
    pred = q[rows, batch.actions].astype(np.float64)
    loss, dpred = mse_loss(pred, y, weights)
    dq = np.zeros_like(q)
    dq[rows, batch.actions] = dpred
    policy.backward(dq, input_grad=False)
    optimizer.step()
    if buffer is not None:
        buffer.update_priorities(indices, y - pred)
    return loss


def sync_target(policy: QNetwork, target: QNetwork, episode: int, tau: int) -> bool:
    """Copy policy into target when ``episode`` (count of finished episodes) is a multiple of ``tau``."""
    if episode > 0 and episode % tau == 0:
        target.copy_from(policy)
        return True
    return False


def build_network(grid: env.GridMap, cfg: TrainConfig, seed=None) -> QNetwork:
    return QNetwork(cfg.variant, grid.shape, cfg.kernel, cfg.conv_channels, cfg.hidden_size,
                    seed=cfg.seed if seed is None else seed, dtype=np.dtype(cfg.dtype))


class Trainer:
    """Owns networks, replay buffer and RNG for one training run."""

    def __init__(self, grid: env.GridMap, cfg: TrainConfig):
        self.grid, self.cfg = grid, cfg
        self.budget = cfg.resolve_budget(grid.n)
        net_seed, env_seed, buf_seed = np.random.SeedSequence(cfg.seed).spawn(3)
        self.policy = build_network(grid, cfg, seed=net_seed)
        self.target = self.policy.clone()
        self.optimizer = Adam([self.policy.packed], lr=cfg.lr)
        self.buffer = PriorityBuffer(cfg.buffer_size, cfg.alpha, rng=np.random.default_rng(buf_seed))
        self.rng = np.random.default_rng(env_seed)
        self.log = TrainingLog()
        self.best: BestSolution | None = None
        self.sync_count = 0
        self.total_steps = 0
        self.losses: list[float] = []
        self.last_path: list[tuple[int, int]] = []

    def _train(self, beta):
        loss = train_step(self.policy, self.target, self.buffer, self.optimizer, self.cfg, beta)
        if loss is not None:
            self.losses.append(loss)

    def run_episode(self, episode: int) -> tuple[EpisodeRecord, list]:
        cfg, grid = self.cfg, self.grid
        eps = epsilon(episode, cfg)
        beta = beta_schedule(episode, cfg.episodes, cfg.beta_start, cfg.beta_end)
        cap = cfg.resolve_cap(*grid.shape)

        state = env.reset(grid, self.budget)
        hidden = self.policy.initial_state()
        obs = encode(grid, state)
        mask = env.action_mask(grid, state)
        path = [grid.start]
        total = 0.0
        while not state.done and state.step < cap:
            action, hidden = select_action(self.policy, obs, hidden, mask, eps, self.rng)
            state, out = env.step(grid, state, action)
            next_obs = encode(grid, state)
            next_mask = env.action_mask(grid, state)
            # Only true coverage completion cuts the bootstrap; a step cap is a truncation.
            done = out.terminal_reason is env.TerminalReason.FULL_COVERAGE
            self.buffer.push(Transition(obs, action, out.reward, next_obs, next_mask, done, state.step - 1))
            total += out.reward
            path.append(state.position)
            self.total_steps += 1
            if not cfg.update_per_episode and self.total_steps % cfg.train_every == 0:
                self._train(beta)
            obs, mask = next_obs, next_mask
        if cfg.update_per_episode:
            self._train(beta)

        coverage = env.coverage_fraction(grid, state)
        is_best = coverage >= 1.0 and state.violations == 0
        record = EpisodeRecord(episode, state.step, 100.0 * coverage, state.violations, total, eps, is_best)
        return record, path

    def run(self, callback=None) -> tuple[TrainingLog, BestSolution | None]:
        for episode in range(self.cfg.episodes):
            record, path = self.run_episode(episode)
            self.log.records.append(record)
            self.last_path = path
            if record.is_best and (self.best is None or record.total_reward > self.best.reward):
                self.best = BestSolution(path, record.total_reward, episode)
            if sync_target(self.policy, self.target, episode + 1, self.cfg.target_sync):
                self.sync_count += 1
            if callback is not None:
                callback(self, record)
        return self.log, self.best


def run_training(grid: env.GridMap, cfg: TrainConfig, callback=None):
    return Trainer(grid, cfg).run(callback)


def evaluate(net: QNetwork, grid: env.GridMap, cfg: TrainConfig, variant=None):
    """Greedy rollout from a fresh hidden state.  Returns ``(record, path)``."""
    from .errors import VariantMismatchError

    if isinstance(net, (str, bytes)) or hasattr(net, "__fspath__"):
        net = QNetwork.load(net, variant=variant or cfg.variant, dtype=np.dtype(cfg.dtype))
    elif variant is not None and net.variant != variant:
        raise VariantMismatchError(f"network is {net.variant!r}, requested {variant!r}")
    budget = cfg.resolve_budget(grid.n)
    cap = cfg.resolve_cap(*grid.shape)
    state = env.reset(grid, budget)
    hidden = net.initial_state()
    path = [grid.start]
    total = 0.0
    while not state.done and state.step < cap:
        q, hidden = net.q_values(encode(grid, state), hidden)
        action = masked_argmax(q, env.action_mask(grid, state))
        state, out = env.step(grid, state, action)
        total += out.reward
        path.append(state.position)
    coverage = env.coverage_fraction(grid, state)
    record = EpisodeRecord(0, state.step, 100.0 * coverage, state.violations, total, 0.0,
                           coverage >= 1.0 and state.violations == 0)
    return record, path


@dataclass
class Summary:
    episodes: int
    full_coverage: int
    no_violation: int
    best: int
    max_reward: float | None

    @property
    def max_reward_text(self) -> str:
        return "NA" if self.max_reward is None else f"{self.max_reward:.2f}"


def summarize(records, limit=None) -> Summary:
    records = list(records)[:limit] if limit else list(records)
    best = [r for r in records if r.is_best]
    return Summary(
        episodes=len(records),
        full_coverage=sum(r.full_coverage for r in records),
        no_violation=sum(r.violations == 0 for r in records),
        best=len(best),
        max_reward=max((r.total_reward for r in best), default=None),
    )
