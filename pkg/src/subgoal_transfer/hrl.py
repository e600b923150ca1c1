"""Hierarchical learner policies, warm initialization, and RL training.

The high policy picks one of 24 relative subgoal offsets (the 5x5 window
minus center, off-board offsets masked); the low policy picks one of the 8
knight jumps (off-board jumps masked). Both are small softmax MLPs trained
with a discounted advantage actor-critic (one learned state-value baseline
per level): the cited deterministic-policy-gradient trainer assumes
continuous actions, so its closest discrete analogue is used instead.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .env import (
    Action,
    DEFAULT_HORIZON,
    EnvState,
    KNIGHT_JUMPS,
    PieceKind,
    Square,
    Task,
    legal_moves,
    reset,
    step,
    subgoal_window,
)
from .dataset import SubgoalSequence, Trajectory
from .mapper import MappingModel
from .seeding import derive_seed

log = logging.getLogger(__name__)

MODES = ("mapping-warm", "no-transfer", "expert-direct")

#: Canonical subgoal-offset order: row-major over the 5x5 window, no center.
WINDOW_OFFSETS = tuple(
    (df, dr)
    for dr in range(-2, 3)
    for df in range(-2, 3)
    if not (df == 0 and dr == 0)
)
_OFFSET_INDEX = {off: i for i, off in enumerate(WINDOW_OFFSETS)}
_JUMP_INDEX = {jump: i for i, jump in enumerate(KNIGHT_JUMPS)}

N_OFFSETS = len(WINDOW_OFFSETS)  # 24
N_JUMPS = len(KNIGHT_JUMPS)  # 8
HIGH_FEATURES = 64 + 2 + 64
LOW_FEATURES = HIGH_FEATURES + N_OFFSETS

#: Counters: out-of-window label projections, empty warm-init predictions.
diagnostics: dict[str, int] = {"window_projections": 0, "empty_predictions": 0}


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 20000
    horizon: int = DEFAULT_HORIZON
    v_noise: float = 0.1
    warm_epochs: int = 200
    low_budget: int = 4  # primitive moves per subgoal attempt
    gamma: float = 0.95
    # actor rate is deliberately small: the no-transfer baseline must still be
    # climbing at desk scale, as in the reference learning curves
    lr_actor: float = 1e-4
    lr_critic: float = 5e-3
    warm_lr: float = 1e-3  # supervised warm-init rate, decoupled from lr_actor
    seed: int = 0
    trials: int = 3
    bin_size: int = 100
    policy_hidden: int = 64
    per_step_high_rewards: bool = False  # emit r_high per primitive step

    def __post_init__(self) -> None:
        if self.episodes <= 0 or self.horizon <= 0 or self.low_budget <= 0:
            raise ValueError("episodes, horizon, low_budget must be positive")
        if not 0.0 <= self.v_noise <= 1.0:
            raise ValueError("v_noise must be in [0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.trials <= 0 or self.bin_size <= 0 or self.warm_epochs < 0:
            raise ValueError("trials, bin_size positive; warm_epochs non-negative")


@dataclass
class LearningCurve:
    mode: str
    trial: int
    bin_size: int
    returns: tuple[float, ...]

    def binned(self) -> list[float]:
        out = []
        for lo in range(0, len(self.returns), self.bin_size):
            chunk = self.returns[lo:lo + self.bin_size]
            out.append(sum(chunk) / len(chunk))
        return out


def high_features(state: EnvState, achieved: Square | None) -> np.ndarray:
    """One-hot agent square (+) capture flags (+) one-hot last achieved subgoal."""
    x = np.zeros(HIGH_FEATURES)
    x[state.agent.index] = 1.0
    x[64] = 1.0 if state.captured_a else 0.0
    x[65] = 1.0 if state.captured_b else 0.0
    if achieved is not None:
        x[66 + achieved.index] = 1.0
    return x


def low_features(state: EnvState, achieved: Square | None, offset_idx: int) -> np.ndarray:
    x = np.zeros(LOW_FEATURES)
    x[:HIGH_FEATURES] = high_features(state, achieved)
    x[HIGH_FEATURES + offset_idx] = 1.0
    return x


def window_offset_index(agent: Square, target: Square) -> int | None:
    """Index of target's offset in the subgoal window, or None if outside."""
    return _OFFSET_INDEX.get((target.file - agent.file, target.rank - agent.rank))


def project_to_window(agent: Square, target: Square) -> tuple[Square, bool]:
    """Nearest window square (Chebyshev, then square-index tie-break)."""
    if window_offset_index(agent, target) is not None:
        return target, False
    best = min(
        subgoal_window(agent),
        key=lambda sq: (max(abs(sq.file - target.file), abs(sq.rank - target.rank)), sq.index),
    )
    return best, True


def legal_offset_indices(agent: Square) -> list[int]:
    out = []
    for i, (df, dr) in enumerate(WINDOW_OFFSETS):
        f, r = agent.file + df, agent.rank + dr
        if 0 <= f <= 7 and 0 <= r <= 7:
            out.append(i)
    return out


class _Mlp:
    """features -> tanh hidden -> linear head."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int,
                 *, rng: np.random.Generator, name: str):
        self.hidden_layer = nn.Dense(in_dim, hidden, "tanh", rng=rng, name=f"{name}.h")
        self.out_layer = nn.Dense(hidden, out_dim, "identity", rng=rng, name=f"{name}.o")

    def parameters(self) -> list[nn.Parameter]:
        return self.hidden_layer.parameters() + self.out_layer.parameters()

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        h, c1 = self.hidden_layer.forward(x)
        y, c2 = self.out_layer.forward(h)
        return y, (c1, c2)

    def backward(self, cache: tuple, dy: np.ndarray) -> np.ndarray:
        c1, c2 = cache
        dh = self.out_layer.backward(c2, dy)
        return self.hidden_layer.backward(c1, dh)


def _masked_softmax(logits: np.ndarray, legal: list[int]) -> np.ndarray:
    probs = np.zeros_like(logits)
    sub = logits[legal]
    sub = np.exp(sub - sub.max())
    probs[legal] = sub / sub.sum()
    return probs


class _SoftmaxPolicy:
    """Masked softmax policy over a fixed discrete action set."""

    n_actions: int
    in_dim: int

    def __init__(self, in_dim: int, n_actions: int, hidden: int, seed: int, name: str):
        self.in_dim = in_dim
        self.n_actions = n_actions
        self.hidden = hidden
        self.seed = seed
        self._name = name
        rng = np.random.default_rng(seed)
        self.net = _Mlp(in_dim, hidden, n_actions, rng=rng, name=name)

    def parameters(self) -> list[nn.Parameter]:
        return self.net.parameters()

    def distribution(self, feats: np.ndarray, legal: list[int]) -> tuple[np.ndarray, tuple]:
        if not legal:
            raise ValueError("no legal actions to distribute over")
        logits, cache = self.net.forward(feats)
        return _masked_softmax(logits, legal), cache

    def nll_grad(self, cache: tuple, probs: np.ndarray, action: int,
                 weight: float = 1.0) -> None:
        """Accumulate grad of weight * -log(probs[action]) w.r.t. parameters."""
        dlogits = probs * weight
        dlogits[action] -= weight
        self.net.backward(cache, dlogits)

    def clone(self):
        out = type(self)(hidden=self.hidden, seed=self.seed)
        for dst, src in zip(out.parameters(), self.parameters()):
            dst.value[...] = src.value
        return out


class HighPolicy(_SoftmaxPolicy):
    """State features -> distribution over the 24 relative subgoal offsets."""

    def __init__(self, hidden: int = 64, seed: int = 0):
        super().__init__(HIGH_FEATURES, N_OFFSETS, hidden, seed, "high")


class LowPolicy(_SoftmaxPolicy):
    """(State features (+) subgoal offset one-hot) -> distribution over jumps."""

    def __init__(self, hidden: int = 64, seed: int = 0):
        super().__init__(LOW_FEATURES, N_JUMPS, hidden, seed, "low")


# ---------------------------------------------------------------------------
# Warm initialization (high level) and supervised pretraining (low level)
# ---------------------------------------------------------------------------

def chain_supervision_states(task: Task, predicted: SubgoalSequence):
    """State-chain the prediction into supervised pairs.

    Yields (state, achieved, label_square, was_projected) per prediction
    token: the agent is assumed to achieve each (window-projected) subgoal in
    turn, with capture flags updated along the way.
    """
    state = reset(task)
    achieved: Square | None = None
    for target in predicted.tokens:
        label, projected = project_to_window(state.agent, target)
        yield state, achieved, label, projected
        achieved = label
        state = EnvState(
            agent=label,
            captured_a=state.captured_a or label == task.pawn_a,
            captured_b=state.captured_b or label == task.pawn_b,
            steps_elapsed=state.steps_elapsed,
        )


def projected_prediction(task: Task, predicted: SubgoalSequence) -> list[Square]:
    """The window-projected subgoal chain that warm-init teaches."""
    return [label for _, _, label, _ in chain_supervision_states(task, predicted)]


def warm_init_high(policy: HighPolicy, predicted: SubgoalSequence, task: Task,
                   cfg: TrainConfig, rng: np.random.Generator | None = None) -> HighPolicy:
    """Supervised warm start of the high policy on a predicted subgoal chain.

    Each epoch, each pair keeps the predicted label with probability
    1 - v_noise, otherwise a uniformly random member of the current subgoal
    window. Out-of-window predictions are projected to the nearest window
    square (counted in `diagnostics`).
    """
    if len(predicted) == 0:
        diagnostics["empty_predictions"] += 1
        log.warning("warm_init_high: empty prediction for task %d; policy unchanged",
                    task.task_id)
        return policy
    if rng is None:
        rng = np.random.default_rng(derive_seed(cfg.seed, "warm-init"))

    pairs = []
    for state, achieved, label, projected in chain_supervision_states(task, predicted):
        if projected:
            diagnostics["window_projections"] += 1
        legal = legal_offset_indices(state.agent)
        label_idx = window_offset_index(state.agent, label)
        assert label_idx is not None
        pairs.append((high_features(state, achieved), label_idx, legal))

    adam = nn.Adam(policy.parameters(), lr=cfg.warm_lr)
    for _ in range(cfg.warm_epochs):
        adam.zero_grad()
        for feats, label_idx, legal in pairs:
            if rng.random() < cfg.v_noise:
                label_used = legal[rng.integers(len(legal))]
            else:
                label_used = label_idx
            probs, cache = policy.distribution(feats, legal)
            policy.nll_grad(cache, probs, label_used, weight=1.0 / len(pairs))
        adam.step()
    return policy


def greedy_high_rollout(policy: HighPolicy, task: Task, n_steps: int) -> list[Square]:
    """Chain the policy's argmax subgoals from the start state."""
    state = reset(task)
    achieved: Square | None = None
    out = []
    for _ in range(n_steps):
        legal = legal_offset_indices(state.agent)
        probs, _ = policy.distribution(high_features(state, achieved), legal)
        idx = int(np.argmax(probs))
        df, dr = WINDOW_OFFSETS[idx]
        sq = Square(state.agent.file + df, state.agent.rank + dr)
        out.append(sq)
        achieved = sq
        state = EnvState(
            agent=sq,
            captured_a=state.captured_a or sq == task.pawn_a,
            captured_b=state.captured_b or sq == task.pawn_b,
            steps_elapsed=state.steps_elapsed,
        )
    return out


def demo_triples(demos: list[Trajectory], tasks: list[Task]):
    """((state, subgoal=next visited square), action) triples from knight demos."""
    triples = []
    for traj in demos:
        if traj.piece is not PieceKind.KNIGHT:
            raise ValueError("low-level demos must be knight trajectories")
        task = tasks[traj.task_id]
        state = reset(task)
        achieved: Square | None = None
        for i, action in enumerate(traj.actions):
            subgoal = traj.states[i + 1]
            offset_idx = window_offset_index(state.agent, subgoal)
            assert offset_idx is not None  # knight jumps stay inside the window
            feats = low_features(state, achieved, offset_idx)
            legal = [j for j, jump in enumerate(KNIGHT_JUMPS)
                     if Action(*jump) in legal_moves(PieceKind.KNIGHT, state.agent, state, task)]
            label = _JUMP_INDEX[(action.dfile, action.drank)]
            triples.append((feats, label, legal))
            achieved = subgoal
            state = EnvState(
                agent=subgoal,
                captured_a=state.captured_a or subgoal == task.pawn_a,
                captured_b=state.captured_b or subgoal == task.pawn_b,
                steps_elapsed=state.steps_elapsed + 1,
            )
    return triples


def pretrain_low(policy: LowPolicy, demos: list[Trajectory], tasks: list[Task],
                 *, epochs: int = 60, lr: float = 1e-3, minibatch: int = 32,
                 seed: int = 0) -> LowPolicy:
    """Supervised fit of the low policy on demonstration triples (no noise)."""
    if not demos:
        raise ValueError("no demonstration trajectories")
    triples = demo_triples(demos, tasks)
    rng = np.random.default_rng(derive_seed(seed, "pretrain-low"))
    adam = nn.Adam(policy.parameters(), lr=lr)
    for _ in range(epochs):
        order = rng.permutation(len(triples))
        for lo in range(0, len(order), minibatch):
            batch = [triples[i] for i in order[lo:lo + minibatch]]
            adam.zero_grad()
            for feats, label, legal in batch:
                probs, cache = policy.distribution(feats, legal)
                policy.nll_grad(cache, probs, label, weight=1.0 / len(batch))
            adam.step()
    return policy


# ---------------------------------------------------------------------------
# Episode rollouts and the actor-critic training loop
# ---------------------------------------------------------------------------

@dataclass
class AttemptRecord:
    subgoal: Square
    reached: bool
    captured: bool  # a pawn was captured on the arrival step at the subgoal
    r_high: float
    n_steps: int


@dataclass
class EpisodeResult:
    high_return: float
    attempts: list[AttemptRecord]
    captures: int  # pawns captured during the episode (any landing)
    steps: int
    all_captured: bool


@dataclass
class _EpisodeData:
    high_decisions: list = field(default_factory=list)  # (feats, cache, probs, action)
    high_rewards: list = field(default_factory=list)
    low_attempts: list = field(default_factory=list)  # list of step lists


class HierarchyTrainer:
    """Owns one task's policies, critics and optimizers for one training run."""

    def __init__(self, high: HighPolicy, low: LowPolicy, task: Task,
                 cfg: TrainConfig, rng: np.random.Generator | None = None):
        self.high = high
        self.low = low
        self.task = task
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        crng = np.random.default_rng(derive_seed(cfg.seed, "critics"))
        self.high_critic = _Mlp(HIGH_FEATURES, cfg.policy_hidden, 1,
                                rng=crng, name="high_critic")
        self.low_critic = _Mlp(LOW_FEATURES, cfg.policy_hidden, 1,
                               rng=crng, name="low_critic")
        self.opt_high = nn.Adam(high.parameters(), lr=cfg.lr_actor)
        self.opt_low = nn.Adam(low.parameters(), lr=cfg.lr_actor)
        self.opt_high_critic = nn.Adam(self.high_critic.parameters(), lr=cfg.lr_critic)
        self.opt_low_critic = nn.Adam(self.low_critic.parameters(), lr=cfg.lr_critic)

    def play_episode(self, collect: bool = False) -> tuple[EpisodeResult, _EpisodeData]:
        cfg, task, rng = self.cfg, self.task, self.rng
        state = reset(task)
        achieved: Square | None = None
        data = _EpisodeData()
        attempts: list[AttemptRecord] = []
        captures = 0

        while not state.all_captured and state.steps_elapsed < cfg.horizon:
            feats_h = high_features(state, achieved)
            legal_h = legal_offset_indices(state.agent)
            probs_h, cache_h = self.high.distribution(feats_h, legal_h)
            g_idx = int(rng.choice(N_OFFSETS, p=probs_h))
            df, dr = WINDOW_OFFSETS[g_idx]
            subgoal = Square(state.agent.file + df, state.agent.rank + dr)

            reached = False
            captured_at_arrival = False
            step_r_high_sum = 0.0
            low_steps = []
            for _ in range(cfg.low_budget):
                if state.all_captured or state.steps_elapsed >= cfg.horizon:
                    break
                off_idx = window_offset_index(state.agent, subgoal)
                if off_idx is None:
                    proj, _ = project_to_window(state.agent, subgoal)
                    off_idx = window_offset_index(state.agent, proj)
                feats_l = low_features(state, achieved, off_idx)
                moves = legal_moves(PieceKind.KNIGHT, state.agent, state, task)
                legal_l = [_JUMP_INDEX[(a.dfile, a.drank)] for a in moves]
                probs_l, cache_l = self.low.distribution(feats_l, legal_l)
                a_idx = int(rng.choice(N_JUMPS, p=probs_l))
                outcome = step(PieceKind.KNIGHT, state, Action(*KNIGHT_JUMPS[a_idx]),
                               task, subgoal, cfg.horizon)
                if outcome.r_high > 0:
                    captures += 1
                step_r_high_sum += outcome.r_high
                state = outcome.next_state
                low_steps.append((feats_l, cache_l, probs_l, a_idx, outcome.r_low))
                if state.agent == subgoal:
                    reached = True
                    captured_at_arrival = outcome.r_high > 0
                    break

            if cfg.per_step_high_rewards:
                r_high = step_r_high_sum
            else:
                r_high = 10.0 if (reached and captured_at_arrival) else -1.0
            attempts.append(AttemptRecord(
                subgoal=subgoal, reached=reached, captured=captured_at_arrival,
                r_high=r_high, n_steps=len(low_steps)))
            if collect:
                data.high_decisions.append((feats_h, cache_h, probs_h, g_idx))
                data.high_rewards.append(r_high)
                data.low_attempts.append(low_steps)
            if reached:
                achieved = subgoal

        result = EpisodeResult(
            high_return=sum(a.r_high for a in attempts),
            attempts=attempts,
            captures=captures,
            steps=state.steps_elapsed,
            all_captured=state.all_captured,
        )
        return result, data

    def update(self, data: _EpisodeData) -> None:
        cfg = self.cfg
        if data.high_decisions:
            n = len(data.high_decisions)
            returns = _discounted(data.high_rewards, cfg.gamma)
            self.opt_high.zero_grad()
            self.opt_high_critic.zero_grad()
            for (feats, cache, probs, action), ret in zip(data.high_decisions, returns):
                value, vcache = self.high_critic.forward(feats)
                adv = ret - float(value[0])
                self.high.nll_grad(cache, probs, action, weight=adv / n)
                self.high_critic.backward(vcache, np.array([(float(value[0]) - ret) / n]))
            self.opt_high.step()
            self.opt_high_critic.step()

        steps = [(s, ret)
                 for attempt in data.low_attempts
                 for s, ret in zip(attempt, _discounted(
                     [st[4] for st in attempt], cfg.gamma))]
        if steps:
            n = len(steps)
            self.opt_low.zero_grad()
            self.opt_low_critic.zero_grad()
            for (feats, cache, probs, action, _), ret in steps:
                value, vcache = self.low_critic.forward(feats)
                adv = ret - float(value[0])
                self.low.nll_grad(cache, probs, action, weight=adv / n)
                self.low_critic.backward(vcache, np.array([(float(value[0]) - ret) / n]))
            self.opt_low.step()
            self.opt_low_critic.step()


def _discounted(rewards: list[float], gamma: float) -> list[float]:
    out = []
    g = 0.0
    for r in reversed(rewards):
        g = r + gamma * g
        out.append(g)
    out.reverse()
    return out


def rollout_episode(high: HighPolicy, low: LowPolicy, task: Task, cfg: TrainConfig,
                    rng: np.random.Generator) -> EpisodeResult:
    """One episode without learning (shared mechanics with the trainer)."""
    trainer = HierarchyTrainer(high, low, task, cfg, rng)
    result, _ = trainer.play_episode(collect=False)
    return result


def train_hierarchy(high: HighPolicy, low: LowPolicy, task: Task, cfg: TrainConfig,
                    rng: np.random.Generator | None = None,
                    mode: str = "unnamed", trial: int = 0) -> tuple[HighPolicy, LowPolicy, LearningCurve]:
    """Algorithm-2-style loop: roll episodes, update both levels after each."""
    trainer = HierarchyTrainer(high, low, task, cfg, rng)
    returns = []
    for _ in range(cfg.episodes):
        result, data = trainer.play_episode(collect=True)
        trainer.update(data)
        returns.append(result.high_return)
    nn.assert_finite(high.parameters())
    nn.assert_finite(low.parameters())
    curve = LearningCurve(mode=mode, trial=trial, bin_size=cfg.bin_size,
                          returns=tuple(returns))
    return high, low, curve


def run_baseline(mode: str, task: Task, mapper: MappingModel | None,
                 expert_seq: SubgoalSequence | None, low_pretrained: LowPolicy,
                 cfg: TrainConfig,
                 predicted: SubgoalSequence | None = None) -> list[LearningCurve]:
    """Run one transfer mode for cfg.trials seeded trials; returns the curves.

    mapping-warm warm-initializes the high policy with the mapper's predicted
    learner subgoals (or `predicted` when supplied directly), expert-direct
    with the bishop's own subgoal sequence, and no-transfer starts fresh. All
    modes share the pretrained low policy.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "mapping-warm":
        if predicted is None and mapper is None:
            raise ValueError("mapping-warm mode needs a trained mapper or a prediction")
        if predicted is None:
            if expert_seq is None:
                raise ValueError("mapping-warm mode needs the expert subgoal sequence")
            predicted = mapper.predict(expert_seq, task)
    if mode == "expert-direct" and expert_seq is None:
        raise ValueError("expert-direct mode needs the expert subgoal sequence")

    curves = []
    for trial in range(cfg.trials):
        trial_seed = derive_seed(cfg.seed, f"{mode}-trial{trial}")
        trial_cfg = replace(cfg, seed=trial_seed)
        rng = np.random.default_rng(trial_seed)
        high = HighPolicy(hidden=cfg.policy_hidden, seed=derive_seed(trial_seed, "high-init"))
        low = low_pretrained.clone()
        if mode == "mapping-warm":
            warm_init_high(high, predicted, task, trial_cfg,
                           rng=np.random.default_rng(derive_seed(trial_seed, "warm")))
        elif mode == "expert-direct":
            warm_init_high(high, expert_seq, task, trial_cfg,
                           rng=np.random.default_rng(derive_seed(trial_seed, "warm")))
        _, _, curve = train_hierarchy(high, low, task, trial_cfg, rng=rng,
                                      mode=mode, trial=trial)
        curves.append(curve)
    return curves


# ---------------------------------------------------------------------------
# Curve files: header `task,mode,trial,bin_size`, then `bin_index,mean_return`.
# ---------------------------------------------------------------------------

def save_curve(curve: LearningCurve, task: Task, path: str,
               header_lines: list[str] | None = None, raw: bool = False) -> None:
    lines = list(header_lines or [])
    lines.append("task,mode,trial,bin_size")
    lines.append(f"{task.task_id},{curve.mode},{curve.trial},{curve.bin_size}")
    lines.append("bin_index,mean_return")
    for i, mean in enumerate(curve.binned()):
        lines.append(f"{i},{mean:.6f}")
    if raw:
        lines.append("episode,return")
        for i, r in enumerate(curve.returns):
            lines.append(f"{i},{r:.6f}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_curve_bins(path: str) -> tuple[dict[str, str], list[float]]:
    """Read a curve file; returns ({task, mode, trial, bin_size}, bin means)."""
    meta: dict[str, str] = {}
    bins: list[float] = []
    section = None
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line == "task,mode,trial,bin_size":
                section = "meta"
                continue
            if line == "bin_index,mean_return":
                section = "bins"
                continue
            if line == "episode,return":
                section = "raw"
                continue
            if section == "meta":
                task_id, mode, trial, bin_size = line.split(",")
                meta = {"task": task_id, "mode": mode, "trial": trial,
                        "bin_size": bin_size}
            elif section == "bins":
                _, mean = line.split(",")
                bins.append(float(mean))
    if not meta:
        raise ValueError(f"{path}: not a curve file")
    return meta, bins
