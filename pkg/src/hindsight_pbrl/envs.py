"""Tabular MDPs, rollouts, and an exact value-iteration oracle.

The five-state gambling MDP is the package's diagnostic environment: a
risky action that usually lands in a penalized state but occasionally in
a rewarded one, versus a safe action with a neutral outcome. Random MDPs
provide seeded test beds for property tests and distribution-shift
experiments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PROB_ATOL = 1e-9

# gambling MDP state/action indices
S1, S_GOOD, S_BAD, S_AVG, S_TERM = 0, 1, 2, 3, 4
A1, A2, A3 = 0, 1, 2


class InvalidDimensionError(ValueError):
    pass


@dataclass(frozen=True)
class MDPSpec:
    """Ground-truth tabular MDP; the reward array is hidden from learners."""

    num_states: int
    num_actions: int
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray      # (S, A)
    terminal: np.ndarray    # (S,) bool
    initial_dist: np.ndarray  # (S,)
    horizon: int
    name: str = "mdp"

    def __post_init__(self):
        object.__setattr__(self, "transition",
                           np.asarray(self.transition, dtype=np.float64))
        object.__setattr__(self, "reward",
                           np.asarray(self.reward, dtype=np.float64))
        object.__setattr__(self, "terminal",
                           np.asarray(self.terminal, dtype=bool))
        object.__setattr__(self, "initial_dist",
                           np.asarray(self.initial_dist, dtype=np.float64))
        self.validate()
        self.transition.setflags(write=False)
        self.reward.setflags(write=False)
        self.terminal.setflags(write=False)
        self.initial_dist.setflags(write=False)

    def validate(self) -> None:
        S, A = self.num_states, self.num_actions
        if self.transition.shape != (S, A, S):
            raise InvalidDimensionError(f"transition must be ({S},{A},{S})")
        if self.reward.shape != (S, A):
            raise InvalidDimensionError(f"reward must be ({S},{A})")
        if self.terminal.shape != (S,) or self.initial_dist.shape != (S,):
            raise InvalidDimensionError("terminal/initial_dist must be (S,)")
        if np.any(self.transition < -PROB_ATOL) or np.any(self.transition > 1 + PROB_ATOL):
            raise ValueError("transition probabilities outside [0, 1]")
        rows = self.transition.sum(axis=2)
        if not np.allclose(rows, 1.0, atol=PROB_ATOL):
            raise ValueError("transition rows must sum to 1")
        if not np.isclose(self.initial_dist.sum(), 1.0, atol=PROB_ATOL):
            raise ValueError("initial distribution must sum to 1")
        for s in np.flatnonzero(self.terminal):
            for a in range(A):
                if not np.isclose(self.transition[s, a, s], 1.0, atol=PROB_ATOL):
                    raise ValueError(f"terminal state {s} must self-loop")
                if self.reward[s, a] != 0.0:
                    raise ValueError(f"terminal state {s} must have zero reward")
        if self.horizon < 1:
            raise InvalidDimensionError("horizon must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "terminal": self.terminal.tolist(),
            "initial_dist": self.initial_dist.tolist(),
            "horizon": self.horizon,
            "name": self.name,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "MDPSpec":
        return MDPSpec(
            num_states=int(d["num_states"]),
            num_actions=int(d["num_actions"]),
            transition=np.asarray(d["transition"]),
            reward=np.asarray(d["reward"]),
            terminal=np.asarray(d["terminal"]),
            initial_dist=np.asarray(d["initial_dist"]),
            horizon=int(d["horizon"]),
            name=d.get("name", "mdp"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), sort_keys=True) + "\n")

    @staticmethod
    def load(path: str | Path) -> "MDPSpec":
        return MDPSpec.from_json_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Trajectory:
    """One episode of paired (s_t, a_t) steps plus the closing state.

    `states` keeps the state reached after the final action (len(actions)+1
    entries) so that transitions, next states, and terminal flags can be
    reconstructed from the stored sequence alone.
    """

    states: tuple[int, ...]
    actions: tuple[int, ...]
    rewards: tuple[float, ...] | None = None  # oracle-only; hidden from learners

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise InvalidDimensionError(
                "trajectory must store len(actions) + 1 states")
        if self.rewards is not None and len(self.rewards) != len(self.actions):
            raise InvalidDimensionError("one reward per action")

    @property
    def length(self) -> int:
        return len(self.actions)

    def without_rewards(self) -> "Trajectory":
        return Trajectory(self.states, self.actions, None)


def gambling_mdp() -> MDPSpec:
    """Five-state MDP with one risky and one safe action.

    From the start state, the risky action reaches the rewarding state 10%
    of the time and the penalizing state otherwise; the safe action always
    reaches the neutral state. The middle states pay +1 / -1 / 0 on exit
    into an absorbing terminal. Actions that are not meaningful at a state
    behave like the exit action (middle states) or self-loop (start state).
    """
    S, A = 5, 3
    T = np.zeros((S, A, S))
    R = np.zeros((S, A))
    T[S1, A1, S_GOOD] = 0.1
    T[S1, A1, S_BAD] = 0.9
    T[S1, A2, S_AVG] = 1.0
    T[S1, A3, S1] = 1.0
    for s, r in ((S_GOOD, 1.0), (S_BAD, -1.0), (S_AVG, 0.0)):
        for a in range(A):
            T[s, a, S_TERM] = 1.0
        R[s, A3] = r
    for a in range(A):
        T[S_TERM, a, S_TERM] = 1.0
    init = np.zeros(S)
    init[S1] = 1.0
    terminal = np.zeros(S, dtype=bool)
    terminal[S_TERM] = True
    return MDPSpec(S, A, T, R, terminal, init, horizon=2, name="gambling")


def random_mdp(seed: int, num_states: int, num_actions: int,
               branching: int = 2, reward_sparsity: float = 0.5,
               horizon: int = 32) -> MDPSpec:
    """Seeded random MDP with `branching` successors per (s, a).

    Rewards are standard normal draws masked so that roughly a
    `reward_sparsity` fraction of (s, a) pairs are nonzero. No terminals;
    episodes end at the horizon.
    """
    if num_states < 2 or num_actions < 2:
        raise InvalidDimensionError("need at least 2 states and 2 actions")
    if not 1 <= branching <= num_states:
        raise InvalidDimensionError("branching must be in [1, num_states]")
    if not 0.0 <= reward_sparsity <= 1.0:
        raise InvalidDimensionError("reward_sparsity must be in [0, 1]")
    rng = np.random.default_rng(seed)
    T = np.zeros((num_states, num_actions, num_states))
    for s in range(num_states):
        for a in range(num_actions):
            succ = rng.choice(num_states, size=branching, replace=False)
            w = rng.uniform(0.1, 1.0, size=branching)
            T[s, a, succ] = w / w.sum()
    R = rng.normal(size=(num_states, num_actions))
    mask = rng.uniform(size=(num_states, num_actions)) < reward_sparsity
    R = np.where(mask, R, 0.0)
    init = np.full(num_states, 1.0 / num_states)
    terminal = np.zeros(num_states, dtype=bool)
    return MDPSpec(num_states, num_actions, T, R, terminal, init,
                   horizon=horizon, name=f"random-{seed}")


def value_iteration(mdp: MDPSpec, discount: float = 0.99, tol: float = 1e-10
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Optimal V, Q, and greedy policy (lowest action index on ties).

    For discount < 1 the Bellman operator is iterated to `tol` in sup-norm;
    for discount == 1 it is applied exactly `horizon` times (finite-horizon
    backup from V = 0), which is a fixed point for absorbing MDPs.
    """
    if not (0.0 <= discount <= 1.0):
        raise ValueError("discount must be in [0, 1]")
    if tol <= 0:
        raise ValueError("tol must be positive")
    V = np.zeros(mdp.num_states)
    if discount < 1.0:
        for _ in range(100_000):
            Q = mdp.reward + discount * mdp.transition @ V
            V_new = Q.max(axis=1)
            if np.max(np.abs(V_new - V)) <= tol * (1.0 - discount):
                V = V_new
                break
            V = V_new
    else:
        for _ in range(mdp.horizon):
            Q = mdp.reward + mdp.transition @ V
            V = Q.max(axis=1)
    Q = mdp.reward + discount * mdp.transition @ V
    V = Q.max(axis=1)
    pi = Q.argmax(axis=1)
    return V, Q, pi


def bellman_residual(mdp: MDPSpec, V: np.ndarray, discount: float) -> float:
    """Sup-norm distance between V and one more Bellman backup."""
    Q = mdp.reward + discount * mdp.transition @ V
    return float(np.max(np.abs(Q.max(axis=1) - V)))


def greedy_policy_matrix(pi: np.ndarray, num_actions: int) -> np.ndarray:
    mat = np.zeros((pi.shape[0], num_actions))
    mat[np.arange(pi.shape[0]), pi] = 1.0
    return mat


def rollout(mdp: MDPSpec, policy: np.ndarray, seed: int,
            num_episodes: int = 1) -> list[Trajectory]:
    """Sample episodes under a (S, A) policy matrix.

    Episodes stop at a terminal state or after `horizon` steps. Rewards are
    recorded on every trajectory but are oracle-side only; strip them with
    `Trajectory.without_rewards()` before anything learner-visible.
    """
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (mdp.num_states, mdp.num_actions):
        raise InvalidDimensionError("policy must be (num_states, num_actions)")
    if num_episodes < 1:
        raise ValueError("num_episodes must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(num_episodes):
        s = int(rng.choice(mdp.num_states, p=mdp.initial_dist))
        states, actions, rewards = [s], [], []
        for _ in range(mdp.horizon):
            if mdp.terminal[s]:
                break
            a = int(rng.choice(mdp.num_actions, p=policy[s]))
            s_next = int(rng.choice(mdp.num_states, p=mdp.transition[s, a]))
            actions.append(a)
            rewards.append(float(mdp.reward[s, a]))
            states.append(s_next)
            s = s_next
        out.append(Trajectory(tuple(states), tuple(actions), tuple(rewards)))
    return out


def episode_return(traj: Trajectory) -> float:
    if traj.rewards is None:
        raise ValueError("trajectory has no oracle rewards")
    return float(sum(traj.rewards))
