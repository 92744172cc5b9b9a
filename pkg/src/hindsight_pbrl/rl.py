"""Reward labeling, offline policy optimization, and evaluation.

Labeling turns reward-free trajectories into transitions whose reward is
the learned model's output — for future-conditioned models, marginalized
over the learned prior on codes, either exactly (enumerating the
categorical support) or by Monte Carlo. Policy optimization is implicit
Q-learning: expectile regression for V, TD regression for Q against a
soft-updated target network, and advantage-weighted cross-entropy for the
discrete policy. A behavior-cloning baseline trains on the preferred
segment of each pair.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .datasets import (
    EmptyDatasetError,
    PreferenceDataset,
    UnlabeledDataset,
)
from .envs import MDPSpec, rollout
from .hindsight_vae import VaeModel
from .numcore import autodiff as ad
from .preference import RewardModel
from .seeding import derive_seed

MARGINAL_MODES = ("exact", "monte-carlo", "auto")
EXACT_MAX_CODES = 64  # enumerate the prior when K is no larger than this


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class RlConfig:
    discount: float = 0.99
    expectile: float = 0.7
    beta_temp: float = 0.333   # advantage weights are exp(A / beta_temp)
    adv_clip: float = 100.0
    soft_update: float = 0.005
    steps: int = 5000
    batch_size: int = 64
    lr: float = 3e-4
    hidden_dim: int = 64
    num_hidden_layers: int = 2

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must be in [0, 1)")
        if not 0.0 < self.expectile < 1.0:
            raise ValueError("expectile must be in (0, 1)")
        if self.beta_temp <= 0 or self.adv_clip <= 0:
            raise ValueError("beta_temp and adv_clip must be positive")
        if not 0.0 < self.soft_update <= 1.0:
            raise ValueError("soft_update must be in (0, 1]")


@dataclass
class LabeledDataset:
    """Transitions (s, a, r, s', done) derived from an unlabeled dataset."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.s.shape[0]
        if n == 0:
            raise EmptyDatasetError("labeled dataset has no transitions")
        for name in ("a", "r", "s2", "done"):
            if getattr(self, name).shape[0] != n:
                raise ValueError("transition arrays must share one length")
        if not np.all(np.isfinite(self.r)):
            raise ValueError("labeled rewards must be finite")

    def __len__(self):
        return self.s.shape[0]

    def save(self, path: str | Path) -> None:
        lines = [json.dumps({"s": int(s), "a": int(a), "r": float(r),
                             "s2": int(s2), "done": bool(d)})
                 for s, a, r, s2, d in zip(self.s, self.a, self.r,
                                           self.s2, self.done)]
        Path(path).write_text("\n".join(lines) + "\n")
        meta = Path(str(path) + ".meta.json")
        meta.write_text(json.dumps(self.provenance, sort_keys=True) + "\n")

    @staticmethod
    def load(path: str | Path) -> "LabeledDataset":
        rows = []
        for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            rows.append((rec["s"], rec["a"], rec["r"], rec["s2"], rec["done"]))
        if not rows:
            raise EmptyDatasetError(f"{path}: no transitions")
        s, a, r, s2, d = map(np.asarray, zip(*rows))
        meta_path = Path(str(path) + ".meta.json")
        prov = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return LabeledDataset(s.astype(int), a.astype(int), r.astype(float),
                              s2.astype(int), d.astype(bool), prov)


# -- reward marginalization ------------------------------------------------------


def marginal_reward(reward_model: RewardModel, vae: VaeModel, s: int, a: int,
                    n: int = 20, mode: str = "exact",
                    rng: np.random.Generator | None = None) -> float:
    """Expected conditional reward at (s, a) under the learned code prior.

    `exact` enumerates the categorical support; `monte-carlo` averages the
    reward at `n` i.i.d. prior samples.
    """
    if reward_model.kind != "hindsight":
        raise ValueError("marginal_reward needs a hindsight reward model")
    if mode not in ("exact", "monte-carlo"):
        raise ValueError("mode must be 'exact' or 'monte-carlo'")
    if mode == "exact":
        codes, probs = vae.enumerate_prior(s, a)
        values = reward_model.rewards([s] * len(codes), [a] * len(codes), codes)
        return float(values @ probs)
    if rng is None:
        raise ValueError("monte-carlo mode needs an rng")
    codes = vae.sample_prior(s, a, n, rng)
    values = reward_model.rewards([s] * len(codes), [a] * len(codes), codes)
    return float(values.mean())


def marginal_reward_table(reward_model: RewardModel, vae: VaeModel,
                          n: int = 20, mode: str = "exact",
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """(S, A) table of marginalized rewards."""
    S, A = reward_model.num_states, reward_model.num_actions
    if mode == "exact":
        cond = reward_model.conditional_table()                      # (S, A, K)
        prior = nc.stable_softmax(vae.prior_logits_table(), axis=-1)
        return (cond * prior).sum(axis=-1)
    table = np.zeros((S, A))
    for s in range(S):
        for a in range(A):
            table[s, a] = marginal_reward(reward_model, vae, s, a, n,
                                          "monte-carlo", rng)
    return table


def _reward_table_for(reward_model, vae, n, mode, rng) -> np.ndarray:
    models = reward_model if isinstance(reward_model, list) else [reward_model]
    tables = []
    for m in models:
        if m.kind == "markovian":
            tables.append(m.markovian_table())
        else:
            if vae is None:
                vae = m.vae
            if vae is None:
                raise ValueError("hindsight labeling needs a VAE")
            resolved = mode
            if mode == "auto":
                resolved = ("exact" if vae.config.num_codes <= EXACT_MAX_CODES
                            else "monte-carlo")
            tables.append(marginal_reward_table(m, vae, n, resolved, rng))
    return np.mean(tables, axis=0)


def label_dataset(unlabeled: UnlabeledDataset,
                  reward_model: RewardModel | list[RewardModel] | None,
                  vae: VaeModel | None = None, n: int = 20,
                  mode: str = "auto", seed: int = 0,
                  oracle_mdp: MDPSpec | None = None) -> LabeledDataset:
    """Assemble transitions from trajectories and attach learned rewards.

    Rewards come from a per-(s, a) table: the model output for markovian
    models, the prior-marginalized conditional reward for hindsight models,
    the ensemble mean when a list of models is given, or the ground-truth
    table when `oracle_mdp` is set. Terminal flags come from the dataset's
    recorded terminal states; bootstrap targets at terminals are masked
    downstream, so the reward table fully determines the labels.
    """
    if mode not in MARGINAL_MODES:
        raise ValueError(f"mode must be one of {MARGINAL_MODES}")
    if oracle_mdp is not None:
        table = oracle_mdp.reward
    else:
        if reward_model is None:
            raise ValueError("need a reward model or an oracle MDP")
        rng = np.random.default_rng(derive_seed(seed, "label-mc"))
        table = _reward_table_for(reward_model, vae, n, mode, rng)
    terminal_states = set(unlabeled.metadata.get("terminal_states", []))
    s_list, a_list, s2_list, done_list = [], [], [], []
    for traj in unlabeled.trajectories:
        for i in range(traj.length):
            s_list.append(traj.states[i])
            a_list.append(traj.actions[i])
            s2_list.append(traj.states[i + 1])
            done_list.append(traj.states[i + 1] in terminal_states)
    s = np.asarray(s_list, dtype=int)
    a = np.asarray(a_list, dtype=int)
    r = table[s, a].astype(float)
    provenance = {
        "reward_model": ("oracle" if oracle_mdp is not None else
                         getattr(reward_model, "kind", "ensemble")),
        "mode": mode,
        "n": int(n),
        "num_transitions": int(s.shape[0]),
    }
    return LabeledDataset(s, a, r, np.asarray(s2_list, dtype=int),
                          np.asarray(done_list, dtype=bool), provenance)


# -- implicit Q-learning -----------------------------------------------------------


@dataclass
class PolicyArtifacts:
    """Trained policy (and value heads when produced by IQL)."""

    num_states: int
    num_actions: int
    config: RlConfig
    policy_store: nc.ParamStore
    q_store: nc.ParamStore | None = None
    v_store: nc.ParamStore | None = None
    diagnostics: dict = field(default_factory=dict)

    def _policy_spec(self) -> nc.MlpSpec:
        return nc.MlpSpec(self.num_states,
                          (self.config.hidden_dim,) * self.config.num_hidden_layers,
                          self.num_actions)

    def policy_logits(self) -> np.ndarray:
        eye = np.eye(self.num_states)
        return nc.mlp_forward(self.policy_store.leaves(), eye,
                              self._policy_spec(), prefix="pi").data

    def policy_matrix(self) -> np.ndarray:
        """(S, A) action probabilities."""
        return nc.stable_softmax(self.policy_logits(), axis=-1)

    def greedy(self) -> np.ndarray:
        return self.policy_logits().argmax(axis=1)

    def q_values(self) -> np.ndarray:
        spec = nc.MlpSpec(self.num_states,
                          (self.config.hidden_dim,) * self.config.num_hidden_layers,
                          self.num_actions)
        return nc.mlp_forward(self.q_store.leaves(), np.eye(self.num_states),
                              spec, prefix="q").data

    def v_values(self) -> np.ndarray:
        spec = nc.MlpSpec(self.num_states,
                          (self.config.hidden_dim,) * self.config.num_hidden_layers, 1)
        return nc.mlp_forward(self.v_store.leaves(), np.eye(self.num_states),
                              spec, prefix="v").data[:, 0]

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        nc.save_checkpoint(self.policy_store, directory / "policy",
                           hyperparameters=asdict(self.config))
        if self.q_store is not None:
            nc.save_checkpoint(self.q_store, directory / "q")
        if self.v_store is not None:
            nc.save_checkpoint(self.v_store, directory / "v")
        meta = {"num_states": self.num_states, "num_actions": self.num_actions,
                "diagnostics": self.diagnostics}
        (directory / "artifacts.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @staticmethod
    def load(directory: str | Path) -> "PolicyArtifacts":
        directory = Path(directory)
        pol, manifest = nc.load_checkpoint(directory / "policy")
        meta = json.loads((directory / "artifacts.json").read_text())
        config = RlConfig(**manifest["hyperparameters"])
        q = v = None
        if (directory / "q" / "manifest.json").exists():
            q, _ = nc.load_checkpoint(directory / "q")
        if (directory / "v" / "manifest.json").exists():
            v, _ = nc.load_checkpoint(directory / "v")
        return PolicyArtifacts(meta["num_states"], meta["num_actions"], config,
                               pol, q, v, meta.get("diagnostics", {}))


def expectile_weight(residual: np.ndarray, tau: float) -> np.ndarray:
    """|tau - 1(residual < 0)|: asymmetric squared-loss weights."""
    return np.abs(tau - (residual < 0.0).astype(np.float64))


def advantage_weights(adv: np.ndarray, beta_temp: float,
                      clip: float) -> np.ndarray:
    """min(exp(A / beta_temp), clip), computed without overflow."""
    log_w = np.minimum(adv / beta_temp, np.log(clip))
    return np.exp(np.minimum(log_w, np.log(clip)))


def iql_train(labeled: LabeledDataset, config: RlConfig, seed: int,
              num_states: int | None = None, num_actions: int | None = None
              ) -> PolicyArtifacts:
    """Implicit Q-learning on labeled transitions.

    V regresses expectiles of target-network Q at dataset actions; Q
    regresses TD targets r + discount * V(s') with V(s') masked at
    terminals; the policy maximizes advantage-weighted log-likelihood with
    weights min(exp(A / beta_temp), adv_clip). Value magnitudes are checked
    against the r_max / (1 - discount) bound as a divergence alarm.
    """
    S = num_states or int(max(labeled.s.max(), labeled.s2.max())) + 1
    A = num_actions or int(labeled.a.max()) + 1
    rng_init = np.random.default_rng(derive_seed(seed, "iql-init"))
    rng_batch = np.random.default_rng(derive_seed(seed, "iql-batch"))

    q_spec = nc.MlpSpec(S, (config.hidden_dim,) * config.num_hidden_layers, A)
    v_spec = nc.MlpSpec(S, (config.hidden_dim,) * config.num_hidden_layers, 1)
    pi_spec = nc.MlpSpec(S, (config.hidden_dim,) * config.num_hidden_layers, A)

    q_store, v_store, pi_store = nc.ParamStore(), nc.ParamStore(), nc.ParamStore()
    nc.init_mlp(q_store, "q", q_spec, rng_init)
    nc.init_mlp(v_store, "v", v_spec, rng_init)
    nc.init_mlp(pi_store, "pi", pi_spec, rng_init)
    q_target = q_store.copy()

    eye = np.eye(S)
    value_bound = float(np.max(np.abs(labeled.r))) / (1.0 - config.discount)
    value_bound = 1.25 * value_bound + 1.0

    n = len(labeled)
    last = {}
    for step in range(config.steps):
        idx = rng_batch.integers(n, size=config.batch_size)
        xs = eye[labeled.s[idx]]
        xs2 = eye[labeled.s2[idx]]
        acts = labeled.a[idx]
        onehot_a = np.eye(A)[acts]
        rews = labeled.r[idx]
        not_done = 1.0 - labeled.done[idx].astype(np.float64)

        # value function: expectile regression toward target-network Q
        qt = nc.mlp_forward(q_target.leaves(), xs, q_spec, prefix="q").data
        qt_a = (qt * onehot_a).sum(axis=1)
        v_leaves = v_store.leaves()
        v_pred = nc.mlp_forward(v_leaves, xs, v_spec, prefix="v")[:, 0]
        resid = qt_a - v_pred.data
        w_tau = expectile_weight(resid, config.expectile)
        v_loss = ((ad.as_tensor(qt_a) - v_pred) ** 2 * w_tau).mean()
        _check_finite(v_loss, step, "value")
        v_loss.backward()
        nc.adam_step(v_store, nc.collect_grads(v_leaves), lr=config.lr)

        # Q function: TD regression, bootstrapping masked at terminals
        v_next = nc.mlp_forward(v_store.leaves(), xs2, v_spec, prefix="v").data[:, 0]
        target = rews + config.discount * not_done * v_next
        q_leaves = q_store.leaves()
        q_pred = (nc.mlp_forward(q_leaves, xs, q_spec, prefix="q") * onehot_a).sum(axis=1)
        q_loss = ((q_pred - target) ** 2).mean()
        _check_finite(q_loss, step, "q")
        q_loss.backward()
        nc.adam_step(q_store, nc.collect_grads(q_leaves), lr=config.lr)

        # policy: advantage-weighted cross-entropy
        v_now = nc.mlp_forward(v_store.leaves(), xs, v_spec, prefix="v").data[:, 0]
        adv = qt_a - v_now
        w = advantage_weights(adv, config.beta_temp, config.adv_clip)
        pi_leaves = pi_store.leaves()
        logits = nc.mlp_forward(pi_leaves, xs, pi_spec, prefix="pi")
        log_pi = (ad.log_softmax(logits, axis=-1) * onehot_a).sum(axis=1)
        pi_loss = (log_pi * (-w)).mean()
        _check_finite(pi_loss, step, "policy")
        pi_loss.backward()
        nc.adam_step(pi_store, nc.collect_grads(pi_leaves), lr=config.lr)

        for name in q_store.params:
            q_target.params[name] *= 1.0 - config.soft_update
            q_target.params[name] += config.soft_update * q_store.params[name]

        if step % 100 == 0 or step == config.steps - 1:
            v_all = nc.mlp_forward(v_store.leaves(), eye, v_spec, prefix="v").data
            if np.max(np.abs(v_all)) > value_bound:
                raise DivergenceError(
                    f"value estimate exceeded {value_bound:.3f} at step {step}")
        last = {"v_loss": float(v_loss.data), "q_loss": float(q_loss.data),
                "pi_loss": float(pi_loss.data)}

    return PolicyArtifacts(S, A, config, pi_store, q_store, v_store,
                           diagnostics={"seed": int(seed), "steps": config.steps,
                                        **last})


def _check_finite(loss, step: int, name: str) -> None:
    if not np.isfinite(loss.data):
        raise nc.NonFiniteError(f"non-finite {name} loss at step {step}")


def sft_train(dataset: PreferenceDataset, config: RlConfig, seed: int,
              num_states: int, num_actions: int) -> PolicyArtifacts:
    """Behavior-clone the preferred segment of each pair.

    Neutral pairs contribute both segments at half weight.
    """
    states, actions, weights = [], [], []
    for p in dataset.pairs:
        sides = ((p.seg0, 1.0),) if p.label == 0.0 else \
                ((p.seg1, 1.0),) if p.label == 1.0 else \
                ((p.seg0, 0.5), (p.seg1, 0.5))
        for seg, w in sides:
            states.extend(seg.states)
            actions.extend(seg.actions)
            weights.extend([w] * seg.length)
    if not states:
        raise EmptyDatasetError("no segments to clone")
    s = np.asarray(states, dtype=int)
    a = np.asarray(actions, dtype=int)
    w = np.asarray(weights)

    pi_spec = nc.MlpSpec(num_states,
                         (config.hidden_dim,) * config.num_hidden_layers,
                         num_actions)
    pi_store = nc.ParamStore()
    nc.init_mlp(pi_store, "pi", pi_spec, np.random.default_rng(
        derive_seed(seed, "sft-init")))
    rng_batch = np.random.default_rng(derive_seed(seed, "sft-batch"))
    eye = np.eye(num_states)
    eye_a = np.eye(num_actions)
    last = float("nan")
    for step in range(config.steps):
        idx = rng_batch.integers(s.shape[0], size=config.batch_size)
        leaves = pi_store.leaves()
        logits = nc.mlp_forward(leaves, eye[s[idx]], pi_spec, prefix="pi")
        log_pi = (ad.log_softmax(logits, axis=-1) * eye_a[a[idx]]).sum(axis=1)
        loss = (log_pi * (-w[idx])).mean()
        _check_finite(loss, step, "sft")
        loss.backward()
        nc.adam_step(pi_store, nc.collect_grads(leaves), lr=config.lr)
        last = float(loss.data)

    return PolicyArtifacts(num_states, num_actions, config, pi_store,
                           diagnostics={"seed": int(seed), "steps": config.steps,
                                        "sft_loss": last})


# -- evaluation ---------------------------------------------------------------------


@dataclass
class EvalStats:
    mean_return: float
    std_return: float
    num_episodes: int
    action_frequencies: dict[int, list[float]]

    def to_json_dict(self) -> dict:
        return {"mean_return": self.mean_return, "std_return": self.std_return,
                "num_episodes": self.num_episodes,
                "action_frequencies": {str(k): v for k, v
                                       in self.action_frequencies.items()}}


def evaluate(policy, mdp: MDPSpec, num_episodes: int, seed: int,
             designated_states: list[int] | None = None) -> EvalStats:
    """Seeded rollouts scored with ground-truth rewards.

    `policy` is a (S, A) probability matrix or anything with a
    `policy_matrix()` method. Action frequencies are tallied at
    `designated_states` (default: every state visited).
    """
    if num_episodes < 1:
        raise ValueError("num_episodes must be >= 1")
    matrix = policy.policy_matrix() if hasattr(policy, "policy_matrix") else \
        np.asarray(policy, dtype=np.float64)
    trajs = rollout(mdp, matrix, seed=seed, num_episodes=num_episodes)
    returns = np.array([sum(t.rewards) for t in trajs])
    counts = np.zeros((mdp.num_states, mdp.num_actions))
    for t in trajs:
        for s, a in zip(t.states, t.actions):
            counts[s, a] += 1
    freqs = {}
    states = (designated_states if designated_states is not None
              else np.flatnonzero(counts.sum(axis=1)).tolist())
    for s in states:
        total = counts[s].sum()
        freqs[int(s)] = (counts[s] / total).tolist() if total else \
            [0.0] * mdp.num_actions
    return EvalStats(float(returns.mean()), float(returns.std()),
                     num_episodes, freqs)
