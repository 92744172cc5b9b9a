"""Preference models and reward learning.

Two ways to score a segment: the Markovian strength (sum of per-step
rewards of (s, a)) and the future-conditioned strength (sum of rewards of
(s, a, z) where z comes from the frozen future-window encoder). Either
strength feeds the same pairwise choice probability and cross-entropy
loss; neutral labels split the loss symmetrically between the two
directions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numcore as nc
from .datasets import PreferenceDataset, PreferencePair, Segment
from .hindsight_vae import VaeModel, load_vae
from .numcore import autodiff as ad
from .numcore.autodiff import Tensor
from .seeding import derive_seed

KINDS = ("markovian", "hindsight")
LATENT_MODES = ("posterior-sample", "posterior-mode")


@dataclass(frozen=True)
class RewardConfig:
    hidden_dim: int = 64
    num_hidden_layers: int = 2
    final_activation: str = "identity"  # identity | relu
    steps: int = 2000
    batch_size: int = 64
    lr: float = 3e-4
    latent_mode: str = "posterior-sample"

    def __post_init__(self):
        if self.latent_mode not in LATENT_MODES:
            raise ValueError(f"latent_mode must be one of {LATENT_MODES}")


class RewardModel:
    """Per-step reward head, optionally conditioned on a future code."""

    def __init__(self, kind: str, num_states: int, num_actions: int,
                 config: RewardConfig, store: nc.ParamStore,
                 vae: VaeModel | None = None, diagnostics: dict | None = None):
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if kind == "hindsight" and vae is None:
            raise ValueError("hindsight reward model needs a trained VAE")
        self.kind = kind
        self.num_states = num_states
        self.num_actions = num_actions
        self.config = config
        self.store = store
        self.vae = vae
        self.diagnostics = diagnostics or {}
        in_dim = num_states + num_actions
        if kind == "hindsight":
            if vae.num_states != num_states or vae.num_actions != num_actions:
                raise ValueError("VAE feature dimensions do not match")
            in_dim += vae.config.num_codes
        self.spec = nc.MlpSpec(
            in_dim=in_dim,
            hidden=(config.hidden_dim,) * config.num_hidden_layers,
            out_dim=1, final_activation=config.final_activation)

    @property
    def num_codes(self) -> int:
        return self.vae.config.num_codes if self.vae is not None else 0

    def _features(self, states, actions, codes=None) -> np.ndarray:
        states = np.asarray(states, dtype=int)
        actions = np.asarray(actions, dtype=int)
        sa = np.zeros((states.size, self.num_states + self.num_actions))
        sa[np.arange(states.size), states] = 1.0
        sa[np.arange(states.size), self.num_states + actions] = 1.0
        if self.kind == "markovian":
            return sa
        z = np.asarray(codes, dtype=np.float64)
        if z.ndim == 1:  # indices
            z = np.eye(self.num_codes)[z.astype(int)]
        return np.concatenate([sa, z], axis=-1)

    def reward_graph(self, leaves, features) -> Tensor:
        return nc.mlp_forward(leaves, features, self.spec, prefix="r")

    def rewards(self, states, actions, codes=None) -> np.ndarray:
        x = self._features(states, actions, codes)
        return self.reward_graph(self.store.leaves(), x).data[:, 0]

    def reward_sa(self, s: int, a: int) -> float:
        if self.kind != "markovian":
            raise ValueError("per-(s,a) reward needs a markovian model")
        return float(self.rewards([s], [a])[0])

    def reward_saz(self, s: int, a: int, z) -> float:
        if self.kind != "hindsight":
            raise ValueError("conditional reward needs a hindsight model")
        z_idx = np.array([z]) if np.isscalar(z) else np.asarray(z)[None, :]
        return float(self.rewards([s], [a], z_idx)[0])

    def markovian_table(self) -> np.ndarray:
        """(S, A) reward table for a markovian model."""
        if self.kind != "markovian":
            raise ValueError("table of r(s, a) needs a markovian model")
        S, A = self.num_states, self.num_actions
        grid_s, grid_a = np.meshgrid(np.arange(S), np.arange(A), indexing="ij")
        return self.rewards(grid_s.reshape(-1), grid_a.reshape(-1)).reshape(S, A)

    def conditional_table(self) -> np.ndarray:
        """(S, A, K) table of r(s, a, z) for a hindsight model."""
        if self.kind != "hindsight":
            raise ValueError("conditional table needs a hindsight model")
        S, A, K = self.num_states, self.num_actions, self.num_codes
        s = np.repeat(np.arange(S), A * K)
        a = np.tile(np.repeat(np.arange(A), K), S)
        z = np.tile(np.arange(K), S * A)
        return self.rewards(s, a, z).reshape(S, A, K)


# -- choice probability and strengths ------------------------------------------


def bt_prob(rho0: float, rho1: float) -> float:
    """P(first wins) = exp(rho0) / (exp(rho0) + exp(rho1)), in log space."""
    return float(np.exp(-np.logaddexp(0.0, rho1 - rho0)))


def strength_mr(model: RewardModel, segment: Segment) -> float:
    """Sum of per-step rewards over the segment."""
    if model.kind != "markovian":
        raise ValueError("strength_mr needs a markovian model")
    return float(model.rewards(segment.states, segment.actions).sum())


def segment_codes(vae: VaeModel, segment: Segment, latent_mode: str,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """One code index per step, from the frozen encoder over each future window."""
    items = [(segment.states, segment.actions, t) for t in range(segment.length)]
    logits = vae.posterior_batch(items)
    if latent_mode == "posterior-mode":
        return logits.argmax(axis=1)
    if rng is None:
        raise ValueError("posterior-sample needs an rng")
    probs = nc.stable_softmax(logits, axis=1)
    u = rng.uniform(size=probs.shape[0])
    return (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)


def strength_hpm(model: RewardModel, segment: Segment,
                 latent_mode: str = "posterior-mode",
                 rng: np.random.Generator | None = None) -> float:
    """Sum of future-conditioned rewards; codes from the frozen encoder."""
    if model.kind != "hindsight":
        raise ValueError("strength_hpm needs a hindsight model")
    if latent_mode not in LATENT_MODES:
        raise ValueError(f"latent_mode must be one of {LATENT_MODES}")
    codes = segment_codes(model.vae, segment, latent_mode, rng)
    return float(model.rewards(segment.states, segment.actions, codes).sum())


# -- training -------------------------------------------------------------------


class _PairBatch:
    """Precomputed per-step features for a list of preference pairs.

    Rows are ordered (pair, side, step). For hindsight models the posterior
    over codes at every step is cached once (the VAE is frozen), so
    per-step resampling during training is a cheap inverse-CDF draw.
    """

    def __init__(self, model: RewardModel, pairs: list[PreferencePair]):
        self.H = pairs[0].seg0.length
        self.P = len(pairs)
        states, actions = [], []
        for p in pairs:
            for seg in (p.seg0, p.seg1):
                if seg.length != self.H:
                    raise ValueError("all segments must share one length")
                states.extend(seg.states)
                actions.extend(seg.actions)
        self.states = np.asarray(states, dtype=int)
        self.actions = np.asarray(actions, dtype=int)
        self.labels = np.asarray([p.label for p in pairs])
        self.post_probs = None
        if model.kind == "hindsight":
            items = []
            for p in pairs:
                for seg in (p.seg0, p.seg1):
                    items.extend((seg.states, seg.actions, t)
                                 for t in range(self.H))
            logits = model.vae.posterior_batch(items)
            self.post_probs = nc.stable_softmax(logits, axis=1)
        self.base_features = model._features(
            self.states, self.actions,
            np.zeros((self.states.size, model.num_codes)) if model.kind == "hindsight" else None)

    def features(self, model: RewardModel, latent_mode: str,
                 rng: np.random.Generator | None) -> np.ndarray:
        if model.kind == "markovian":
            return self.base_features
        if latent_mode == "posterior-mode":
            idx = self.post_probs.argmax(axis=1)
        else:
            u = rng.uniform(size=self.post_probs.shape[0])
            idx = (self.post_probs.cumsum(axis=1) < u[:, None]).sum(axis=1)
        x = self.base_features.copy()
        offset = model.num_states + model.num_actions
        x[np.arange(x.shape[0]), offset + idx] = 1.0
        return x


def _pref_loss_graph(model: RewardModel, leaves, features: np.ndarray,
                     labels: np.ndarray, P: int, H: int) -> Tensor:
    r = model.reward_graph(leaves, features)          # (P*2*H, 1)
    rho = r.reshape((P, 2, H)).sum(axis=2)            # (P, 2)
    log_norm = ad.logsumexp(rho, axis=1)              # (P,)
    log_p0 = rho[:, 0] - log_norm
    log_p1 = rho[:, 1] - log_norm
    nll = log_p0 * (labels - 1.0) - log_p1 * labels
    return nll.mean()


def pref_loss(model: RewardModel, pairs: list[PreferencePair],
              latent_mode: str | None = None,
              rng: np.random.Generator | None = None) -> float:
    """Mean pairwise cross-entropy under the model's choice probabilities."""
    if not pairs:
        raise ValueError("pref_loss needs a nonempty batch")
    mode = latent_mode or "posterior-mode"
    batch = _PairBatch(model, pairs)
    x = batch.features(model, mode, rng)
    graph = _pref_loss_graph(model, model.store.leaves(), x,
                             batch.labels, batch.P, batch.H)
    return float(graph.data)


def train_accuracy(model: RewardModel, pairs: list[PreferencePair]) -> float:
    """Fraction of non-neutral pairs whose labeled winner gets probability > 0.5.

    Deterministic: hindsight strengths use the posterior mode.
    """
    correct = total = 0
    for p in pairs:
        if p.label == 0.5:
            continue
        if model.kind == "markovian":
            rho0, rho1 = strength_mr(model, p.seg0), strength_mr(model, p.seg1)
        else:
            rho0 = strength_hpm(model, p.seg0, "posterior-mode")
            rho1 = strength_hpm(model, p.seg1, "posterior-mode")
        p0 = bt_prob(rho0, rho1)
        predicted = 0.0 if p0 > 0.5 else 1.0
        correct += int(predicted == p.label and p0 != 0.5)
        total += 1
    return correct / total if total else float("nan")


def build_reward_model(kind: str, num_states: int, num_actions: int,
                       config: RewardConfig, rng: np.random.Generator,
                       vae: VaeModel | None = None) -> RewardModel:
    store = nc.ParamStore()
    model = RewardModel(kind, num_states, num_actions, config, store, vae)
    nc.init_mlp(store, "r", model.spec, rng)
    return model


def train_reward(dataset: PreferenceDataset, kind: str,
                 vae: VaeModel | None, config: RewardConfig, seed: int,
                 num_states: int, num_actions: int) -> RewardModel:
    """Adam on the pairwise cross-entropy; returns the frozen model.

    Diagnostics carry the final loss and training preference accuracy.
    """
    init_rng = np.random.default_rng(derive_seed(seed, "reward-init"))
    batch_rng = np.random.default_rng(derive_seed(seed, "reward-batch"))
    z_rng = np.random.default_rng(derive_seed(seed, "reward-z"))
    model = build_reward_model(kind, num_states, num_actions, config,
                               init_rng, vae)
    full = _PairBatch(model, dataset.pairs)
    value = float("nan")
    for step in range(config.steps):
        if len(dataset.pairs) <= config.batch_size:
            batch = full
        else:
            idx = batch_rng.integers(len(dataset.pairs), size=config.batch_size)
            batch = _PairBatch(model, [dataset.pairs[i] for i in idx])
        x = batch.features(model, config.latent_mode, z_rng)
        leaves = model.store.leaves()
        loss = _pref_loss_graph(model, leaves, x, batch.labels,
                                batch.P, batch.H)
        value = loss.item()
        if not np.isfinite(value):
            raise nc.NonFiniteError(f"non-finite preference loss at step {step}")
        loss.backward()
        nc.adam_step(model.store, nc.collect_grads(leaves), lr=config.lr)
    model.diagnostics = {
        "kind": kind,
        "final_loss": value,
        "train_accuracy": train_accuracy(model, dataset.pairs),
        "steps": config.steps,
        "seed": int(seed),
    }
    return model


def train_reward_ensemble(dataset: PreferenceDataset, ensemble_size: int,
                          config: RewardConfig, seed: int,
                          num_states: int, num_actions: int
                          ) -> list[RewardModel]:
    """Markovian models from distinct initializations on the same data."""
    if ensemble_size < 1:
        raise ValueError("ensemble_size must be >= 1")
    return [train_reward(dataset, "markovian", None, config,
                         derive_seed(seed, "ensemble", i),
                         num_states, num_actions)
            for i in range(ensemble_size)]


# -- persistence -----------------------------------------------------------------


def save_reward(model: RewardModel, directory: str | Path) -> None:
    directory = Path(directory)
    nc.save_checkpoint(model.store, directory,
                       hyperparameters=asdict(model.config),
                       seed=model.diagnostics.get("seed"))
    sidecar = {
        "kind": model.kind,
        "num_states": model.num_states,
        "num_actions": model.num_actions,
        "diagnostics": model.diagnostics,
    }
    (directory / "reward.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_reward(directory: str | Path,
                vae: VaeModel | None = None) -> RewardModel:
    directory = Path(directory)
    store, manifest = nc.load_checkpoint(directory)
    sidecar = json.loads((directory / "reward.json").read_text())
    config = RewardConfig(**manifest["hyperparameters"])
    return RewardModel(sidecar["kind"], sidecar["num_states"],
                       sidecar["num_actions"], config, store, vae,
                       diagnostics=sidecar.get("diagnostics", {}))
