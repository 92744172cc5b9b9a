"""Conditional VAE over future segment windows.

For every (s_t, a_t) in a trajectory, the encoder summarizes the next k
steps (clipped at the sequence end) into a categorical code z_t, the
decoder reconstructs each (s_{t+dt}, a_{t+dt}) from (s_t, a_t, z_t, dt),
and a learned prior predicts the code distribution from (s_t, a_t) alone.
All three are trained jointly on the unlabeled dataset by maximizing the
evidence lower bound: reconstruction cross-entropy summed over the window
minus a weighted posterior/prior KL.

Gradients flow through the categorical sample via a temperature-relaxed
one-hot (Gumbel-softmax), annealed over training; inference uses exact
categorical sampling.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numcore as nc
from .datasets import UnlabeledDataset, content_hash
from .numcore import autodiff as ad
from .numcore.autodiff import Tensor
from .seeding import derive_seed

BatchItem = tuple[tuple[int, ...], tuple[int, ...], int]  # states, actions, anchor t


@dataclass(frozen=True)
class VaeConfig:
    future_len: int            # k: steps of future encoded beyond the anchor
    num_codes: int = 16        # K: categorical classes
    kl_coef: float = 0.1
    embed_dim: int = 32
    num_layers: int = 1
    hidden_dim: int = 64
    num_hidden_layers: int = 2
    steps: int = 5000
    batch_size: int = 64
    lr: float = 3e-4
    temp_start: float = 2.0
    temp_end: float = 0.5

    def __post_init__(self):
        if self.future_len < 0:
            raise ValueError("future_len must be >= 0")
        if self.num_codes < 2:
            raise ValueError("num_codes must be >= 2")
        if self.kl_coef < 0:
            raise ValueError("kl_coef must be >= 0")


class VaeModel:
    """Frozen encoder/decoder/prior triple; safe for concurrent reads."""

    def __init__(self, num_states: int, num_actions: int, config: VaeConfig,
                 store: nc.ParamStore, diagnostics: dict | None = None):
        self.num_states = num_states
        self.num_actions = num_actions
        self.config = config
        self.store = store
        self.diagnostics = diagnostics or {}
        self.token_dim = num_states + num_actions
        self.enc_spec = nc.EncoderSpec(
            token_dim=self.token_dim, embed_dim=config.embed_dim,
            max_window=config.future_len + 1, num_layers=config.num_layers,
            ff_hidden=config.hidden_dim)
        self.dec_spec = nc.MlpSpec(
            in_dim=self.token_dim + config.num_codes + config.future_len + 1,
            hidden=(config.hidden_dim,) * config.num_hidden_layers,
            out_dim=num_states + num_actions)
        self.prior_spec = nc.MlpSpec(
            in_dim=self.token_dim,
            hidden=(config.hidden_dim,) * config.num_hidden_layers,
            out_dim=config.num_codes)

    # -- featurization -----------------------------------------------------

    def sa_onehot(self, states, actions) -> np.ndarray:
        states = np.asarray(states, dtype=int)
        actions = np.asarray(actions, dtype=int)
        out = np.zeros(states.shape + (self.token_dim,))
        np.put_along_axis(out, states[..., None], 1.0, axis=-1)
        np.put_along_axis(out, self.num_states + actions[..., None], 1.0, axis=-1)
        return out

    def make_batch(self, items: list[BatchItem]) -> dict:
        """Pack (states, actions, anchor) items into padded window arrays."""
        k = self.config.future_len
        W = k + 1
        B = len(items)
        windows = np.zeros((B, W, self.token_dim))
        valid = np.zeros((B, W), dtype=bool)
        target_s = np.zeros((B, W), dtype=int)
        target_a = np.zeros((B, W), dtype=int)
        for i, (states, actions, t) in enumerate(items):
            L = len(actions)
            if not 0 <= t < L:
                raise IndexError(f"anchor {t} outside sequence of length {L}")
            end = min(t + k, L - 1)
            n = end - t + 1
            s_win = np.asarray(states[t:end + 1], dtype=int)
            a_win = np.asarray(actions[t:end + 1], dtype=int)
            windows[i, :n] = self.sa_onehot(s_win, a_win)
            valid[i, :n] = True
            target_s[i, :n] = s_win
            target_a[i, :n] = a_win
        return {"windows": windows, "valid": valid,
                "target_s": target_s, "target_a": target_a}

    # -- differentiable graphs ----------------------------------------------

    def posterior_logits_graph(self, leaves, windows, valid) -> Tensor:
        h = nc.encode_windows(leaves, windows, valid, self.enc_spec, prefix="enc")
        return h @ leaves["head.w"] + leaves["head.b"]

    def prior_logits_graph(self, leaves, sa: np.ndarray) -> Tensor:
        return nc.mlp_forward(leaves, sa, self.prior_spec, prefix="prior")

    def decoder_logits_graph(self, leaves, x) -> Tensor:
        return nc.mlp_forward(leaves, x, self.dec_spec, prefix="dec")

    def elbo_graph(self, leaves, batch: dict, temperature: float,
                   gumbel: np.ndarray | None) -> Tensor:
        """Mean over the batch of windowed reconstruction CE + weighted KL."""
        cfg = self.config
        B, W = batch["valid"].shape
        anchors = batch["windows"][:, 0, :]
        post = self.posterior_logits_graph(leaves, batch["windows"], batch["valid"])
        prior = self.prior_logits_graph(leaves, anchors)
        z = nc.gumbel_softmax(post, gumbel, temperature)

        # decode all offsets in one pass: rows ordered dt-major
        z_rep = ad.concat([z] * W, axis=0)                       # (W*B, K)
        sa_rep = Tensor(np.tile(anchors, (W, 1)))                # (W*B, S+A)
        dt_rep = Tensor(np.repeat(np.eye(W), B, axis=0))         # (W*B, W)
        dec_in = ad.concat([sa_rep, z_rep, dt_rep], axis=-1)
        logits = self.decoder_logits_graph(leaves, dec_in)
        s_logits = logits[:, :self.num_states]
        a_logits = logits[:, self.num_states:]

        onehot_s = np.eye(self.num_states)[batch["target_s"].T.reshape(-1)]
        onehot_a = np.eye(self.num_actions)[batch["target_a"].T.reshape(-1)]
        mask = batch["valid"].T.reshape(-1).astype(np.float64)
        ce_s = (ad.log_softmax(s_logits, axis=-1) * onehot_s).sum(axis=-1)
        ce_a = (ad.log_softmax(a_logits, axis=-1) * onehot_a).sum(axis=-1)
        recon = ((ce_s + ce_a) * mask).sum() * (-1.0 / B)

        kl = nc.kl_from_logits(post, prior).mean()
        return recon + kl * cfg.kl_coef

    # -- inference -----------------------------------------------------------

    def posterior_batch(self, items: list[BatchItem]) -> np.ndarray:
        """Posterior logits (B, K) for a batch of (states, actions, anchor)."""
        batch = self.make_batch(items)
        leaves = self.store.leaves()
        return self.posterior_logits_graph(
            leaves, batch["windows"], batch["valid"]).data

    def encode(self, states, actions, t: int) -> nc.CategoricalDist:
        """Posterior over z_t from (s_t, a_t) and the clipped future window."""
        logits = self.posterior_batch([(tuple(states), tuple(actions), t)])
        return nc.CategoricalDist(logits[0])

    def prior_logits(self, s: int, a: int) -> np.ndarray:
        sa = self.sa_onehot(np.array([s]), np.array([a]))
        return self.prior_logits_graph(self.store.leaves(), sa).data[0]

    def prior_logits_table(self) -> np.ndarray:
        """(S, A, K) prior logits for every state/action pair."""
        S, A = self.num_states, self.num_actions
        grid_s, grid_a = np.meshgrid(np.arange(S), np.arange(A), indexing="ij")
        sa = self.sa_onehot(grid_s.reshape(-1), grid_a.reshape(-1))
        logits = self.prior_logits_graph(self.store.leaves(), sa).data
        return logits.reshape(S, A, self.config.num_codes)

    def enumerate_prior(self, s: int, a: int) -> tuple[np.ndarray, np.ndarray]:
        """All codes with their prior probabilities (exact support)."""
        dist = nc.CategoricalDist(self.prior_logits(s, a))
        return np.arange(self.config.num_codes), dist.probs

    def sample_prior(self, s: int, a: int, n: int,
                     rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        return nc.CategoricalDist(self.prior_logits(s, a)).sample(rng, n)

    def decode(self, s: int, a: int, z, delta_t: int
               ) -> tuple[np.ndarray, np.ndarray]:
        """Predicted state/action logits for the step `delta_t` ahead.

        `z` is a code index or a K-vector (one-hot or relaxed).
        """
        out_s, out_a = self.decode_batch(
            np.array([s]), np.array([a]),
            np.atleast_2d(self._z_vec(z)), np.array([delta_t]))
        return out_s[0], out_a[0]

    def decode_batch(self, s: np.ndarray, a: np.ndarray, z: np.ndarray,
                     delta_t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = self.config.future_len
        delta_t = np.asarray(delta_t, dtype=int)
        if np.any(delta_t < 0) or np.any(delta_t > k):
            raise ValueError(f"delta_t must be in [0, {k}]")
        sa = self.sa_onehot(np.asarray(s, dtype=int), np.asarray(a, dtype=int))
        dt = np.eye(k + 1)[delta_t]
        x = np.concatenate([sa, np.asarray(z, dtype=np.float64), dt], axis=-1)
        logits = self.decoder_logits_graph(self.store.leaves(), x).data
        return logits[:, :self.num_states], logits[:, self.num_states:]

    def _z_vec(self, z) -> np.ndarray:
        if np.isscalar(z) or getattr(z, "ndim", 1) == 0:
            return np.eye(self.config.num_codes)[int(z)]
        return np.asarray(z, dtype=np.float64)

    def mean_posterior_prior_kl(self, dataset: UnlabeledDataset,
                                max_items: int = 2048, seed: int = 0) -> float:
        """Average KL(posterior || prior) over anchors of the dataset."""
        items = all_anchors(dataset)
        if len(items) > max_items:
            rng = np.random.default_rng(seed)
            idx = rng.choice(len(items), size=max_items, replace=False)
            items = [items[i] for i in idx]
        batch = self.make_batch(items)
        leaves = self.store.leaves()
        post = self.posterior_logits_graph(leaves, batch["windows"], batch["valid"])
        prior = self.prior_logits_graph(leaves, batch["windows"][:, 0, :])
        return float(nc.kl_from_logits(post, prior).mean().data)


def all_anchors(dataset: UnlabeledDataset) -> list[BatchItem]:
    return [(t.states, t.actions, i)
            for t in dataset.trajectories for i in range(t.length)]


def build_vae(num_states: int, num_actions: int, config: VaeConfig,
              rng: np.random.Generator) -> VaeModel:
    store = nc.ParamStore()
    model = VaeModel(num_states, num_actions, config, store)
    nc.init_encoder(store, "enc", model.enc_spec, rng)
    nc.init_linear(store, "head", config.embed_dim, config.num_codes, rng)
    nc.init_mlp(store, "dec", model.dec_spec, rng)
    nc.init_mlp(store, "prior", model.prior_spec, rng)
    return model


def elbo_loss(model: VaeModel, items: list[BatchItem],
              temperature: float | None = None,
              gumbel: np.ndarray | None = None) -> float:
    """Loss value on a batch; deterministic when no Gumbel noise is given."""
    if not items:
        raise ValueError("elbo_loss needs a nonempty batch")
    temp = model.config.temp_end if temperature is None else temperature
    batch = model.make_batch(items)
    return float(model.elbo_graph(model.store.leaves(), batch, temp, gumbel).data)


def train_vae(dataset: UnlabeledDataset, config: VaeConfig, seed: int,
              num_states: int, num_actions: int) -> VaeModel:
    """Adam on the negative ELBO over uniformly sampled (trajectory, t) anchors."""
    init_rng = np.random.default_rng(derive_seed(seed, "vae-init"))
    batch_rng = np.random.default_rng(derive_seed(seed, "vae-batch"))
    noise_rng = np.random.default_rng(derive_seed(seed, "vae-noise"))
    model = build_vae(num_states, num_actions, config, init_rng)
    anchors = all_anchors(dataset)
    if not anchors:
        raise ValueError("dataset has no usable (trajectory, t) anchors")
    losses = []
    for step in range(config.steps):
        idx = batch_rng.integers(len(anchors), size=config.batch_size)
        items = [anchors[i] for i in idx]
        batch = model.make_batch(items)
        frac = step / max(config.steps - 1, 1)
        temp = config.temp_start + (config.temp_end - config.temp_start) * frac
        noise = nc.sample_gumbel(noise_rng, (len(items), config.num_codes))
        leaves = model.store.leaves()
        loss = model.elbo_graph(leaves, batch, temp, noise)
        value = loss.item()
        if not np.isfinite(value):
            raise nc.NonFiniteError(f"non-finite VAE loss at step {step}")
        loss.backward()
        nc.adam_step(model.store, nc.collect_grads(leaves), lr=config.lr)
        losses.append(value)
    window = min(100, max(len(losses) // 5, 1))
    model.diagnostics = {
        "steps": config.steps,
        "seed": int(seed),
        "loss_start": float(np.mean(losses[:window])),
        "loss_end": float(np.mean(losses[-window:])),
    }
    return model


def save_vae(model: VaeModel, directory: str | Path,
             dataset_hash: str | None = None) -> None:
    directory = Path(directory)
    nc.save_checkpoint(model.store, directory,
                       hyperparameters=asdict(model.config),
                       seed=model.diagnostics.get("seed"))
    sidecar = {
        "num_states": model.num_states,
        "num_actions": model.num_actions,
        "future_len": model.config.future_len,
        "num_codes": model.config.num_codes,
        "kl_coef": model.config.kl_coef,
        "dataset_hash": dataset_hash,
        "diagnostics": model.diagnostics,
    }
    (directory / "vae.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_vae(directory: str | Path) -> VaeModel:
    directory = Path(directory)
    store, manifest = nc.load_checkpoint(directory)
    sidecar = json.loads((directory / "vae.json").read_text())
    config = VaeConfig(**manifest["hyperparameters"])
    model = VaeModel(sidecar["num_states"], sidecar["num_actions"], config, store,
                     diagnostics=sidecar.get("diagnostics", {}))
    return model


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def dataset_hash_for_vae(dataset: UnlabeledDataset) -> str:
    return content_hash(dataset)
