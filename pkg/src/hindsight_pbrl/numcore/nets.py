"""Model building blocks: MLPs, the anti-causal window encoder, and
categorical-distribution utilities.

The encoder turns a token sequence into one embedding per position where
position t only ever sees tokens t..t+k (clipped at the sequence end).
Internally every position is re-encoded over its own future window with
relative positions, so the restriction holds exactly for any number of
attention layers and the output is invariant to everything before t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import ParamStore, init_linear

NEG_MASK = -1e9


# -- multilayer perceptron --------------------------------------------------


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    hidden: tuple[int, ...]
    out_dim: int
    final_activation: str = "identity"  # identity | relu

    def __post_init__(self):
        if self.final_activation not in ("identity", "relu"):
            raise ValueError(f"unknown final activation: {self.final_activation}")

    @property
    def dims(self) -> list[tuple[int, int]]:
        sizes = [self.in_dim, *self.hidden, self.out_dim]
        return list(zip(sizes[:-1], sizes[1:]))


def init_mlp(store: ParamStore, prefix: str, spec: MlpSpec,
             rng: np.random.Generator) -> None:
    for i, (din, dout) in enumerate(spec.dims):
        init_linear(store, f"{prefix}.l{i}", din, dout, rng)


def mlp_forward(params: dict[str, Tensor] | ParamStore, x, spec: MlpSpec,
                prefix: str = "mlp") -> Tensor:
    """Affine/relu stack. `x` is (..., in_dim); hidden layers use relu."""
    if isinstance(params, ParamStore):
        params = params.leaves()
    x = ad.as_tensor(x)
    if x.shape[-1] != spec.in_dim:
        raise ValueError(
            f"input dim {x.shape[-1]} does not match spec in_dim {spec.in_dim}"
        )
    n_layers = len(spec.dims)
    for i in range(n_layers):
        x = x @ params[f"{prefix}.l{i}.w"] + params[f"{prefix}.l{i}.b"]
        if i < n_layers - 1:
            x = ad.relu(x)
    if spec.final_activation == "relu":
        x = ad.relu(x)
    return x


# -- anti-causal window encoder ----------------------------------------------


@dataclass(frozen=True)
class EncoderSpec:
    token_dim: int
    embed_dim: int
    max_window: int       # largest window length = k + 1
    num_layers: int = 1
    ff_hidden: int = 64


def init_encoder(store: ParamStore, prefix: str, spec: EncoderSpec,
                 rng: np.random.Generator) -> None:
    init_linear(store, f"{prefix}.tok", spec.token_dim, spec.embed_dim, rng)
    store.add(f"{prefix}.pos",
              rng.uniform(-0.1, 0.1, size=(spec.max_window, spec.embed_dim)))
    for layer in range(spec.num_layers):
        for name in ("q", "k", "v", "o"):
            init_linear(store, f"{prefix}.a{layer}.{name}",
                        spec.embed_dim, spec.embed_dim, rng)
        init_linear(store, f"{prefix}.a{layer}.f1", spec.embed_dim, spec.ff_hidden, rng)
        init_linear(store, f"{prefix}.a{layer}.f2", spec.ff_hidden, spec.embed_dim, rng)


def encode_windows(params: dict[str, Tensor], windows: np.ndarray,
                   valid: np.ndarray, spec: EncoderSpec,
                   prefix: str = "enc") -> Tensor:
    """Embed a batch of future windows; returns the anchor embedding.

    windows: (B, W, token_dim) with position 0 the anchor token and the
    rest its future, zero-padded past the clip point.
    valid:   (B, W) boolean key mask; position 0 must be valid.

    Attention inside the window is anti-causal (each position attends to
    itself and later positions); only the anchor output is returned.
    """
    B, W, _ = windows.shape
    scale = 1.0 / np.sqrt(spec.embed_dim)
    h = ad.as_tensor(windows) @ params[f"{prefix}.tok.w"] + params[f"{prefix}.tok.b"]
    h = h + params[f"{prefix}.pos"][0:W, :]

    # additive mask: query i may attend key j iff j >= i and key j is valid
    tri = np.triu(np.ones((W, W)))
    mask = tri[None, :, :] * valid[:, None, :].astype(np.float64)
    bias = (1.0 - mask) * NEG_MASK

    for layer in range(spec.num_layers):
        p = f"{prefix}.a{layer}"
        q = h @ params[f"{p}.q.w"] + params[f"{p}.q.b"]
        k = h @ params[f"{p}.k.w"] + params[f"{p}.k.b"]
        v = h @ params[f"{p}.v.w"] + params[f"{p}.v.b"]
        scores = (q @ ad.swapaxes(k, -1, -2)) * scale + bias
        attn = ad.softmax(scores, axis=-1)
        h = h + (attn @ v) @ params[f"{p}.o.w"] + params[f"{p}.o.b"]
        ff = ad.relu(h @ params[f"{p}.f1.w"] + params[f"{p}.f1.b"])
        h = h + ff @ params[f"{p}.f2.w"] + params[f"{p}.f2.b"]
    return h[:, 0, :]


def build_windows(tokens: np.ndarray, window_k: int | None
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Slice (T, D) tokens into per-position future windows.

    Returns windows (T, W, D) and valid (T, W) where W = min(window_k, T-1) + 1.
    Window t holds tokens t..t+window_k, clipped at the sequence end.
    """
    T, D = tokens.shape
    if T == 0:
        raise ValueError("empty token sequence")
    k = T - 1 if window_k is None else min(int(window_k), T - 1)
    W = k + 1
    windows = np.zeros((T, W, D))
    valid = np.zeros((T, W), dtype=bool)
    for off in range(W):
        n = T - off
        windows[:n, off, :] = tokens[off:, :]
        valid[:n, off] = True
    return windows, valid


def anticausal_encode(params: dict[str, Tensor] | ParamStore,
                      token_sequence: np.ndarray, spec: EncoderSpec,
                      window_k: int | None = None,
                      prefix: str = "enc") -> Tensor:
    """Per-step embeddings of a (T, token_dim) sequence.

    The embedding at position t depends only on tokens t..t+window_k
    (all remaining tokens when window_k is None).
    """
    if isinstance(params, ParamStore):
        params = params.leaves()
    token_sequence = np.asarray(token_sequence, dtype=np.float64)
    if token_sequence.ndim != 2:
        raise ValueError("token_sequence must be (T, token_dim)")
    windows, valid = build_windows(token_sequence, window_k)
    return encode_windows(params, windows, valid, spec, prefix=prefix)


# -- categorical distributions ------------------------------------------------


@dataclass(frozen=True)
class CategoricalDist:
    """Distribution over K codes, parameterized by logits."""

    logits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "logits",
                           np.asarray(self.logits, dtype=np.float64))
        if self.logits.ndim != 1:
            raise ValueError("CategoricalDist logits must be a vector")

    @property
    def num_codes(self) -> int:
        return self.logits.shape[0]

    @property
    def probs(self) -> np.ndarray:
        return stable_softmax(self.logits)

    @property
    def log_probs(self) -> np.ndarray:
        return stable_log_softmax(self.logits)

    def sample(self, rng: np.random.Generator, n: int | None = None):
        p = self.probs
        if n is None:
            return int(rng.choice(self.num_codes, p=p))
        return rng.choice(self.num_codes, size=n, p=p)

    def mode(self) -> int:
        return int(np.argmax(self.logits))


def stable_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    m = np.max(logits, axis=axis, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=axis, keepdims=True)


def stable_log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    m = np.max(logits, axis=axis, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def categorical_kl(q, f) -> float:
    """KL(q || f) between categorical distributions, with 0 log 0 = 0."""
    qp = q.probs if isinstance(q, CategoricalDist) else np.asarray(q, dtype=np.float64)
    fp = f.probs if isinstance(f, CategoricalDist) else np.asarray(f, dtype=np.float64)
    if qp.shape != fp.shape:
        raise ValueError("distributions must have the same number of codes")
    mask = qp > 0.0
    terms = np.zeros_like(qp)
    terms[mask] = qp[mask] * (np.log(qp[mask]) - np.log(fp[mask]))
    return float(terms.sum())


def kl_from_logits(q_logits: Tensor, f_logits: Tensor) -> Tensor:
    """Differentiable KL(q || f) per row from logit tensors (..., K)."""
    q_log = ad.log_softmax(q_logits, axis=-1)
    f_log = ad.log_softmax(f_logits, axis=-1)
    q = ad.softmax(q_logits, axis=-1)
    return (q * (q_log - f_log)).sum(axis=-1)


def gumbel_softmax(logits: Tensor, gumbel_noise: np.ndarray | None,
                   temperature: float) -> Tensor:
    """Relaxed one-hot sample; with no noise, the zero-noise relaxation."""
    shifted = logits if gumbel_noise is None else logits + gumbel_noise
    return ad.softmax(shifted * (1.0 / float(temperature)), axis=-1)


def sample_gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.uniform(1e-12, 1.0 - 1e-12, size=shape)
    return -np.log(-np.log(u))
