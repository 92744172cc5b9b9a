"""Named parameter storage, Adam updates, and checkpoint persistence.

A ParamStore owns float64 arrays keyed by name plus the Adam moment
buffers that go with them. Checkpoints are a JSON manifest (names,
shapes, hyperparameters, seed) next to one flat little-endian float32
blob holding every array in manifest order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor


class NonFiniteError(RuntimeError):
    """A gradient or loss stopped being finite."""


class ParamStore:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, array: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name}")
        arr = np.asarray(array, dtype=np.float64)
        self.params[name] = arr
        self._m[name] = np.zeros_like(arr)
        self._v[name] = np.zeros_like(arr)

    def leaves(self) -> dict[str, Tensor]:
        """Fresh leaf tensors for one forward/backward pass."""
        return {k: Tensor(v, requires_grad=True) for k, v in self.params.items()}

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for k, v in self.params.items():
            other.add(k, v.copy())
        other.step = self.step
        return other

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def init_linear(store: ParamStore, prefix: str, in_dim: int, out_dim: int,
                rng: np.random.Generator) -> None:
    """Fan-in uniform weights, zero bias."""
    bound = 1.0 / np.sqrt(in_dim)
    store.add(f"{prefix}.w", rng.uniform(-bound, bound, size=(in_dim, out_dim)))
    store.add(f"{prefix}.b", np.zeros(out_dim))


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], lr: float = 3e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              t: int | None = None) -> None:
    """One bias-corrected Adam update, in place.

    Raises NonFiniteError if any gradient contains NaN or Inf.
    """
    if t is None:
        t = store.step + 1
    if t < 1:
        raise ValueError("Adam step index must be >= 1")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in '{name}'")
        p = store.params[name]
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    store.step = t


def collect_grads(leaves: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients from leaf tensors after backward(); zeros where untouched."""
    return {
        name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
        for name, leaf in leaves.items()
    }


def save_checkpoint(store: ParamStore, directory: str | Path,
                    hyperparameters: dict | None = None,
                    seed: int | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = sorted(store.params)
    entries = []
    offset = 0
    blob = bytearray()
    for name in names:
        arr = store.params[name].astype("<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob.extend(arr.tobytes())
        offset += arr.size * 4
    manifest = {
        "format": "flat-f32le",
        "arrays": entries,
        "hyperparameters": hyperparameters or {},
        "seed": seed,
    }
    (directory / "params.bin").write_bytes(bytes(blob))
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def load_checkpoint(directory: str | Path) -> tuple[ParamStore, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    blob = (directory / "params.bin").read_bytes()
    store = ParamStore()
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=start)
        store.add(entry["name"], arr.reshape(shape).astype(np.float64))
    return store, manifest
