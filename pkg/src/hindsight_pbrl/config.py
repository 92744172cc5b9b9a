"""Flat `section.key = value` experiment configuration.

Every key is declared below with its type, default, and validity range;
unknown keys and out-of-range values are rejected before anything runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .hindsight_vae import VaeConfig
from .preference import RewardConfig
from .rl import RlConfig


class ConfigError(ValueError):
    pass


def _positive(x):
    return x > 0


def _non_negative(x):
    return x >= 0


def _fraction(x):
    return 0.0 <= x <= 1.0


# key -> (type, default, validator, description)
SCHEMA: dict[str, tuple] = {
    "env.id": (str, "gambling", lambda v: v in ("gambling", "random"),
               "gambling | random"),
    "env.seed": (int, 0, _non_negative, "structure seed for random MDPs"),
    "env.num_states": (int, 10, lambda v: v >= 2, ">= 2"),
    "env.num_actions": (int, 3, lambda v: v >= 2, ">= 2"),
    "env.branching": (int, 2, _positive, "successors per (s, a)"),
    "env.reward_sparsity": (float, 0.5, _fraction, "fraction of nonzero rewards"),
    "env.horizon": (int, 16, _positive, "max episode length"),

    "data.num_unlabeled": (int, 300, _positive, "trajectories in the unlabeled set"),
    "data.num_pairs": (int, 60, _positive, "preference pairs"),
    "data.segment_length": (int, 8, _positive, "H"),
    "data.behavior": (str, "uniform",
                      lambda v: v in ("uniform", "optimal", "noisy-optimal",
                                      "gambling-uniform"),
                      "behavior policy for the unlabeled set"),
    "data.behavior_epsilon": (float, 0.5, _fraction, "noise for noisy-optimal"),
    "data.pref_behavior": (str, "same",
                           lambda v: v in ("same", "uniform", "optimal",
                                           "noisy-optimal", "gambling-uniform"),
                           "behavior policy behind the preference pairs"),
    "data.pref_behavior_epsilon": (float, 0.2, _fraction, "noise for pref policy"),
    "data.pref_source": (str, "annotated",
                         lambda v: v in ("annotated", "gambling-canonical"),
                         "annotated | gambling-canonical"),
    "data.annotator": (str, "deterministic",
                       lambda v: v in ("deterministic", "bt-noisy"),
                       "label rule"),
    "data.annotator_temperature": (float, 1.0, _positive, "bt-noisy temperature"),

    "vae.k": (int, 5, _non_negative, "encoded future length"),
    "vae.num_codes": (int, 16, lambda v: v >= 2, "categorical classes K"),
    "vae.kl_coef": (float, 0.1, _non_negative, "KL weight"),
    "vae.embed_dim": (int, 32, _positive, "attention embedding width"),
    "vae.num_layers": (int, 1, _positive, "attention layers"),
    "vae.hidden_dim": (int, 64, _positive, "decoder/prior MLP width"),
    "vae.num_hidden_layers": (int, 2, _positive, "decoder/prior MLP depth"),
    "vae.steps": (int, 5000, _positive, "training steps"),
    "vae.batch_size": (int, 64, _positive, "minibatch size"),
    "vae.lr": (float, 3e-4, _positive, "learning rate"),
    "vae.temp_start": (float, 2.0, _positive, "relaxation temperature start"),
    "vae.temp_end": (float, 0.5, _positive, "relaxation temperature end"),

    "reward.hidden_dim": (int, 64, _positive, "reward MLP width"),
    "reward.num_hidden_layers": (int, 2, _non_negative, "reward MLP depth"),
    "reward.final_activation": (str, "identity",
                                lambda v: v in ("identity", "relu"),
                                "identity | relu"),
    "reward.steps": (int, 2000, _positive, "training steps"),
    "reward.batch_size": (int, 64, _positive, "minibatch size (pairs)"),
    "reward.lr": (float, 3e-4, _positive, "learning rate"),
    "reward.latent_mode": (str, "posterior-sample",
                           lambda v: v in ("posterior-sample", "posterior-mode"),
                           "code draw during reward training"),
    "reward.ensemble_size": (int, 5, _positive, "members for mr-ensemble"),

    "label.mode": (str, "auto",
                   lambda v: v in ("auto", "exact", "monte-carlo"),
                   "marginalization mode"),
    "label.n": (int, 20, _positive, "Monte Carlo samples N"),

    "rl.discount": (float, 0.99, lambda v: 0.0 <= v < 1.0, "gamma in [0, 1)"),
    "rl.expectile": (float, 0.7, lambda v: 0.0 < v < 1.0, "tau in (0, 1)"),
    "rl.beta_temp": (float, 0.333, _positive, "advantage temperature"),
    "rl.adv_clip": (float, 100.0, _positive, "cap on exp(A / beta)"),
    "rl.soft_update": (float, 0.005, lambda v: 0.0 < v <= 1.0, "target update rate"),
    "rl.steps": (int, 5000, _positive, "training steps"),
    "rl.batch_size": (int, 64, _positive, "minibatch size"),
    "rl.lr": (float, 3e-4, _positive, "learning rate"),
    "rl.hidden_dim": (int, 64, _positive, "Q/V/policy MLP width"),
    "rl.num_hidden_layers": (int, 2, _positive, "Q/V/policy MLP depth"),

    "run.method": (str, "hpl",
                   lambda v: v in ("oracle", "sft", "mr", "mr-ensemble", "hpl"),
                   "pipeline method"),
    "run.seed": (int, 0, _non_negative, "master seed"),
    "run.eval_episodes": (int, 200, _positive, "evaluation rollouts"),
}

METHODS = ("oracle", "sft", "mr", "mr-ensemble", "hpl")


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {k: spec[1] for k, spec in SCHEMA.items()}
        for key, value in self.values.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key: {key}")
            merged[key] = _coerce(key, value)
        for key, value in merged.items():
            _, _, check, desc = SCHEMA[key]
            if not check(value):
                raise ConfigError(f"{key} = {value!r} out of range ({desc})")
        self.values = merged

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        merged = dict(self.values)
        merged.update(overrides)
        return ExperimentConfig(merged)

    def canonical(self) -> str:
        return "\n".join(f"{k} = {_format_value(v)}"
                         for k, v in sorted(self.values.items())) + "\n"

    # typed sub-configs -----------------------------------------------------

    def vae_config(self) -> VaeConfig:
        v = self.values
        return VaeConfig(
            future_len=v["vae.k"], num_codes=v["vae.num_codes"],
            kl_coef=v["vae.kl_coef"], embed_dim=v["vae.embed_dim"],
            num_layers=v["vae.num_layers"], hidden_dim=v["vae.hidden_dim"],
            num_hidden_layers=v["vae.num_hidden_layers"], steps=v["vae.steps"],
            batch_size=v["vae.batch_size"], lr=v["vae.lr"],
            temp_start=v["vae.temp_start"], temp_end=v["vae.temp_end"])

    def reward_config(self) -> RewardConfig:
        v = self.values
        return RewardConfig(
            hidden_dim=v["reward.hidden_dim"],
            num_hidden_layers=v["reward.num_hidden_layers"],
            final_activation=v["reward.final_activation"],
            steps=v["reward.steps"], batch_size=v["reward.batch_size"],
            lr=v["reward.lr"], latent_mode=v["reward.latent_mode"])

    def rl_config(self) -> RlConfig:
        v = self.values
        return RlConfig(
            discount=v["rl.discount"], expectile=v["rl.expectile"],
            beta_temp=v["rl.beta_temp"], adv_clip=v["rl.adv_clip"],
            soft_update=v["rl.soft_update"], steps=v["rl.steps"],
            batch_size=v["rl.batch_size"], lr=v["rl.lr"],
            hidden_dim=v["rl.hidden_dim"],
            num_hidden_layers=v["rl.num_hidden_layers"])


def _coerce(key: str, value):
    typ = SCHEMA[key][0]
    if isinstance(value, typ) and not (typ is int and isinstance(value, bool)):
        return value
    if isinstance(value, str):
        try:
            if typ is int:
                return int(value)
            if typ is float:
                return float(value)
            return value
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {value!r} as {typ.__name__}") from exc
    if typ is float and isinstance(value, int):
        return float(value)
    raise ConfigError(f"{key}: expected {typ.__name__}, got {type(value).__name__}")


def _format_value(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def parse_config_file(path: str | Path) -> ExperimentConfig:
    """Read `section.key = value` lines; '#' starts a comment."""
    values = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'section.key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return ExperimentConfig(values)


def parse_set_overrides(assignments: list[str]) -> dict:
    """--set section.key=value flags into a raw override dict."""
    out = {}
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        key, _, value = item.partition("=")
        out[key.strip()] = value.strip()
    return out
