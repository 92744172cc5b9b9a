"""Staged pipeline: generate data, train models, label, optimize, evaluate.

Each stage reads its inputs from the run directory and persists its
outputs there, so stages can run as separate commands or as one pipeline.
A manifest written at the end records the canonical configuration, the
per-stage seed tree, and the SHA-256 of every artifact; rerunning with the
same config and master seed reproduces every hash bitwise.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import envs
from .config import ExperimentConfig
from .datasets import (
    UnlabeledDataset,
    annotate,
    collect_unlabeled,
    content_hash,
    gambling_preference_dataset,
    load_preferences,
    load_unlabeled,
    make_pairs,
    save_dataset,
    slice_segments,
)
from .hindsight_vae import load_vae, save_vae, train_vae
from .preference import load_reward, save_reward, train_reward, train_reward_ensemble
from .rl import LabeledDataset, PolicyArtifacts, evaluate, iql_train, label_dataset, sft_train
from .seeding import derive_seed

STAGES = ("gen-data", "train-vae", "train-reward", "label", "train-rl", "eval")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def build_env(config: ExperimentConfig) -> envs.MDPSpec:
    if config["env.id"] == "gambling":
        return envs.gambling_mdp()
    return envs.random_mdp(
        seed=config["env.seed"], num_states=config["env.num_states"],
        num_actions=config["env.num_actions"], branching=config["env.branching"],
        reward_sparsity=config["env.reward_sparsity"],
        horizon=config["env.horizon"])


def behavior_policy(mdp: envs.MDPSpec, kind: str, epsilon: float,
                    discount: float) -> np.ndarray:
    """Build a (S, A) behavior policy matrix by name."""
    S, A = mdp.num_states, mdp.num_actions
    if kind == "uniform":
        return np.full((S, A), 1.0 / A)
    if kind == "gambling-uniform":
        if mdp.name != "gambling":
            raise ValueError("gambling-uniform policy needs the gambling MDP")
        pol = np.zeros((S, A))
        pol[envs.S1, envs.A1] = 0.5
        pol[envs.S1, envs.A2] = 0.5
        for s in (envs.S_GOOD, envs.S_BAD, envs.S_AVG, envs.S_TERM):
            pol[s, envs.A3] = 1.0
        return pol
    _, _, pi = envs.value_iteration(mdp, discount=discount)
    greedy = envs.greedy_policy_matrix(pi, A)
    if kind == "optimal":
        return greedy
    if kind == "noisy-optimal":
        return (1.0 - epsilon) * greedy + epsilon / A
    raise ValueError(f"unknown behavior policy kind: {kind}")


# -- stage implementations ------------------------------------------------------


def stage_gen_data(config: ExperimentConfig, out: Path, master_seed: int) -> None:
    mdp = build_env(config)
    mdp.save(out / "env.json")
    discount = config["rl.discount"]

    kind_u = config["data.behavior"]
    pol_u = behavior_policy(mdp, kind_u, config["data.behavior_epsilon"], discount)
    unlabeled = collect_unlabeled(
        mdp, pol_u, config["data.num_unlabeled"],
        seed=derive_seed(master_seed, "collect-unlabeled"), policy_id=kind_u)
    save_dataset(unlabeled, out / "unlabeled.jsonl")

    if config["data.pref_source"] == "gambling-canonical":
        if config["env.id"] != "gambling":
            raise ValueError("gambling-canonical pairs need env.id = gambling")
        prefs = gambling_preference_dataset()
    else:
        kind_p = config["data.pref_behavior"]
        if kind_p == "same":
            kind_p = kind_u
        pol_p = behavior_policy(mdp, kind_p,
                                config["data.pref_behavior_epsilon"], discount)
        pref_traj = collect_unlabeled(
            mdp, pol_p, max(32, config["data.num_pairs"]),
            seed=derive_seed(master_seed, "collect-pref"), policy_id=kind_p)
        segments = slice_segments(
            pref_traj, config["data.segment_length"],
            2 * config["data.num_pairs"],
            seed=derive_seed(master_seed, "slice"))
        prefs = annotate(
            make_pairs(segments), config["data.annotator"],
            seed=derive_seed(master_seed, "annotate"),
            temperature=config["data.annotator_temperature"],
            metadata={"env": mdp.name, "behavior_policy": kind_p})
    save_dataset(prefs, out / "prefs.jsonl")


def stage_train_vae(config: ExperimentConfig, out: Path, master_seed: int) -> None:
    mdp = envs.MDPSpec.load(out / "env.json")
    unlabeled = load_unlabeled(out / "unlabeled.jsonl").learner_view()
    model = train_vae(unlabeled, config.vae_config(),
                      seed=derive_seed(master_seed, "train-vae"),
                      num_states=mdp.num_states, num_actions=mdp.num_actions)
    save_vae(model, out / "vae", dataset_hash=content_hash(unlabeled))


def stage_train_reward(config: ExperimentConfig, out: Path, master_seed: int) -> None:
    mdp = envs.MDPSpec.load(out / "env.json")
    prefs = load_preferences(out / "prefs.jsonl")
    method = config["run.method"]
    seed = derive_seed(master_seed, "train-reward")
    rw_cfg = config.reward_config()
    if method == "hpl":
        vae = load_vae(out / "vae")
        model = train_reward(prefs, "hindsight", vae, rw_cfg, seed,
                             mdp.num_states, mdp.num_actions)
        save_reward(model, out / "reward")
        diagnostics = [model.diagnostics]
    elif method == "mr":
        model = train_reward(prefs, "markovian", None, rw_cfg, seed,
                             mdp.num_states, mdp.num_actions)
        save_reward(model, out / "reward")
        diagnostics = [model.diagnostics]
    elif method == "mr-ensemble":
        members = train_reward_ensemble(prefs, config["reward.ensemble_size"],
                                        rw_cfg, seed, mdp.num_states,
                                        mdp.num_actions)
        for i, m in enumerate(members):
            save_reward(m, out / "reward" / f"member_{i}")
        diagnostics = [m.diagnostics for m in members]
    else:
        raise ValueError(f"method '{method}' does not train a reward model")
    (out / "reward_diag.json").write_text(
        json.dumps(diagnostics, indent=2, sort_keys=True) + "\n")


def _load_reward_models(config: ExperimentConfig, out: Path):
    method = config["run.method"]
    if method == "hpl":
        vae = load_vae(out / "vae")
        return load_reward(out / "reward", vae), vae
    if method == "mr":
        return load_reward(out / "reward"), None
    if method == "mr-ensemble":
        members = []
        for d in sorted((out / "reward").glob("member_*")):
            members.append(load_reward(d))
        if not members:
            raise FileNotFoundError("no ensemble members under reward/")
        return members, None
    raise ValueError(f"method '{method}' has no reward model")


def stage_label(config: ExperimentConfig, out: Path, master_seed: int) -> None:
    mdp = envs.MDPSpec.load(out / "env.json")
    unlabeled = load_unlabeled(out / "unlabeled.jsonl").learner_view()
    method = config["run.method"]
    if method == "oracle":
        labeled = label_dataset(unlabeled, None, oracle_mdp=mdp)
    else:
        models, vae = _load_reward_models(config, out)
        labeled = label_dataset(unlabeled, models, vae, n=config["label.n"],
                                mode=config["label.mode"],
                                seed=derive_seed(master_seed, "label"))
    labeled.save(out / "labeled.jsonl")


def stage_train_rl(config: ExperimentConfig, out: Path, master_seed: int) -> None:
    mdp = envs.MDPSpec.load(out / "env.json")
    seed = derive_seed(master_seed, "train-rl")
    if config["run.method"] == "sft":
        prefs = load_preferences(out / "prefs.jsonl")
        artifacts = sft_train(prefs, config.rl_config(), seed,
                              mdp.num_states, mdp.num_actions)
    else:
        labeled = LabeledDataset.load(out / "labeled.jsonl")
        artifacts = iql_train(labeled, config.rl_config(), seed,
                              mdp.num_states, mdp.num_actions)
    artifacts.save(out / "rl")


def stage_eval(config: ExperimentConfig, out: Path, master_seed: int) -> None:
    mdp = envs.MDPSpec.load(out / "env.json")
    artifacts = PolicyArtifacts.load(out / "rl")
    stats = evaluate(artifacts, mdp, config["run.eval_episodes"],
                     seed=derive_seed(master_seed, "eval"))
    record = {"method": config["run.method"], "seed": int(master_seed),
              **stats.to_json_dict()}
    (out / "eval.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def stages_for_method(method: str) -> list[str]:
    if method == "oracle":
        return ["gen-data", "label", "train-rl", "eval"]
    if method == "sft":
        return ["gen-data", "train-rl", "eval"]
    if method in ("mr", "mr-ensemble"):
        return ["gen-data", "train-reward", "label", "train-rl", "eval"]
    return ["gen-data", "train-vae", "train-reward", "label", "train-rl", "eval"]


_STAGE_FNS = {
    "gen-data": stage_gen_data,
    "train-vae": stage_train_vae,
    "train-reward": stage_train_reward,
    "label": stage_label,
    "train-rl": stage_train_rl,
    "eval": stage_eval,
}


def run_stage(name: str, config: ExperimentConfig, out: str | Path,
              master_seed: int) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        _STAGE_FNS[name](config, out, master_seed)
    except Exception as exc:  # persisted partial artifacts stay in place
        raise StageError(name, exc) from exc


def file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(config: ExperimentConfig, out: Path, master_seed: int) -> dict:
    artifacts = {}
    for path in sorted(out.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            artifacts[str(path.relative_to(out))] = file_sha256(path)
    manifest = {
        "config": config.canonical(),
        "master_seed": int(master_seed),
        "method": config["run.method"],
        "stage_seeds": {s: derive_seed(master_seed, {
            "gen-data": "collect-unlabeled", "train-vae": "train-vae",
            "train-reward": "train-reward", "label": "label",
            "train-rl": "train-rl", "eval": "eval"}[s])
            for s in stages_for_method(config["run.method"])},
        "artifacts": artifacts,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def run_pipeline(config: ExperimentConfig, out: str | Path,
                 master_seed: int) -> dict:
    """Run every stage for the configured method and write the manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.canonical())
    for stage in stages_for_method(config["run.method"]):
        run_stage(stage, config, out, master_seed)
    return write_manifest(config, out, master_seed)


def read_eval(out: str | Path) -> dict:
    return json.loads((Path(out) / "eval.json").read_text())
