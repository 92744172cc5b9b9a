"""Experiment recipes: the gambling credit-assignment study, the
preference/unlabeled distribution-mismatch comparison, and hyperparameter
sweeps.

Each recipe emits a CSV (one row per unit of work, failures isolated per
seed), a JSON summary, and a rendered figure next to the delimited output.
Emitted CSVs are re-read and schema-checked before the call returns.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import envs
from .config import ExperimentConfig
from .datasets import collect_unlabeled, gambling_preference_dataset
from .hindsight_vae import train_vae
from .pipeline import behavior_policy, run_pipeline
from .plots import render_gambling_scatter, render_method_returns, render_sweep_curve
from .preference import train_reward
from .rl import marginal_reward_table
from .seeding import derive_seed

GAMBLING_RECIPE = {
    "env.id": "gambling",
    "data.num_unlabeled": 200,
    "data.behavior": "gambling-uniform",
    "data.pref_source": "gambling-canonical",
    "data.segment_length": 2,
    "vae.k": 2, "vae.num_codes": 16, "vae.embed_dim": 16, "vae.hidden_dim": 32,
    "vae.steps": 600, "vae.batch_size": 32, "vae.lr": 1e-3,
    "reward.hidden_dim": 32, "reward.steps": 400, "reward.batch_size": 8,
    "reward.lr": 3e-3,
    "label.mode": "exact",
    "rl.steps": 1500, "rl.lr": 1e-3, "rl.hidden_dim": 32,
}

MISMATCH_RECIPE = {
    "env.id": "random",
    "env.num_states": 10, "env.num_actions": 3, "env.branching": 2,
    "env.horizon": 16,
    "data.num_unlabeled": 300, "data.num_pairs": 60, "data.segment_length": 8,
    "data.behavior": "noisy-optimal", "data.behavior_epsilon": 0.6,
    "data.pref_behavior": "noisy-optimal", "data.pref_behavior_epsilon": 0.1,
    "vae.k": 5, "vae.num_codes": 16, "vae.steps": 2500, "vae.lr": 1e-3,
    "reward.steps": 800, "reward.lr": 1e-3,
    "rl.steps": 2500, "rl.lr": 1e-3,
}

GAMBLING_CSV_HEADER = ["seed", "method", "r_s1_a1", "r_s1_a2",
                       "train_accuracy", "final_loss", "status"]
RETURNS_CSV_HEADER = ["method", "seed", "mean_return", "std_return", "status"]
SWEEP_CSV_HEADER = ["axis", "value", "seed", "mean_return", "std_return", "status"]

SWEEP_AXES = {
    "k": "vae.k",
    "pref_size": "data.num_pairs",
    "unlabeled_size": "data.num_unlabeled",
    "N": "label.n",
}


class CsvSchemaError(RuntimeError):
    pass


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row.get(col)) for col in header])
    validate_csv(path, header)


def validate_csv(path: Path, header: list[str]) -> None:
    """Self-check pass: the emitted file must parse back against its schema."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got != header:
            raise CsvSchemaError(f"{path}: header {got} != {header}")
        for i, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvSchemaError(f"{path}:{i}: expected {len(header)} fields")


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        parsed = {}
        for key, value in row.items():
            if key in ("seed", "value") and value not in ("", None):
                parsed[key] = int(value) if value.lstrip("-").isdigit() else float(value)
            elif key in ("r_s1_a1", "r_s1_a2", "train_accuracy", "final_loss",
                         "mean_return", "std_return") and value:
                parsed[key] = float(value)
            else:
                parsed[key] = value
        out.append(parsed)
    return out


def _write_summary(path: Path, summary: dict) -> None:
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    json.loads(path.read_text())  # self-check pass


# -- gambling credit assignment ---------------------------------------------------


def run_gambling_trial(seed: int, config: ExperimentConfig) -> list[dict]:
    """Train MR and HPL on the canonical pairs; record start-state rewards."""
    mdp = envs.gambling_mdp()
    pol = behavior_policy(mdp, "gambling-uniform", 0.0, config["rl.discount"])
    unlabeled = collect_unlabeled(
        mdp, pol, config["data.num_unlabeled"],
        seed=derive_seed(seed, "collect-unlabeled"), policy_id="gambling-uniform")
    prefs = gambling_preference_dataset()
    rows = []

    mr = train_reward(prefs, "markovian", None, config.reward_config(),
                      derive_seed(seed, "train-reward"),
                      mdp.num_states, mdp.num_actions)
    table = mr.markovian_table()
    rows.append({"seed": seed, "method": "mr",
                 "r_s1_a1": float(table[envs.S1, envs.A1]),
                 "r_s1_a2": float(table[envs.S1, envs.A2]),
                 "train_accuracy": mr.diagnostics["train_accuracy"],
                 "final_loss": mr.diagnostics["final_loss"], "status": "ok"})

    vae = train_vae(unlabeled.learner_view(), config.vae_config(),
                    derive_seed(seed, "train-vae"),
                    mdp.num_states, mdp.num_actions)
    hpl = train_reward(prefs, "hindsight", vae, config.reward_config(),
                       derive_seed(seed, "train-reward"),
                       mdp.num_states, mdp.num_actions)
    table = marginal_reward_table(hpl, vae, mode="exact")
    rows.append({"seed": seed, "method": "hpl",
                 "r_s1_a1": float(table[envs.S1, envs.A1]),
                 "r_s1_a2": float(table[envs.S1, envs.A2]),
                 "train_accuracy": hpl.diagnostics["train_accuracy"],
                 "final_loss": hpl.diagnostics["final_loss"], "status": "ok"})
    return rows


def gambling_summary(rows: list[dict]) -> dict:
    def frac(method, pred):
        ok = [r for r in rows if r["method"] == method and r["status"] == "ok"]
        return float(np.mean([pred(r) for r in ok])) if ok else float("nan")

    return {
        "num_rows": len(rows),
        "num_errors": sum(r["status"] != "ok" for r in rows),
        "accuracy_one_fraction": {
            m: frac(m, lambda r: r["train_accuracy"] == 1.0)
            for m in ("mr", "hpl")},
        "hpl_safe_over_risky_fraction": frac(
            "hpl", lambda r: r["r_s1_a2"] > r["r_s1_a1"]),
        "mr_risky_at_least_safe_fraction": frac(
            "mr", lambda r: r["r_s1_a1"] >= r["r_s1_a2"]),
    }


def check_gambling(summary: dict) -> tuple[bool, list[str]]:
    """Acceptance thresholds for the gambling experiment."""
    problems = []
    for m in ("mr", "hpl"):
        if summary["accuracy_one_fraction"][m] != 1.0:
            problems.append(f"{m} train accuracy below 1.0 on some seed")
    if not summary["hpl_safe_over_risky_fraction"] >= 0.9:
        problems.append("hpl safe>risky fraction below 0.9")
    if not summary["mr_risky_at_least_safe_fraction"] >= 0.25:
        problems.append("mr risky>=safe fraction below 0.25")
    if summary["num_errors"]:
        problems.append(f"{summary['num_errors']} seeds errored")
    return (not problems), problems


def exp_gambling(num_seeds: int, out_dir: str | Path, master_seed: int = 0,
                 overrides: dict | None = None) -> dict:
    if num_seeds < 1:
        raise ValueError("num_seeds must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = ExperimentConfig(dict(GAMBLING_RECIPE)).with_overrides(overrides or {})
    rows: list[dict] = []
    for i in range(num_seeds):
        seed = derive_seed(master_seed, "gambling-seed", i)
        try:
            rows.extend(run_gambling_trial(seed, config))
        except Exception as exc:  # seed isolation: record and continue
            for method in ("mr", "hpl"):
                rows.append({"seed": seed, "method": method, "r_s1_a1": None,
                             "r_s1_a2": None, "train_accuracy": None,
                             "final_loss": None, "status": f"error: {exc}"})
    write_csv(out / "gambling.csv", GAMBLING_CSV_HEADER, rows)
    summary = gambling_summary(rows)
    _write_summary(out / "summary.json", summary)
    render_gambling_scatter(rows, out / "scatter.png")
    return summary


# -- distribution mismatch ---------------------------------------------------------


def exp_mismatch(methods: list[str], num_seeds: int, out_dir: str | Path,
                 master_seed: int = 0, overrides: dict | None = None) -> dict:
    """Preference pairs from one behavior policy, unlabeled data from another."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = ExperimentConfig(dict(MISMATCH_RECIPE)).with_overrides(overrides or {})
    rows = []
    for i in range(num_seeds):
        seed = derive_seed(master_seed, "mismatch-seed", i)
        for method in methods:
            run_dir = out / "runs" / f"seed{i:03d}-{method}"
            try:
                cfg = base.with_overrides({"run.method": method})
                run_pipeline(cfg, run_dir, seed)
                record = json.loads((run_dir / "eval.json").read_text())
                rows.append({"method": method, "seed": seed,
                             "mean_return": record["mean_return"],
                             "std_return": record["std_return"], "status": "ok"})
            except Exception as exc:
                rows.append({"method": method, "seed": seed, "mean_return": None,
                             "std_return": None, "status": f"error: {exc}"})
    write_csv(out / "mismatch.csv", RETURNS_CSV_HEADER, rows)
    summary = {"methods": {}, "num_errors": sum(r["status"] != "ok" for r in rows)}
    for method in methods:
        vals = [r["mean_return"] for r in rows
                if r["method"] == method and r["status"] == "ok"]
        summary["methods"][method] = {
            "mean": float(np.mean(vals)) if vals else None,
            "std": float(np.std(vals)) if vals else None,
            "seeds": len(vals)}
    _write_summary(out / "summary.json", summary)
    render_method_returns(rows, out / "returns.png")
    return summary


# -- sweeps ------------------------------------------------------------------------


def sweep(axis: str, values: list, num_seeds: int, out_dir: str | Path,
          master_seed: int = 0, overrides: dict | None = None,
          base_recipe: dict | None = None) -> list[dict]:
    """One pipeline per (value, seed); long-format CSV plus a curve figure."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {sorted(SWEEP_AXES)}")
    if not values:
        raise ValueError("sweep needs at least one value")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    key = SWEEP_AXES[axis]
    base = ExperimentConfig(dict(base_recipe if base_recipe is not None
                                 else MISMATCH_RECIPE))
    base = base.with_overrides(overrides or {})
    if axis == "N":
        base = base.with_overrides({"label.mode": "monte-carlo"})
    rows = []
    for value in values:
        for i in range(num_seeds):
            seed = derive_seed(master_seed, "sweep", axis, str(value), i)
            run_dir = out / "runs" / f"{axis}{value}-seed{i:03d}"
            try:
                cfg = base.with_overrides({key: value})
                run_pipeline(cfg, run_dir, seed)
                record = json.loads((run_dir / "eval.json").read_text())
                rows.append({"axis": axis, "value": value, "seed": seed,
                             "mean_return": record["mean_return"],
                             "std_return": record["std_return"], "status": "ok"})
            except Exception as exc:
                rows.append({"axis": axis, "value": value, "seed": seed,
                             "mean_return": None, "std_return": None,
                             "status": f"error: {exc}"})
    write_csv(out / "sweep.csv", SWEEP_CSV_HEADER, rows)
    render_sweep_curve(rows, axis, out / "sweep.png")
    return rows
