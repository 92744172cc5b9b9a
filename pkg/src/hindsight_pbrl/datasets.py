"""Unlabeled trajectory datasets, fixed-length segments, and scripted
preference annotation.

Learners see reward-free trajectories; oracle rewards ride along on the
collection side only and are stripped from every learner-visible view.
Persistence is newline-delimited JSON, one record per line, with dataset
metadata in a `.meta.json` sidecar.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import MDPSpec, Trajectory, episode_return, rollout

VALID_LABELS = (0.0, 0.5, 1.0)


class DatasetError(ValueError):
    pass


class EmptyDatasetError(DatasetError):
    pass


class NoEligibleTrajectoryError(DatasetError):
    pass


class SchemaError(DatasetError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


class MissingOracleRewardsError(DatasetError):
    pass


@dataclass(frozen=True)
class Segment:
    """Exactly H consecutive (s, a) pairs from one trajectory.

    Provenance (`source_traj`, `start_index`) and oracle `rewards` are
    bookkeeping for the annotation side; equality ignores them.
    """

    states: tuple[int, ...]
    actions: tuple[int, ...]
    source_traj: int | None = None
    start_index: int | None = None
    rewards: tuple[float, ...] | None = None

    def __post_init__(self):
        if len(self.states) != len(self.actions) or not self.states:
            raise DatasetError("segment needs equal, nonzero state/action counts")

    @property
    def length(self) -> int:
        return len(self.actions)

    def oracle_return(self) -> float:
        if self.rewards is None:
            raise MissingOracleRewardsError("segment carries no oracle rewards")
        return float(sum(self.rewards))

    def __eq__(self, other):
        return (isinstance(other, Segment)
                and self.states == other.states
                and self.actions == other.actions)

    def __hash__(self):
        return hash((self.states, self.actions))


@dataclass(frozen=True)
class PreferencePair:
    seg0: Segment
    seg1: Segment
    label: float  # 0 -> seg0 preferred, 1 -> seg1 preferred, 0.5 -> neutral

    def __post_init__(self):
        if self.seg0.length != self.seg1.length:
            raise DatasetError("paired segments must have equal length")
        if self.label not in VALID_LABELS:
            raise DatasetError(f"label must be one of {VALID_LABELS}")


@dataclass
class UnlabeledDataset:
    trajectories: list[Trajectory]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.trajectories:
            raise EmptyDatasetError("unlabeled dataset is empty")

    def __len__(self):
        return len(self.trajectories)

    def learner_view(self) -> "UnlabeledDataset":
        """Copy with oracle rewards removed."""
        return UnlabeledDataset(
            [t.without_rewards() for t in self.trajectories], dict(self.metadata))


@dataclass
class PreferenceDataset:
    pairs: list[PreferencePair]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.pairs:
            raise EmptyDatasetError("preference dataset is empty")

    def __len__(self):
        return len(self.pairs)


def collect_unlabeled(mdp: MDPSpec, behavior_policy: np.ndarray, num_traj: int,
                      seed: int, policy_id: str = "behavior") -> UnlabeledDataset:
    """Roll out the behavior policy; rewards stay on the oracle side."""
    if num_traj < 1:
        raise ValueError("num_traj must be >= 1")
    trajs = rollout(mdp, behavior_policy, seed=seed, num_episodes=num_traj)
    meta = {
        "env": mdp.name,
        "behavior_policy": policy_id,
        "seed": int(seed),
        "terminal_states": np.flatnonzero(mdp.terminal).tolist(),
        "horizon": mdp.horizon,
    }
    return UnlabeledDataset(trajs, meta)


def slice_segments(dataset: UnlabeledDataset, H: int, num_segments: int,
                   seed: int) -> list[Segment]:
    """Uniformly sample fixed-length segments over (trajectory, start)."""
    if H < 1:
        raise ValueError("H must be >= 1")
    eligible = [i for i, t in enumerate(dataset.trajectories) if t.length >= H]
    if not eligible:
        raise NoEligibleTrajectoryError(
            f"no trajectory has length >= {H}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(num_segments):
        ti = int(eligible[rng.integers(len(eligible))])
        traj = dataset.trajectories[ti]
        start = int(rng.integers(traj.length - H + 1))
        rewards = None
        if traj.rewards is not None:
            rewards = tuple(traj.rewards[start:start + H])
        out.append(Segment(
            states=tuple(traj.states[start:start + H]),
            actions=tuple(traj.actions[start:start + H]),
            source_traj=ti, start_index=start, rewards=rewards))
    return out


def annotate(pairs: list[tuple[Segment, Segment]], annotator: str, seed: int,
             temperature: float = 1.0, metadata: dict | None = None
             ) -> PreferenceDataset:
    """Label segment pairs from their oracle returns.

    `deterministic`: prefer the larger return, neutral on an exact tie.
    `bt-noisy`: Bernoulli label with p(second preferred) =
    sigmoid((return1 - return0) / temperature).
    """
    if annotator not in ("deterministic", "bt-noisy"):
        raise ValueError(f"unknown annotator: {annotator}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    rng = np.random.default_rng(seed)
    labeled = []
    for seg0, seg1 in pairs:
        r0, r1 = seg0.oracle_return(), seg1.oracle_return()
        if annotator == "deterministic":
            label = 0.5 if r0 == r1 else (1.0 if r1 > r0 else 0.0)
        else:
            p1 = 1.0 / (1.0 + np.exp(-(r1 - r0) / temperature))
            label = 1.0 if rng.uniform() < p1 else 0.0
        labeled.append(PreferencePair(seg0, seg1, label))
    meta = dict(metadata or {})
    meta.update({"annotator": annotator, "seed": int(seed)})
    return PreferenceDataset(labeled, meta)


def make_pairs(segments: list[Segment]) -> list[tuple[Segment, Segment]]:
    """Pair consecutive segments: (0,1), (2,3), ..."""
    if len(segments) < 2:
        raise DatasetError("need at least two segments to form pairs")
    return [(segments[i], segments[i + 1])
            for i in range(0, len(segments) - 1, 2)]


def gambling_preference_dataset() -> PreferenceDataset:
    """The four canonical two-step preference pairs for the gambling MDP.

    Three pairs prefer the trajectory that reached the rewarding state; the
    risky trajectory that landed badly loses to the safe one.
    """
    from .envs import A1, A2, A3, S1, S_AVG, S_BAD, S_GOOD

    good = Segment((S1, S_GOOD), (A1, A3), rewards=(0.0, 1.0))
    bad = Segment((S1, S_BAD), (A1, A3), rewards=(0.0, -1.0))
    avg = Segment((S1, S_AVG), (A2, A3), rewards=(0.0, 0.0))
    pairs = [
        PreferencePair(good, avg, 0.0),
        PreferencePair(good, avg, 0.0),
        PreferencePair(good, bad, 0.0),
        PreferencePair(bad, avg, 1.0),
    ]
    return PreferenceDataset(pairs, {"env": "gambling", "source": "canonical"})


# -- persistence --------------------------------------------------------------


def _segment_to_json(seg: Segment) -> dict:
    return {"states": list(seg.states), "actions": list(seg.actions)}


def _segment_from_json(d: dict, path, line_no) -> Segment:
    try:
        return Segment(states=tuple(int(s) for s in d["states"]),
                       actions=tuple(int(a) for a in d["actions"]))
    except (KeyError, TypeError, DatasetError) as exc:
        raise SchemaError(path, line_no, f"bad segment: {exc}") from exc


def save_dataset(dataset: UnlabeledDataset | PreferenceDataset,
                 path: str | Path) -> None:
    path = Path(path)
    lines = []
    if isinstance(dataset, UnlabeledDataset):
        for t in dataset.trajectories:
            rec = {"states": list(t.states), "actions": list(t.actions)}
            if t.rewards is not None:
                rec["rewards"] = list(t.rewards)
            lines.append(json.dumps(rec, sort_keys=True))
    elif isinstance(dataset, PreferenceDataset):
        for p in dataset.pairs:
            rec = {"seg0": _segment_to_json(p.seg0),
                   "seg1": _segment_to_json(p.seg1),
                   "label": p.label if p.label == 0.5 else int(p.label)}
            lines.append(json.dumps(rec, sort_keys=True))
    else:
        raise TypeError(f"cannot save {type(dataset).__name__}")
    path.write_text("\n".join(lines) + "\n")
    meta_path = path.with_name(path.name + ".meta.json")
    meta_path.write_text(json.dumps(dataset.metadata, sort_keys=True) + "\n")


def _load_metadata(path: Path) -> dict:
    meta_path = path.with_name(path.name + ".meta.json")
    if meta_path.exists():
        return json.loads(meta_path.read_text())
    return {}


def load_unlabeled(path: str | Path) -> UnlabeledDataset:
    path = Path(path)
    trajs = []
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(path, line_no, f"invalid JSON: {exc.msg}") from exc
        try:
            rewards = rec.get("rewards")
            trajs.append(Trajectory(
                states=tuple(int(s) for s in rec["states"]),
                actions=tuple(int(a) for a in rec["actions"]),
                rewards=None if rewards is None else tuple(float(r) for r in rewards)))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(path, line_no, f"bad trajectory: {exc}") from exc
    if not trajs:
        raise EmptyDatasetError(f"{path}: empty dataset")
    return UnlabeledDataset(trajs, _load_metadata(path))


def load_preferences(path: str | Path) -> PreferenceDataset:
    path = Path(path)
    pairs = []
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(path, line_no, f"invalid JSON: {exc.msg}") from exc
        try:
            label = float(rec["label"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(path, line_no, f"bad label: {exc}") from exc
        if label not in VALID_LABELS:
            raise SchemaError(path, line_no, f"label {label} not in {VALID_LABELS}")
        seg0 = _segment_from_json(rec.get("seg0", {}), path, line_no)
        seg1 = _segment_from_json(rec.get("seg1", {}), path, line_no)
        try:
            pairs.append(PreferencePair(seg0, seg1, label))
        except DatasetError as exc:
            raise SchemaError(path, line_no, str(exc)) from exc
    if not pairs:
        raise EmptyDatasetError(f"{path}: empty dataset")
    return PreferenceDataset(pairs, _load_metadata(path))


def content_hash(dataset: UnlabeledDataset | PreferenceDataset) -> str:
    """SHA-256 of the canonical serialized records."""
    h = hashlib.sha256()
    if isinstance(dataset, UnlabeledDataset):
        for t in dataset.trajectories:
            rec = {"states": list(t.states), "actions": list(t.actions),
                   "rewards": None if t.rewards is None else list(t.rewards)}
            h.update(json.dumps(rec, sort_keys=True).encode())
    else:
        for p in dataset.pairs:
            rec = {"seg0": _segment_to_json(p.seg0),
                   "seg1": _segment_to_json(p.seg1), "label": p.label}
            h.update(json.dumps(rec, sort_keys=True).encode())
    return h.hexdigest()


def segment_returns_summary(pairs: list[PreferencePair]) -> list[tuple[float, float]]:
    return [(p.seg0.oracle_return(), p.seg1.oracle_return()) for p in pairs]
