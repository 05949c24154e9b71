"""Offline dataset model, trajectory bookkeeping and file persistence.

A :class:`Dataset` stores transitions column-wise as float32 arrays, which is
also the on-disk precision, so a save/load round trip is bit-exact.  Trajectory
segmentation is kept explicitly as ``(start, length)`` pairs rather than being
inferred from terminal flags, because timeout-truncated trajectories end
without a terminal.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DATASET_MAGIC = b"ODPRDS01"
_HEADER = struct.Struct("<8sQIIB")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class DatasetError(ValueError):
    """Invalid dataset content. ``index`` is the offending record, when known."""

    def __init__(self, message, index=None):
        if index is not None:
            message = f"{message} (record {index})"
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool


@dataclass(frozen=True)
class TrajectoryReturns:
    returns: np.ndarray
    per_transition_return: np.ndarray


def _as_matrix(x, n, name):
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 1 and n == x.shape[0]:
        x = x.reshape(n, -1) if n else x.reshape(0, 0)
    if x.ndim != 2 or x.shape[0] != n:
        raise DatasetError(f"{name} must have shape (N, dim) with N={n}, got {x.shape}")
    return x


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column store of ``(s, a, r, s', terminal)`` records.

    ``trajectory_bounds`` is either ``None`` or an ``(M, 2)`` integer array of
    ``(start, length)`` rows that exactly partitions ``range(len(self))``.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    trajectory_bounds: np.ndarray | None = None

    def __post_init__(self):
        rewards = np.asarray(self.rewards, dtype=np.float32).reshape(-1)
        n = rewards.shape[0]
        states = _as_matrix(self.states, n, "states")
        next_states = _as_matrix(self.next_states, n, "next_states")
        actions = _as_matrix(self.actions, n, "actions")
        terminals = np.asarray(self.terminals).reshape(-1).astype(bool)
        if terminals.shape[0] != n:
            raise DatasetError(f"terminals must have length {n}")
        if states.shape[1] != next_states.shape[1]:
            raise DatasetError(
                f"state dim {states.shape[1]} != next_state dim {next_states.shape[1]}"
            )
        bad = np.flatnonzero(~np.isfinite(rewards))
        if bad.size:
            raise DatasetError("non-finite reward", int(bad[0]))
        bounds = self.trajectory_bounds
        if bounds is not None:
            bounds = np.asarray(bounds, dtype=np.int64).reshape(-1, 2)
            _check_bounds(bounds, n)
            _check_continuity(states, next_states, bounds)
        for name, value in (
            ("states", states),
            ("actions", actions),
            ("rewards", rewards),
            ("next_states", next_states),
            ("terminals", terminals),
            ("trajectory_bounds", bounds),
        ):
            if value is not None:
                value.flags.writeable = False
            object.__setattr__(self, name, value)

    def __len__(self):
        return int(self.rewards.shape[0])

    def __getitem__(self, i) -> Transition:
        return Transition(
            self.states[i], self.actions[i], float(self.rewards[i]),
            self.next_states[i], bool(self.terminals[i]),
        )

    @property
    def state_dim(self):
        return int(self.states.shape[1])

    @property
    def action_dim(self):
        return int(self.actions.shape[1])

    @property
    def has_trajectories(self):
        return self.trajectory_bounds is not None

    @classmethod
    def empty(cls, state_dim, action_dim):
        return cls(
            np.zeros((0, state_dim)), np.zeros((0, action_dim)), np.zeros(0),
            np.zeros((0, state_dim)), np.zeros(0, dtype=bool),
        )

    @classmethod
    def from_transitions(cls, transitions, trajectory_bounds=None):
        """Build from a sequence of :class:`Transition`, checking dims record by record."""
        transitions = list(transitions)
        if not transitions:
            raise DatasetError("no transitions given")
        first = transitions[0]
        ds = np.size(first.state)
        da = np.size(first.action)
        for i, t in enumerate(transitions):
            if np.size(t.state) != ds or np.size(t.next_state) != ds:
                raise DatasetError(
                    f"state dimension mismatch: expected {ds}, got "
                    f"{np.size(t.state)}/{np.size(t.next_state)}", i,
                )
            if np.size(t.action) != da:
                raise DatasetError(
                    f"action dimension mismatch: expected {da}, got {np.size(t.action)}", i
                )
        return cls(
            np.array([np.ravel(t.state) for t in transitions], dtype=np.float32).reshape(-1, ds),
            np.array([np.ravel(t.action) for t in transitions], dtype=np.float32).reshape(-1, da),
            np.array([t.reward for t in transitions], dtype=np.float32),
            np.array([np.ravel(t.next_state) for t in transitions], dtype=np.float32).reshape(-1, ds),
            np.array([t.terminal for t in transitions], dtype=bool),
            trajectory_bounds,
        )

    def trajectory_index(self):
        """Trajectory id of every transition."""
        if self.trajectory_bounds is None:
            raise DatasetError("dataset has no trajectory bounds")
        return np.repeat(
            np.arange(len(self.trajectory_bounds)), self.trajectory_bounds[:, 1]
        )

    def subset(self, indices):
        """Transitions at ``indices`` (in that order), without trajectory bounds."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.states[idx], self.actions[idx], self.rewards[idx],
            self.next_states[idx], self.terminals[idx],
        )


def _check_bounds(bounds, n):
    expected = 0
    for j, (start, length) in enumerate(bounds):
        if length < 1:
            raise DatasetError(f"non-partitioning bounds: trajectory {j} has length {length}", int(start))
        if start != expected:
            raise DatasetError(
                f"non-partitioning bounds: trajectory {j} starts at {start}, expected {expected}",
                int(min(start, expected)),
            )
        expected = start + length
    if expected != n:
        raise DatasetError(f"non-partitioning bounds: cover {expected} of {n} records", int(min(expected, n)))


def _check_continuity(states, next_states, bounds):
    inner = np.ones(len(states), dtype=bool)
    if len(states):
        inner[bounds[:, 0] + bounds[:, 1] - 1] = False
    idx = np.flatnonzero(inner)
    if idx.size:
        broken = np.any(next_states[idx] != states[idx + 1], axis=1)
        if broken.any():
            raise DatasetError("next_state does not match following state inside a trajectory",
                               int(idx[broken][0]))


def compute_trajectory_returns(d: Dataset) -> TrajectoryReturns:
    """Undiscounted return of each trajectory, broadcast back to its transitions."""
    tid = d.trajectory_index()
    returns = np.bincount(tid, weights=d.rewards.astype(np.float64), minlength=len(d.trajectory_bounds))
    return TrajectoryReturns(returns, returns[tid])


def mix_datasets(a: Dataset, b: Dataset) -> Dataset:
    """Concatenate ``a`` then ``b``; ``b``'s trajectory bounds are shifted by ``len(a)``."""
    if (a.state_dim, a.action_dim) != (b.state_dim, b.action_dim):
        raise DatasetError(
            f"dimensionality mismatch: ({a.state_dim}, {a.action_dim}) vs ({b.state_dim}, {b.action_dim})"
        )
    if len(a) == 0:
        return b
    if len(b) == 0:
        return a
    if a.has_trajectories != b.has_trajectories:
        raise DatasetError("inconsistent trajectory metadata")
    bounds = None
    if a.has_trajectories:
        shifted = b.trajectory_bounds.copy()
        shifted[:, 0] += len(a)
        bounds = np.concatenate([a.trajectory_bounds, shifted])
    return Dataset(
        np.concatenate([a.states, b.states]),
        np.concatenate([a.actions, b.actions]),
        np.concatenate([a.rewards, b.rewards]),
        np.concatenate([a.next_states, b.next_states]),
        np.concatenate([a.terminals, b.terminals]),
        bounds,
    )


def strip_trajectories(d: Dataset, keep_fraction: float, seed: int) -> Dataset:
    """Uniformly subsample transitions without replacement and drop trajectory info.

    The kept transitions stay in their original order.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    n_keep = int(round(keep_fraction * len(d)))
    if len(d):
        n_keep = max(n_keep, 1)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(d), size=n_keep, replace=False))
    return d.subset(idx)


# ---------------------------------------------------------------------------
# binary format
# ---------------------------------------------------------------------------

def _record_dtype(state_dim, action_dim):
    return np.dtype([
        ("state", "<f4", (state_dim,)),
        ("action", "<f4", (action_dim,)),
        ("reward", "<f4"),
        ("next_state", "<f4", (state_dim,)),
        ("terminal", "u1"),
    ])


def _records(d: Dataset):
    rec = np.empty(len(d), dtype=_record_dtype(d.state_dim, d.action_dim))
    rec["state"] = d.states
    rec["action"] = d.actions
    rec["reward"] = d.rewards
    rec["next_state"] = d.next_states
    rec["terminal"] = d.terminals
    return rec


def fnv1a_64(data: bytes, h: int = FNV_OFFSET) -> int:
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def content_hash(d: Dataset) -> int:
    """64-bit FNV-1a over the serialized transition block (integrity, not security)."""
    return fnv1a_64(_records(d).tobytes())


def save_dataset(d: Dataset, path) -> None:
    path = Path(path)
    with path.open("wb") as f:
        f.write(_HEADER.pack(DATASET_MAGIC, len(d), d.state_dim, d.action_dim, int(d.has_trajectories)))
        f.write(_records(d).tobytes())
        if d.has_trajectories:
            f.write(struct.pack("<Q", len(d.trajectory_bounds)))
            f.write(d.trajectory_bounds.astype("<u8").tobytes())


def _load_binary(raw: bytes) -> Dataset:
    if len(raw) < _HEADER.size:
        raise DatasetError("malformed header: file too short")
    magic, n, ds, da, has_bounds = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise DatasetError(f"malformed header: bad magic {magic!r}")
    if has_bounds not in (0, 1):
        raise DatasetError(f"malformed header: has_bounds flag {has_bounds}")
    dtype = _record_dtype(ds, da)
    offset = _HEADER.size
    body = n * dtype.itemsize
    if len(raw) < offset + body:
        complete = (len(raw) - offset) // max(dtype.itemsize, 1)
        raise DatasetError("truncated record block", int(complete))
    rec = np.frombuffer(raw, dtype=dtype, count=n, offset=offset)
    offset += body
    bounds = None
    if has_bounds:
        if len(raw) < offset + 8:
            raise DatasetError("truncated trajectory bounds")
        (m,) = struct.unpack_from("<Q", raw, offset)
        offset += 8
        if len(raw) < offset + 16 * m:
            raise DatasetError("truncated trajectory bounds")
        bounds = np.frombuffer(raw, dtype="<u8", count=2 * m, offset=offset).reshape(m, 2).astype(np.int64)
        offset += 16 * m
    if offset != len(raw):
        raise DatasetError(f"{len(raw) - offset} trailing bytes after dataset")
    return Dataset(
        rec["state"].reshape(n, ds).copy(),
        rec["action"].reshape(n, da).copy(),
        rec["reward"].copy(),
        rec["next_state"].reshape(n, ds).copy(),
        rec["terminal"].astype(bool),
        bounds,
    )


# ---------------------------------------------------------------------------
# CSV import
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("state", "action", "reward", "next_state", "terminal")


def _parse_vector(text, name, i):
    try:
        return [float(x) for x in text.split()]
    except ValueError:
        raise DatasetError(f"cannot parse {name} {text!r}", i) from None


def load_csv(path) -> Dataset:
    """Read a hand-written dataset.

    Header columns: ``state, action, reward, next_state, terminal`` and an
    optional ``trajectory`` id column.  Vector fields are whitespace-separated
    numbers; rows of one trajectory must be contiguous.
    """
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise DatasetError("malformed header: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in CSV_COLUMNS if c not in header]
        unknown = [h for h in header if h not in CSV_COLUMNS + ("trajectory",)]
        if missing or unknown:
            raise DatasetError(f"malformed header: missing {missing}, unknown {unknown}")
        col = {h: k for k, h in enumerate(header)}
        transitions, traj_ids = [], []
        for i, row in enumerate(reader):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(f"expected {len(header)} fields, got {len(row)}", i)
            term = row[col["terminal"]].strip().lower()
            if term not in ("0", "1", "true", "false"):
                raise DatasetError(f"bad terminal flag {term!r}", i)
            try:
                reward = float(row[col["reward"]])
            except ValueError:
                raise DatasetError(f"cannot parse reward {row[col['reward']]!r}", i) from None
            transitions.append(Transition(
                np.array(_parse_vector(row[col["state"]], "state", i)),
                np.array(_parse_vector(row[col["action"]], "action", i)),
                reward,
                np.array(_parse_vector(row[col["next_state"]], "next_state", i)),
                term in ("1", "true"),
            ))
            if "trajectory" in col:
                traj_ids.append(row[col["trajectory"]].strip())
    bounds = None
    if traj_ids:
        bounds, seen = [], set()
        for i, tid in enumerate(traj_ids):
            if i and tid == traj_ids[i - 1]:
                bounds[-1][1] += 1
                continue
            if tid in seen:
                raise DatasetError(f"non-partitioning bounds: trajectory {tid!r} is not contiguous", i)
            seen.add(tid)
            bounds.append([i, 1])
    return Dataset.from_transitions(transitions, bounds)


def save_csv(d: Dataset, path) -> None:
    tid = d.trajectory_index() if d.has_trajectories else None
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(list(CSV_COLUMNS) + (["trajectory"] if tid is not None else []))
        for i in range(len(d)):
            row = [
                " ".join(repr(float(x)) for x in d.states[i]),
                " ".join(repr(float(x)) for x in d.actions[i]),
                repr(float(d.rewards[i])),
                " ".join(repr(float(x)) for x in d.next_states[i]),
                int(d.terminals[i]),
            ]
            if tid is not None:
                row.append(int(tid[i]))
            w.writerow(row)


def load_dataset(path) -> Dataset:
    """Load an ``ODPRDS01`` binary file, or a CSV file by ``.csv`` suffix."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_csv(path)
    return _load_binary(path.read_bytes())
