"""Action-log ingestion and per-message cascade index.

An action log is a set of ``(user, message, time)`` tuples. Cascades group
the log by message, keep each user's earliest action only, and order the
participants by time (ties broken by ascending user id).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, NamedTuple

import numpy as np

HEADER = ("user", "message", "time")


class FormatError(ValueError):
    """Raised when an input file does not follow the expected layout."""


@dataclass(frozen=True, order=True)
class ActionRecord:
    user: str
    message: str
    time: int

    def __post_init__(self):
        if not self.user or not self.message:
            raise ValueError("user and message must be non-empty")
        if self.time < 0:
            raise ValueError(f"negative timestamp {self.time}")


class LoadResult(NamedTuple):
    records: list[ActionRecord]
    skipped: int


def _parse_time(text: str) -> int | None:
    text = text.strip()
    if not text or not (text.isdigit() and text.isascii()):
        return None
    return int(text)


def load_action_log(source: IO[str] | IO[bytes] | str) -> LoadResult:
    """Read an action-log CSV with header ``user,message,time``.

    Rows with a missing field, an empty id or a time that is not a
    non-negative base-10 integer are skipped and counted.

    Parameters
    ----------
    source : file-like or path
        Text or binary stream (UTF-8), or a filesystem path.

    Returns
    -------
    LoadResult
        ``(records, skipped)`` with records in input order.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return load_action_log(fh)
    if isinstance(source, io.BufferedIOBase) or "b" in getattr(source, "mode", ""):
        source = io.TextIOWrapper(source, encoding="utf-8", newline="")

    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("empty action log: missing header") from None
    if tuple(h.strip() for h in header) != HEADER:
        raise FormatError(f"expected header {','.join(HEADER)!r}, got {','.join(header)!r}")

    records: list[ActionRecord] = []
    skipped = 0
    for row in reader:
        if not row:
            continue
        if len(row) != 3:
            skipped += 1
            continue
        user, message, raw_time = (c.strip() for c in row)
        t = _parse_time(raw_time)
        if t is None or not user or not message:
            skipped += 1
            continue
        records.append(ActionRecord(user, message, t))
    return LoadResult(records, skipped)


def write_action_log(records: Iterable[ActionRecord], sink: IO[str]) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(HEADER)
    for r in records:
        writer.writerow((r.user, r.message, r.time))


@dataclass(frozen=True)
class Cascade:
    """Deduplicated, time-ordered participants of one message."""

    message: str
    actions: tuple[tuple[str, int], ...]

    def __post_init__(self):
        if not self.actions:
            raise ValueError(f"cascade {self.message!r} has no actions")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def users(self) -> tuple[str, ...]:
        return tuple(u for u, _ in self.actions)

    def time_of(self, user: str) -> int | None:
        for u, t in self.actions:
            if u == user:
                return t
        return None

    def n_after(self, t: int) -> int:
        """Number of participants acting strictly after time ``t``."""
        return sum(1 for _, s in self.actions if s > t)

    def restrict(self, start: int, end: int) -> "Cascade | None":
        kept = tuple(a for a in self.actions if start <= a[1] <= end)
        return Cascade(self.message, kept) if kept else None


def _make_cascades(records: Iterable[ActionRecord]) -> dict[str, Cascade]:
    earliest: dict[str, dict[str, int]] = {}
    for r in records:
        per_msg = earliest.setdefault(r.message, {})
        prev = per_msg.get(r.user)
        if prev is None or r.time < prev:
            per_msg[r.user] = r.time
    cascades = {}
    for msg in sorted(earliest):
        acts = sorted(earliest[msg].items(), key=lambda ut: (ut[1], ut[0]))
        cascades[msg] = Cascade(msg, tuple(acts))
    return cascades


@dataclass(frozen=True)
class CorpusIndex:
    """Immutable index of cascades with viral threshold ``theta`` and
    key-user fraction ``phi``.

    ``start``/``end`` record the time interval the index was restricted to
    (``None`` for the full log).
    """

    cascades: dict[str, Cascade]
    theta: int
    phi: float
    viral_set: frozenset[str] = field(init=False)
    start: int | None = None
    end: int | None = None

    def __post_init__(self):
        if not 0.0 < self.phi < 1.0:
            raise ValueError(f"phi must lie in (0, 1), got {self.phi}")
        if self.theta < 1:
            raise ValueError(f"theta must be >= 1, got {self.theta}")
        viral = frozenset(m for m, c in self.cascades.items() if len(c) >= self.theta)
        object.__setattr__(self, "viral_set", viral)

    def __len__(self) -> int:
        return len(self.cascades)

    @property
    def users(self) -> list[str]:
        seen = set()
        for c in self.cascades.values():
            seen.update(u for u, _ in c.actions)
        return sorted(seen)

    def is_viral(self, message: str) -> bool:
        return message in self.viral_set

    def is_key_user(self, user: str, message: str) -> bool:
        cascade = self.cascades.get(message)
        if cascade is None:
            return False
        t = cascade.time_of(user)
        if t is None:
            return False
        return cascade.n_after(t) >= self.phi * len(cascade)

    def restrict(self, start: int, end: int) -> "CorpusIndex":
        """Index over the actions with ``start <= time <= end`` only."""
        if start > end:
            raise ValueError(f"empty interval [{start}, {end}]")
        kept = {}
        for msg, c in self.cascades.items():
            r = c.restrict(start, end)
            if r is not None:
                kept[msg] = r
        return CorpusIndex(kept, self.theta, self.phi, start=start, end=end)

    def flatten(self) -> list[ActionRecord]:
        return [ActionRecord(u, m, t) for m, c in self.cascades.items() for u, t in c.actions]

    def time_span(self) -> tuple[int, int]:
        times = [t for c in self.cascades.values() for _, t in c.actions]
        if not times:
            raise ValueError("empty corpus has no time span")
        return min(times), max(times)

    def arrays(self) -> "CascadeArrays":
        return CascadeArrays.from_index(self)


def build_index(records: Iterable[ActionRecord], theta: int = 100, phi: float = 0.5) -> CorpusIndex:
    """Group records into deduplicated cascades and mark viral messages."""
    return CorpusIndex(_make_cascades(records), int(theta), float(phi))


@dataclass(frozen=True)
class CascadeArrays:
    """Flat integer encoding of a :class:`CorpusIndex`.

    Cascade ``c`` occupies ``offsets[c]:offsets[c + 1]`` of ``uid``/``times``,
    ordered as in the cascade. ``users[k]`` is the string id of code ``k``;
    codes follow ascending user id.
    """

    users: list[str]
    messages: list[str]
    offsets: np.ndarray
    uid: np.ndarray
    times: np.ndarray
    viral: np.ndarray
    key: np.ndarray

    @classmethod
    def from_index(cls, index: CorpusIndex) -> "CascadeArrays":
        users = index.users
        code = {u: k for k, u in enumerate(users)}
        messages = sorted(index.cascades)
        sizes = [len(index.cascades[m]) for m in messages]
        offsets = np.zeros(len(messages) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        n = int(offsets[-1])
        uid = np.empty(n, dtype=np.int64)
        times = np.empty(n, dtype=np.int64)
        key = np.zeros(n, dtype=bool)
        pos = 0
        for m in messages:
            acts = index.cascades[m].actions
            s = len(acts)
            ts = np.fromiter((t for _, t in acts), dtype=np.int64, count=s)
            uid[pos:pos + s] = [code[u] for u, _ in acts]
            times[pos:pos + s] = ts
            # participants strictly after each position; ts is sorted
            n_after = s - np.searchsorted(ts, ts, side="right")
            key[pos:pos + s] = n_after >= index.phi * s
            pos += s
        viral = np.array([m in index.viral_set for m in messages], dtype=bool)
        return cls(users, messages, offsets, uid, times, viral, key)

    @property
    def n_users(self) -> int:
        return len(self.users)

    def cascade_ids(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.messages)), np.diff(self.offsets))

    def iter_cascades(self) -> Iterator[slice]:
        for a, b in zip(self.offsets[:-1], self.offsets[1:]):
            yield slice(int(a), int(b))
