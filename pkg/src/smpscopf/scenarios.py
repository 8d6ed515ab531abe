"""RES scenario profiles and load multipliers."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid import ResPlant


class ScenarioError(ValueError):
    pass


class ScenarioRangeError(ScenarioError):
    def __init__(self, scenario: int, period: int, value: float):
        self.scenario, self.period, self.value = scenario, period, value
        super().__init__(
            f"profile value {value} outside [0, 1] at scenario {scenario + 1}, "
            f"period {period + 1}"
        )


class ScenarioShapeError(ScenarioError):
    pass


@dataclass(frozen=True)
class ScenarioSet:
    """Normalized RES output, shape ``(S, T)``, with scenario probabilities."""

    profiles: np.ndarray
    probabilities: np.ndarray
    dt: float = 1.0
    names: tuple[str, ...] = ()

    def __post_init__(self):
        p = np.asarray(self.profiles, dtype=float)
        if p.ndim != 2 or p.shape[0] == 0 or p.shape[1] == 0:
            raise ScenarioShapeError(f"profiles must be a non-empty (S, T) table, got {p.shape}")
        bad = np.argwhere((p < 0) | (p > 1) | ~np.isfinite(p))
        if len(bad):
            s, t = bad[0]
            raise ScenarioRangeError(int(s), int(t), float(p[s, t]))
        pi = np.asarray(self.probabilities, dtype=float)
        if pi.shape != (p.shape[0],):
            raise ScenarioShapeError("one probability per scenario required")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise ScenarioError("probabilities must be nonnegative and sum to 1")
        if not self.dt > 0:
            raise ScenarioError("dt must be positive")
        names = self.names or tuple(f"s{i + 1}" for i in range(p.shape[0]))
        if len(names) != p.shape[0]:
            raise ScenarioShapeError("one name per scenario required")
        p.setflags(write=False)
        pi.setflags(write=False)
        object.__setattr__(self, "profiles", p)
        object.__setattr__(self, "probabilities", pi)
        object.__setattr__(self, "names", tuple(names))

    @property
    def n_scenarios(self) -> int:
        return self.profiles.shape[0]

    @property
    def n_periods(self) -> int:
        return self.profiles.shape[1]

    def subset(self, periods: int) -> "ScenarioSet":
        """First ``periods`` periods of every scenario."""
        return ScenarioSet(self.profiles[:, :periods], self.probabilities, self.dt, self.names)

    def first(self, count: int) -> "ScenarioSet":
        """First ``count`` scenarios, renormalized to equal probability."""
        return ScenarioSet(
            self.profiles[:count], np.full(count, 1.0 / count), self.dt, self.names[:count]
        )


@dataclass(frozen=True)
class LoadProfileSet:
    """Per-bus multipliers on nominal demand, shape ``(N, T)``."""

    multipliers: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.multipliers, dtype=float)
        if m.ndim != 2:
            raise ScenarioShapeError("load multipliers must be an (N, T) table")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ScenarioError("load multipliers must be finite and >= 0")
        m.setflags(write=False)
        object.__setattr__(self, "multipliers", m)

    @classmethod
    def constant(cls, n_bus: int, n_periods: int) -> "LoadProfileSet":
        return cls(np.ones((n_bus, n_periods)))


def load_scenarios(text: str, T: int, dt: float = 1.0) -> ScenarioSet:
    """Read a delimited profile table.

    Layout: a header row (``t,s1,s2,...``), then one row per period with the
    period index in the first column. Rows beyond ``T`` are read as further
    blocks of ``T`` periods whose columns become additional scenarios. A row
    whose first cell is ``probabilities`` overrides equiprobability.
    """
    try:
        dialect = csv.Sniffer().sniff(text.splitlines()[0], delimiters=",;\t ")
    except (csv.Error, IndexError):
        dialect = csv.excel
    rows = [r for r in csv.reader(io.StringIO(text), dialect) if any(c.strip() for c in r)]
    rows = [[c.strip() for c in r if c.strip() != ""] for r in rows]
    if not rows:
        raise ScenarioShapeError("empty profile document")

    header: Optional[list[str]] = None
    if not _is_number(rows[0][0]) and rows[0][0].lower() != "probabilities":
        header, rows = rows[0], rows[1:]

    probs = None
    data = []
    for r in rows:
        if r[0].lower() == "probabilities":
            probs = [float(v) for v in r[1:]]
        else:
            data.append(r)
    if not data:
        raise ScenarioShapeError("no profile rows")
    width = len(data[0])
    if width < 2 or any(len(r) != width for r in data):
        raise ScenarioShapeError("every row needs a period index and one value per scenario")
    if len(data) % T:
        raise ScenarioShapeError(f"{len(data)} profile rows is not a multiple of T={T}")

    table = np.array([[float(v) for v in r[1:]] for r in data])
    blocks = len(data) // T
    profiles = np.concatenate([table[j * T:(j + 1) * T].T for j in range(blocks)], axis=0)
    bad = np.argwhere((profiles < 0) | (profiles > 1))
    if len(bad):
        s, t = bad[0]
        raise ScenarioRangeError(int(s), int(t), float(profiles[s, t]))

    S = profiles.shape[0]
    if probs is None:
        pi = np.full(S, 1.0 / S)
    else:
        if len(probs) != S:
            raise ScenarioShapeError(f"{len(probs)} probabilities for {S} scenarios")
        pi = np.asarray(probs)
    names = ()
    if header is not None and blocks == 1 and len(header) == width:
        names = tuple(header[1:])
    return ScenarioSet(profiles, pi, dt, names)


def read_scenarios(path, T: int = 24, dt: float = 1.0) -> ScenarioSet:
    with open(path, encoding="utf-8") as fh:
        return load_scenarios(fh.read(), T, dt)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def res_injection(sset: ScenarioSet, plant: ResPlant, s: int, t: int) -> float:
    """Available RES power of ``plant`` in MW."""
    return plant.capacity * float(sset.profiles[s, t])


def replicate_scenarios(sset: ScenarioSet, count: int) -> ScenarioSet:
    """Cycle the original profiles to ``count`` equiprobable scenarios."""
    if count < 1:
        raise ValueError("count must be >= 1")
    idx = np.arange(count) % sset.n_scenarios
    names = tuple(
        sset.names[i] if j < sset.n_scenarios else f"{sset.names[i]}#{j // sset.n_scenarios + 1}"
        for j, i in enumerate(idx)
    )
    return ScenarioSet(sset.profiles[idx], np.full(count, 1.0 / count), sset.dt, names)
