"""Action spaces, outcomes and utilities of the attacker/defender investment game.

Investment levels live on the grid ``{0, 1/(L-1), ..., 1}`` and are stored as
integer numerators, so the budget test ``gamma * ||v||_1 <= 1`` is evaluated the
same way everywhere. Outcome ``i`` is the bit mask ``i``: bit ``k`` set means the
attack on the ``k``-th targeted load succeeded.

The scalar functions here (``outcome_probability``, ``per_outcome_utility``,
``expected_attacker_utility``) evaluate one outcome at a time. The solver uses
vectorized equivalents defined at the bottom of this module.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .stability import StabilityModel, instability_index

ATTACKER = "attacker"
DEFENDER = "defender"
BUDGET_TOL = 1e-12
ACTION_CAP = 10**7


class ActionSpaceTooLarge(RuntimeError):
    def __init__(self, owner: str, count: int, cap: int):
        self.owner, self.count, self.cap = owner, count, cap
        super().__init__(
            f"{owner} action space has {count} feasible actions, above the cap of {cap}; "
            "reduce the number of targeted loads (e.g. --subset N) or the level count"
        )


@dataclass(frozen=True)
class ActionVector:
    numerators: tuple[int, ...]
    denominator: int
    owner: str

    def __post_init__(self) -> None:
        if self.denominator < 1:
            raise ValueError("denominator must be at least 1")
        if any(n < 0 or n > self.denominator for n in self.numerators):
            raise ValueError(f"levels {self.numerators} off the grid 0..{self.denominator}")

    @property
    def levels(self) -> np.ndarray:
        return np.asarray(self.numerators, dtype=float) / self.denominator

    @property
    def l1(self) -> float:
        return sum(self.numerators) / self.denominator

    def cost(self, gamma: float) -> float:
        return gamma * self.l1

    def feasible(self, gamma: float) -> bool:
        return _affordable(gamma, sum(self.numerators), self.denominator)

    def label(self) -> str:
        return "/".join(str(n) for n in self.numerators)

    @classmethod
    def zeros(cls, k: int, levels: int, owner: str) -> "ActionVector":
        return cls((0,) * k, levels - 1, owner)

    @classmethod
    def ones(cls, k: int, levels: int, owner: str) -> "ActionVector":
        return cls((levels - 1,) * k, levels - 1, owner)


def _affordable(gamma: float, num_sum: int, denominator: int) -> bool:
    return gamma * num_sum / denominator <= 1.0 + BUDGET_TOL


def max_numerator_sum(gamma: float, k: int, levels: int) -> int:
    """Largest affordable sum of level numerators."""
    den = levels - 1
    best = -1
    for s in range(k * den + 1):
        if _affordable(gamma, s, den):
            best = s
    return best


@dataclass(frozen=True)
class GameSpec:
    """One instance of the investment game over a subset of the model's loads.

    ``load_subset`` holds positions into ``model.q_nominal``; ``qa_max`` and
    ``qd_max`` are aligned with it.
    """

    model: StabilityModel
    load_subset: tuple[int, ...]
    gamma_a: float
    gamma_d: float
    levels_a: int
    levels_d: int
    qa_max: np.ndarray
    qd_max: np.ndarray
    tol: float = 1e-9

    def __post_init__(self) -> None:
        object.__setattr__(self, "load_subset", tuple(int(i) for i in self.load_subset))
        object.__setattr__(self, "qa_max", np.asarray(self.qa_max, dtype=float).copy())
        object.__setattr__(self, "qd_max", np.asarray(self.qd_max, dtype=float).copy())
        k = len(self.load_subset)
        if not (self.gamma_a > 0 and self.gamma_d > 0):
            raise ValueError("costs per load must be positive")
        if self.levels_a < 2 or self.levels_d < 2:
            raise ValueError("level counts must be at least 2")
        if len(set(self.load_subset)) != k or k == 0:
            raise ValueError(f"load subset must be non-empty and distinct: {self.load_subset}")
        if any(i < 0 or i >= self.model.k for i in self.load_subset):
            raise ValueError(f"load subset {self.load_subset} out of range 0..{self.model.k - 1}")
        if self.qa_max.shape != (k,) or self.qd_max.shape != (k,):
            raise ValueError("qa_max and qd_max must have one entry per targeted load")
        if np.any(self.qa_max < 0) or np.any(self.qd_max < 0):
            raise ValueError("qa_max and qd_max must be non-negative")

    @property
    def k_loads(self) -> int:
        return len(self.load_subset)

    @property
    def delta0(self) -> float:
        return self.model.delta0

    @property
    def target_ids(self) -> list[int]:
        return [self.model.load_ids[i] for i in self.load_subset]

    def levels(self, owner: str) -> int:
        return self.levels_a if owner == ATTACKER else self.levels_d

    def gamma(self, owner: str) -> float:
        return self.gamma_a if owner == ATTACKER else self.gamma_d

    def with_costs(self, gamma_a: float, gamma_d: float, **kw) -> "GameSpec":
        return dataclasses.replace(self, gamma_a=gamma_a, gamma_d=gamma_d, **kw)


# --- action spaces ------------------------------------------------------------


def count_feasible(k: int, levels: int, gamma: float) -> int:
    """Number of grid vectors in ``{0..L-1}^k`` with affordable numerator sum."""
    smax = max_numerator_sum(gamma, k, levels)
    ways = np.zeros(smax + 1, dtype=object)
    ways[0] = 1
    for _ in range(k):
        nxt = np.zeros_like(ways)
        for v in range(levels):
            nxt[v:] += ways[: smax + 1 - v]
        ways = nxt
    return int(sum(ways))


def action_numerators(k: int, levels: int, gamma: float, cap: int = ACTION_CAP, owner: str = "") -> np.ndarray:
    """Affordable numerator vectors as an ``(n, k)`` int array in lexicographic order."""
    count = count_feasible(k, levels, gamma)
    if count > cap:
        raise ActionSpaceTooLarge(owner or "player", count, cap)
    smax = max_numerator_sum(gamma, k, levels)
    rows = np.zeros((1, 0), dtype=np.int64)
    vals = np.arange(levels, dtype=np.int64)
    for _ in range(k):
        n = rows.shape[0]
        rows = np.hstack([np.repeat(rows, levels, axis=0), np.tile(vals, n)[:, None]])
        rows = rows[rows.sum(axis=1) <= smax]
    return rows


def enumerate_feasible_actions(
    spec: GameSpec, owner: str, cap: int = ACTION_CAP
) -> list[ActionVector]:
    """All affordable actions of ``owner`` in ascending lexicographic order."""
    levels = spec.levels(owner)
    rows = action_numerators(spec.k_loads, levels, spec.gamma(owner), cap, owner)
    return [ActionVector(tuple(int(x) for x in r), levels - 1, owner) for r in rows]


# --- outcomes and utilities (scalar path) ------------------------------------


def outcome_bits(mask: int, k: int) -> np.ndarray:
    return np.array([(mask >> j) & 1 for j in range(k)], dtype=np.int64)


def outcome_probability(a: ActionVector, mask: int) -> float:
    p = 1.0
    for j, ak in enumerate(a.levels):
        p *= ak if (mask >> j) & 1 else 1.0 - ak
    return p


def outcome_demand(mask: int, qa_max: Sequence[float]) -> np.ndarray:
    qa = np.asarray(qa_max, dtype=float)
    return outcome_bits(mask, len(qa)) * qa


def defender_compensation(d: ActionVector, qd_max: Sequence[float]) -> np.ndarray:
    return d.levels * np.asarray(qd_max, dtype=float)


def clip_utility(delta: float, delta0: float) -> float:
    return min(max(delta, delta0), 1.0) - delta0


def outcome_loads(spec: GameSpec, mask: int, d: ActionVector) -> np.ndarray:
    """Full reactive demand vector of outcome ``mask`` under defense ``d``."""
    q = spec.model.q_nominal.copy()
    idx = list(spec.load_subset)
    q[idx] += outcome_demand(mask, spec.qa_max) - defender_compensation(d, spec.qd_max)
    return q


@dataclass(frozen=True)
class UtilityTable:
    per_outcome: np.ndarray
    defender_action: ActionVector


def per_outcome_utility(spec: GameSpec, d: ActionVector) -> UtilityTable:
    m = spec.model
    vals = np.empty(2**spec.k_loads)
    for mask in range(len(vals)):
        delta, _ = instability_index(m.q_crit_inv, outcome_loads(spec, mask, d), absolute=m.absolute)
        vals[mask] = clip_utility(delta, m.delta0)
    return UtilityTable(vals, d)


def expected_attacker_utility(spec: GameSpec, a: ActionVector, table: UtilityTable) -> float:
    return float(sum(outcome_probability(a, i) * u for i, u in enumerate(table.per_outcome)))


def expected_defender_utility(spec: GameSpec, a: ActionVector, table: UtilityTable) -> float:
    return -expected_attacker_utility(spec, a, table)


# --- vectorized path ----------------------------------------------------------


def outcome_masks(k: int) -> np.ndarray:
    """``(2^k, k)`` 0/1 matrix; row ``i`` holds the bits of mask ``i``."""
    i = np.arange(2**k)[:, None]
    return ((i >> np.arange(k)[None, :]) & 1).astype(float)


def outcome_probabilities(levels: np.ndarray, masks: np.ndarray | None = None) -> np.ndarray:
    """``(n, 2^k)`` outcome probabilities for ``n`` attacker level vectors."""
    levels = np.atleast_2d(np.asarray(levels, dtype=float))
    k = levels.shape[1]
    if masks is None:
        masks = outcome_masks(k)
    p = np.ones((levels.shape[0], masks.shape[0]))
    for j in range(k):
        aj = levels[:, j : j + 1]
        p *= np.where(masks[None, :, j] == 1, aj, 1.0 - aj)
    return p


class UtilityKernel:
    """Computes per-outcome utility tables for many defender actions at once.

    The stress ``-Q_crit^-1 Q`` is linear in ``Q``, so the stress of every
    (outcome, defense) pair is a sum of three precomputed terms.
    """

    def __init__(self, spec: GameSpec):
        m = spec.model
        idx = list(spec.load_subset)
        neg = -m.q_crit_inv
        self.absolute = m.absolute
        self.delta0 = m.delta0
        self.base = neg @ m.q_nominal
        self.attack = outcome_masks(spec.k_loads) @ (neg[:, idx] * spec.qa_max).T
        self.defense_cols = (neg[:, idx] * spec.qd_max).T
        self.den_d = spec.levels_d - 1

    def tables(self, d_numerators: np.ndarray) -> np.ndarray:
        """``(n_d, 2^k)`` clipped utilities for the given defender numerators."""
        dl = np.asarray(d_numerators, dtype=float) / self.den_d
        sd = dl @ self.defense_cols
        s = self.base[None, None, :] + self.attack[None, :, :] - sd[:, None, :]
        if self.absolute:
            s = np.abs(s)
        delta = s.max(axis=2)
        return np.clip(delta, self.delta0, 1.0) - self.delta0

    def full_attack_delta(self, d_numerators: Sequence[int]) -> float:
        dl = np.asarray(d_numerators, dtype=float) / self.den_d
        s = self.base + self.attack[-1] - dl @ self.defense_cols
        return float((np.abs(s) if self.absolute else s).max())
