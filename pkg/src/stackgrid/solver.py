"""Cost-based backward induction, the brute-force equilibrium oracle and sweeps.

The leader (defender) commits to ``d``; the follower (attacker) best-responds.
Among payoff-equal choices each player takes the cheapest action, with
lexicographic order on level numerators as the final tie-break. For the
defender, ties in its own cost are broken by the cost of the attacker response
it induces.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .game import (
    ACTION_CAP,
    ATTACKER,
    DEFENDER,
    ActionSpaceTooLarge,
    ActionVector,
    GameSpec,
    UtilityKernel,
    action_numerators,
    enumerate_feasible_actions,
    expected_attacker_utility,
    outcome_probabilities,
    per_outcome_utility,
)
from .stability import StabilityModel

log = logging.getLogger(__name__)

ORACLE_CAP = 10**5
CHUNK_ELEMENTS = 2_000_000
FORMAT_VERSION = 1


class OracleTooLarge(RuntimeError):
    def __init__(self, pairs: int, cap: int):
        self.pairs, self.cap = pairs, cap
        super().__init__(f"oracle instance has {pairs} strategy pairs, above the cap of {cap}")


@dataclass(frozen=True)
class BestResponseSet:
    defender_action: ActionVector
    responses: list[ActionVector]
    best_value: float


@dataclass(frozen=True)
class Equilibrium:
    attacker_action: ActionVector
    defender_action: ActionVector
    attacker_utility: float
    post_attack_delta_max: float
    attacker_cost: float
    defender_cost: float
    defender_candidates: int

    @property
    def defender_utility(self) -> float:
        return 0.0 - self.attacker_utility


def _cost_key(num: Sequence[int]) -> tuple:
    return (sum(num), tuple(num))


def min_cost_best_response(brs: BestResponseSet) -> ActionVector:
    """Cheapest best response; equal costs resolved lexicographically."""
    if not brs.responses:
        raise ValueError("empty best-response set")
    return min(brs.responses, key=lambda a: _cost_key(a.numerators))


def best_response_set(spec: GameSpec, d: ActionVector, cap: int = ACTION_CAP) -> BestResponseSet:
    acts = action_numerators(spec.k_loads, spec.levels_a, spec.gamma_a, cap, ATTACKER)
    table = UtilityKernel(spec).tables(np.asarray([d.numerators]))[0]
    vals = outcome_probabilities(acts / (spec.levels_a - 1)) @ table
    best = float(vals.max())
    hit = np.flatnonzero(vals >= best - spec.tol)
    den = spec.levels_a - 1
    responses = [ActionVector(tuple(int(x) for x in acts[i]), den, ATTACKER) for i in hit]
    return BestResponseSet(d, responses, best)


# --- vectorized backward induction -------------------------------------------


@dataclass
class _Reduced:
    best: np.ndarray  # max attacker utility against each defender action
    resp: np.ndarray  # index of g_o(d) into the cost-sorted attacker actions


def _reduce_columns(kernel: UtilityKernel, p_sorted: np.ndarray, d_rows: np.ndarray, tol: float) -> _Reduced:
    n_a, n_o = p_sorted.shape
    step = max(1, CHUNK_ELEMENTS // max(1, n_a + n_o * kernel.base.size))
    best = np.empty(len(d_rows))
    resp = np.empty(len(d_rows), dtype=np.int64)
    for lo in range(0, len(d_rows), step):
        u = kernel.tables(d_rows[lo : lo + step])
        m = p_sorted @ u.T
        b = m.max(axis=0)
        best[lo : lo + step] = b
        resp[lo : lo + step] = np.argmax(m >= b[None, :] - tol, axis=0)
    return _Reduced(best, resp)


def _reduce_worker(args):
    spec, p_sorted, d_rows = args
    return _reduce_columns(UtilityKernel(spec), p_sorted, d_rows, spec.tol)


def _sorted_attacks(spec: GameSpec, cap: int) -> tuple[np.ndarray, np.ndarray]:
    a_rows = action_numerators(spec.k_loads, spec.levels_a, spec.gamma_a, cap, ATTACKER)
    order = np.argsort(a_rows.sum(axis=1), kind="stable")
    a_rows = a_rows[order]
    return a_rows, outcome_probabilities(a_rows / (spec.levels_a - 1))


def _select(spec, a_rows, d_rows, red: _Reduced, kernel: UtilityKernel) -> Equilibrium:
    tol = spec.tol
    lowest = red.best.min()
    cands = np.flatnonzero(red.best <= lowest + tol)
    a_cost = a_rows.sum(axis=1)
    d_cost = d_rows.sum(axis=1)
    j = min(cands, key=lambda c: (d_cost[c], a_cost[red.resp[c]], c))
    a = ActionVector(tuple(int(x) for x in a_rows[red.resp[j]]), spec.levels_a - 1, ATTACKER)
    d = ActionVector(tuple(int(x) for x in d_rows[j]), spec.levels_d - 1, DEFENDER)
    return Equilibrium(
        attacker_action=a,
        defender_action=d,
        attacker_utility=float(red.best[j]),
        post_attack_delta_max=kernel.full_attack_delta(d.numerators),
        attacker_cost=a.cost(spec.gamma_a),
        defender_cost=d.cost(spec.gamma_d),
        defender_candidates=int(len(cands)),
    )


def solve_cbse(spec: GameSpec, jobs: int = 1, cap: int = ACTION_CAP) -> Equilibrium:
    """Cost-based Stackelberg equilibrium by exhaustive backward induction."""
    a_rows, p_sorted = _sorted_attacks(spec, cap)
    d_rows = action_numerators(spec.k_loads, spec.levels_d, spec.gamma_d, cap, DEFENDER)
    kernel = UtilityKernel(spec)
    if jobs > 1 and len(d_rows) >= 2 * jobs:
        parts = np.array_split(d_rows, jobs)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_reduce_worker, [(spec, p_sorted, part) for part in parts]))
        red = _Reduced(np.concatenate([o.best for o in outs]), np.concatenate([o.resp for o in outs]))
    else:
        red = _reduce_columns(kernel, p_sorted, d_rows, spec.tol)
    return _select(spec, a_rows, d_rows, red, kernel)


# --- brute-force oracle -------------------------------------------------------


def payoff_matrix(spec: GameSpec, cap: int = ORACLE_CAP):
    """Attacker payoffs via the scalar path: ``(attacks, defenses, M[a, d])``."""
    attacks = enumerate_feasible_actions(spec, ATTACKER)
    defenses = enumerate_feasible_actions(spec, DEFENDER)
    pairs = len(attacks) * len(defenses)
    if pairs > cap:
        raise OracleTooLarge(pairs, cap)
    m = np.empty((len(attacks), len(defenses)))
    for j, d in enumerate(defenses):
        table = per_outcome_utility(spec, d)
        for i, a in enumerate(attacks):
            m[i, j] = expected_attacker_utility(spec, a, table)
    return attacks, defenses, m


def enumerate_all_ses(spec: GameSpec, cap: int = ORACLE_CAP) -> list[tuple[ActionVector, ActionVector, float]]:
    """Every pair ``(g(d), d)`` with ``d`` an optimal leader action, no cost filtering."""
    attacks, defenses, m = payoff_matrix(spec, cap)
    tol = spec.tol
    best = m.max(axis=0)
    leaders = np.flatnonzero(best <= best.min() + tol)
    out = []
    for j in leaders:
        for i in np.flatnonzero(m[:, j] >= best[j] - tol):
            out.append((attacks[i], defenses[j], float(m[i, j])))
    return out


def cbse_from_ses(ses: list[tuple[ActionVector, ActionVector, float]]):
    """The pair the cost-based rules pick out of an SE list (oracle side)."""
    by_d: dict[ActionVector, list] = {}
    for a, d, v in ses:
        by_d.setdefault(d, []).append((a, v))
    picks = []
    for d, rows in by_d.items():
        a, v = min(rows, key=lambda r: _cost_key(r[0].numerators))
        picks.append((a, d, v))
    return min(picks, key=lambda r: (sum(r[1].numerators), sum(r[0].numerators), r[1].numerators))


@dataclass
class OracleReport:
    ok: bool
    pairs: int
    n_equilibria: int
    payoff: float
    cbse_payoff: float
    messages: list[str] = field(default_factory=list)


def check_against_oracle(spec: GameSpec, eq: Equilibrium | None = None, cap: int = ORACLE_CAP) -> OracleReport:
    """Compare an equilibrium with the brute-force SE set; ``eq`` defaults to ``solve_cbse``."""
    ses = enumerate_all_ses(spec, cap)
    if eq is None:
        eq = solve_cbse(spec)
    tol = spec.tol
    values = [v for _, _, v in ses]
    msgs = []
    spread = max(values) - min(values)
    if spread > tol:
        msgs.append(f"equilibrium payoffs differ by {spread:.3g}")
    if abs(eq.attacker_utility - values[0]) > tol:
        msgs.append(f"CBSE payoff {eq.attacker_utility!r} differs from SE payoff {values[0]!r}")
    pair = (eq.attacker_action.numerators, eq.defender_action.numerators)
    members = {(a.numerators, d.numerators) for a, d, _ in ses}
    if pair not in members:
        msgs.append(f"CBSE pair a={pair[0]} d={pair[1]} is not an equilibrium")
    a_o, d_o, _ = cbse_from_ses(ses)
    if (a_o.numerators, d_o.numerators) != pair:
        msgs.append(
            f"CBSE pair a={pair[0]} d={pair[1]} is not the cheapest; expected a={a_o.numerators} d={d_o.numerators}"
        )
    n_a = len(enumerate_feasible_actions(spec, ATTACKER))
    n_d = len(enumerate_feasible_actions(spec, DEFENDER))
    return OracleReport(not msgs, n_a * n_d, len(ses), values[0], eq.attacker_utility, msgs)


# --- importance ranking and subsets -------------------------------------------


@dataclass(frozen=True)
class ImportanceRanking:
    load_ids: tuple[int, ...]
    attacker_scores: np.ndarray
    defender_scores: np.ndarray
    attacker_order: tuple[int, ...]
    defender_order: tuple[int, ...]

    def rank_of(self, load_id: int, owner: str) -> int:
        order = self.attacker_order if owner == ATTACKER else self.defender_order
        return order.index(load_id) + 1


def _order(ids, scores) -> tuple[int, ...]:
    return tuple(i for _, i in sorted(zip((-s for s in scores), ids)))


def importance_ranking(
    model: StabilityModel,
    qa_max: Sequence[float],
    qd_probe: float = 0.8,
    defender_mode: str = "probe",
) -> ImportanceRanking:
    """Score each load by a single-load perturbation of the nominal demand.

    Attacker score: index increase when load ``k`` rises by its covert limit.
    Defender score with ``defender_mode='probe'``: index increase when load ``k``
    rises by ``qd_probe``, i.e. how sensitive the index is to that load. With
    ``defender_mode='relief'`` it is the index decrease when load ``k`` is
    compensated by ``qd_probe``.
    """
    if qd_probe <= 0:
        raise ValueError("qd_probe must be positive")
    if defender_mode not in ("probe", "relief"):
        raise ValueError(f"unknown defender_mode {defender_mode!r}")
    q0 = model.q_nominal
    qa = np.asarray(qa_max, dtype=float)
    k = model.k
    att = np.empty(k)
    dfd = np.empty(k)
    for j in range(k):
        e = np.zeros(k)
        e[j] = 1.0
        att[j] = model.index(q0 + qa[j] * e) - model.delta0
        if defender_mode == "probe":
            dfd[j] = model.index(q0 + qd_probe * e) - model.delta0
        else:
            dfd[j] = model.delta0 - model.index(q0 - qd_probe * e)
    ids = model.load_ids
    return ImportanceRanking(tuple(ids), att, dfd, _order(ids, att), _order(ids, dfd))


def select_subset(ranking: ImportanceRanking, n_per_player: int) -> list[int]:
    """Union of both players' top-``n`` load ids, ascending."""
    if n_per_player > len(ranking.load_ids):
        raise ValueError("n_per_player exceeds the number of loads")
    top = set(ranking.attacker_order[:n_per_player]) | set(ranking.defender_order[:n_per_player])
    return sorted(top)


# --- individual optimization baseline ----------------------------------------


def individual_optimization_baseline(spec: GameSpec, cap: int = ACTION_CAP):
    """Each player optimizes against a fixed guess of the opponent.

    The attacker assumes no defense; the defender assumes every targeted load
    is attacked at full level. Returns ``(a, d, realized attacker utility)``.
    """
    kernel = UtilityKernel(spec)
    k = spec.k_loads
    a_rows, p_sorted = _sorted_attacks(spec, cap)
    zero_d = np.zeros((1, k), dtype=np.int64)
    u0 = kernel.tables(zero_d)[0]
    vals = p_sorted @ u0
    ia = int(np.argmax(vals >= vals.max() - spec.tol))
    a = ActionVector(tuple(int(x) for x in a_rows[ia]), spec.levels_a - 1, ATTACKER)

    d_rows = action_numerators(k, spec.levels_d, spec.gamma_d, cap, DEFENDER)
    full = kernel.tables(d_rows)[:, -1]
    ok = np.flatnonzero(full <= full.min() + spec.tol)
    jd = min(ok, key=lambda j: (d_rows[j].sum(), j))
    d = ActionVector(tuple(int(x) for x in d_rows[jd]), spec.levels_d - 1, DEFENDER)
    realized = float(p_sorted[ia] @ kernel.tables(d_rows[jd : jd + 1])[0])
    return a, d, realized


# --- sweeps -------------------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    gamma_a: float
    gamma_d: float
    levels_a: int
    levels_d: int
    equilibrium: Equilibrium | None
    error: str = ""


@dataclass
class SweepResult:
    cells: list[SweepCell]
    metadata: dict = field(default_factory=dict)

    @property
    def grid(self) -> list[tuple[float, float, int, int]]:
        return [(c.gamma_a, c.gamma_d, c.levels_a, c.levels_d) for c in self.cells]

    def surface(self, levels_a: int | None = None, levels_d: int | None = None):
        """``(gamma_a values, gamma_d values, U[i_a, i_d])`` for one level pair."""
        cells = [
            c
            for c in self.cells
            if (levels_a is None or c.levels_a == levels_a) and (levels_d is None or c.levels_d == levels_d)
        ]
        ga = sorted({c.gamma_a for c in cells})
        gd = sorted({c.gamma_d for c in cells})
        u = np.full((len(ga), len(gd)), np.nan)
        for c in cells:
            if c.equilibrium is not None:
                u[ga.index(c.gamma_a), gd.index(c.gamma_d)] = c.equilibrium.attacker_utility
        return ga, gd, u

    def to_csv(self) -> str:
        return sweep_to_csv(self)

    def to_json(self) -> str:
        return sweep_to_json(self)


def _cell(args) -> SweepCell:
    spec, cap = args
    try:
        eq = solve_cbse(spec, cap=cap)
        return SweepCell(spec.gamma_a, spec.gamma_d, spec.levels_a, spec.levels_d, eq)
    except ActionSpaceTooLarge as exc:
        return SweepCell(spec.gamma_a, spec.gamma_d, spec.levels_a, spec.levels_d, None, str(exc))


def cost_sweep(
    template: GameSpec,
    gamma_a_grid: Sequence[float],
    gamma_d_grid: Sequence[float],
    levels_a_grid: Sequence[int] | None = None,
    levels_d_grid: Sequence[int] | None = None,
    jobs: int = 1,
    cap: int = ACTION_CAP,
    metadata: dict | None = None,
) -> SweepResult:
    """Solve the game on every grid cell, row-major by gamma_a then gamma_d."""
    if not gamma_a_grid or not gamma_d_grid:
        raise ValueError("cost grids must be non-empty")
    if min(gamma_a_grid) <= 0 or min(gamma_d_grid) <= 0:
        raise ValueError("cost grids must be positive")
    la = list(levels_a_grid or [template.levels_a])
    ld = list(levels_d_grid or [template.levels_d])
    specs = [
        template.with_costs(float(ga), float(gd), levels_a=a, levels_d=d)
        for a in la
        for d in ld
        for ga in gamma_a_grid
        for gd in gamma_d_grid
    ]
    started = time.time()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_cell, [(s, cap) for s in specs], chunksize=4))
    else:
        cells = [_cell((s, cap)) for s in specs]
    meta = {
        "targets": template.target_ids,
        "delta0": template.delta0,
        "qa_max": template.qa_max.tolist(),
        "qd_max": template.qd_max.tolist(),
        "tol": template.tol,
        "started": started,
        "finished": time.time(),
    }
    meta.update(metadata or {})
    return SweepResult(cells, meta)


@dataclass(frozen=True)
class MonotonicityViolation:
    axis: str
    levels: tuple[int, int]
    fixed: float
    between: tuple[float, float]
    values: tuple[float, float]


def audit_monotonicity(sweep: SweepResult, tol: float = 1e-9) -> list[MonotonicityViolation]:
    """Attacker utility must not rise with gamma_a nor fall with gamma_d."""
    bad = []
    pairs = sorted({(c.levels_a, c.levels_d) for c in sweep.cells})
    for la, ld in pairs:
        ga, gd, u = sweep.surface(la, ld)
        for j, g in enumerate(gd):
            for i in range(len(ga) - 1):
                x, y = u[i, j], u[i + 1, j]
                if y > x + tol:
                    bad.append(MonotonicityViolation("gamma_a", (la, ld), g, (ga[i], ga[i + 1]), (x, y)))
        for i, g in enumerate(ga):
            for j in range(len(gd) - 1):
                x, y = u[i, j], u[i, j + 1]
                if y < x - tol:
                    bad.append(MonotonicityViolation("gamma_d", (la, ld), g, (gd[j], gd[j + 1]), (x, y)))
    return bad


CSV_COLUMNS = [
    "gamma_a",
    "gamma_d",
    "L_a",
    "L_d",
    "u_attacker",
    "delta_max",
    "attacker_cost",
    "defender_cost",
    "a_levels",
    "d_levels",
    "status",
]


def _cell_row(c: SweepCell) -> dict:
    eq = c.equilibrium
    row = {"gamma_a": c.gamma_a, "gamma_d": c.gamma_d, "L_a": c.levels_a, "L_d": c.levels_d}
    if eq is None:
        row.update({k: None for k in CSV_COLUMNS[4:10]})
        row["status"] = c.error
    else:
        row.update(
            u_attacker=eq.attacker_utility,
            delta_max=eq.post_attack_delta_max,
            attacker_cost=eq.attacker_cost,
            defender_cost=eq.defender_cost,
            a_levels=eq.attacker_action.label(),
            d_levels=eq.defender_action.label(),
            status="ok",
        )
    return row


def sweep_to_csv(sweep: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for c in sweep.cells:
        row = _cell_row(c)
        w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def sweep_to_json(sweep: SweepResult) -> str:
    doc = {
        "format": "stackgrid-sweep",
        "version": FORMAT_VERSION,
        "columns": CSV_COLUMNS,
        "metadata": sweep.metadata,
        "cells": [_cell_row(c) for c in sweep.cells],
    }
    return json.dumps(doc, indent=1) + "\n"


def equilibrium_to_dict(eq: Equilibrium) -> dict:
    d = asdict(eq)
    d["attacker_action"] = {"levels": eq.attacker_action.label(), "L": eq.attacker_action.denominator + 1}
    d["defender_action"] = {"levels": eq.defender_action.label(), "L": eq.defender_action.denominator + 1}
    d["defender_utility"] = eq.defender_utility
    return d
