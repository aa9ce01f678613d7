"""Acceptance checks; each test records one PASS/FAIL line in the terminal summary."""

from __future__ import annotations

import time

import numpy as np
import pytest

from stackgrid.cli import main, parse_grid
from stackgrid.game import (
    ATTACKER,
    ActionVector,
    DEFENDER,
    GameSpec,
    UtilityKernel,
    clip_utility,
    outcome_probabilities,
)
from stackgrid.powerflow import covert_limits
from stackgrid.solver import (
    audit_monotonicity,
    best_response_set,
    check_against_oracle,
    cost_sweep,
    importance_ranking,
    individual_optimization_baseline,
    solve_cbse,
)
from stackgrid.stability import build_stability_model, instability_index

from .conftest import DATA, record_criterion, random_toy_spec

GRID = parse_grid("0.05:1.0:0.05")
REFERENCE_INCREMENTS = (0.2947, 0.2825, 0.3040, 0.2871, 0.2987, 0.3025)
ATTACKER_ORDER = (6, 9, 8, 4, 7, 5)
DEFENDER_ORDER = (5, 6, 8, 4, 7, 9)


@pytest.fixture(scope="module")
def sweep9(spec9):
    return cost_sweep(spec9, GRID, GRID, jobs=4)


def _timed_delta(capsys, case):
    t = time.perf_counter()
    code = main(["delta", "--case", case])
    elapsed = time.perf_counter() - t
    out = capsys.readouterr().out
    line = next(ln for ln in out.splitlines() if ln.startswith("delta0 = "))
    return code, float(line.split()[2]), elapsed


def test_criterion_01_nominal_index_case9(capsys):
    code, delta, elapsed = _timed_delta(capsys, str(DATA / "case9.json"))
    ok = code == 0 and abs(delta - 0.1935) <= 0.01 and elapsed < 1.0
    record_criterion(1, ok, f"9-bus delta0 = {delta:.4f} (target 0.1935 +/- 0.01), {elapsed:.2f} s")
    assert ok


def test_criterion_02_nominal_index_case39(capsys):
    code, delta, elapsed = _timed_delta(capsys, str(DATA / "case39_stressed.m"))
    ok = code == 0 and abs(delta - 0.5560) <= 0.01 and elapsed < 1.0
    record_criterion(2, ok, f"39-bus delta0 = {delta:.4f} (target 0.5560 +/- 0.01), {elapsed:.2f} s")
    assert ok


def test_criterion_03_importance_ranking(case9, model9):
    t = time.perf_counter()
    limits = covert_limits(case9)
    r = importance_ranking(model9, limits)
    elapsed = time.perf_counter() - t
    err = np.max(np.abs(r.attacker_scores - np.array(REFERENCE_INCREMENTS)))
    top_def = float(r.defender_scores.max())
    ok = (
        err <= 0.01
        and r.attacker_order == ATTACKER_ORDER
        and r.defender_order == DEFENDER_ORDER
        and abs(top_def - 0.2379) <= 0.01
        and elapsed < 60
    )
    record_criterion(
        3,
        ok,
        f"max increment error {err:.4f}; attacker {'>'.join(map(str, r.attacker_order))}; "
        f"defender {'>'.join(map(str, r.defender_order))}; top defender score {top_def:.4f}; {elapsed:.1f} s",
    )
    assert ok


def test_criterion_04_collapse_and_zero_plateaus(spec9):
    target = 1 - spec9.delta0
    worst = 0.0
    slowest = 0.0
    bad = []
    for ga in (0.05, 0.10, 0.15):
        for gd in (0.75, 0.85, 1.0):
            t = time.perf_counter()
            u = solve_cbse(spec9.with_costs(ga, gd)).attacker_utility
            slowest = max(slowest, time.perf_counter() - t)
            worst = max(worst, abs(u - target))
            if abs(u - target) > 1e-9:
                bad.append((ga, gd, u))
    for gd in (0.05, 0.10, 0.15):
        for ga in GRID:
            u = solve_cbse(spec9.with_costs(ga, gd)).attacker_utility
            if u != 0.0:
                bad.append((ga, gd, u))
    ok = not bad and slowest < 120
    record_criterion(
        4, ok, f"collapse value {target:.4f}, max deviation {worst:.2g}; {len(bad)} off-plateau cells; slowest cell {slowest:.2f} s"
    )
    assert ok


def test_criterion_05_strategy_detail(spec9):
    # loads 4..9: full protection on 4, 5, 6, 8 and half on 7, 9
    expected = ActionVector((2, 2, 2, 1, 2, 1), 2, DEFENDER)
    notes = []
    ok = True
    for ga in (0.05, 0.10, 0.15):
        spec = spec9.with_costs(ga, 0.2)
        eq = solve_cbse(spec)
        if eq.defender_action == expected:
            continue
        # a different defense is acceptable only if the expected one is payoff-equivalent
        alt = best_response_set(spec, expected).best_value
        same = abs(alt - eq.attacker_utility) <= spec.tol
        ok &= same
        notes.append(f"gamma_a={ga}: d={eq.defender_action.label()} U={eq.attacker_utility:.4f}, expected d gives U={alt:.4f}")
    record_criterion(5, ok, "; ".join(notes) if notes else "defender levels match at every gamma_a")
    assert ok


def test_criterion_06_oracle_suite():
    t = time.perf_counter()
    failures = []
    n = 120
    for seed in range(n):
        rep = check_against_oracle(random_toy_spec(np.random.default_rng(1000 + seed)))
        if not rep.ok:
            failures.append((seed, rep.messages))
    elapsed = time.perf_counter() - t
    ok = not failures and elapsed < 300
    record_criterion(6, ok, f"{n} toy instances, {len(failures)} disagreements with brute force, {elapsed:.1f} s")
    assert ok, failures[:3]


def test_criterion_07_monotonicity_and_refinement(spec9, spec39, sweep9):
    fig5 = cost_sweep(spec9.with_costs(0.1, 0.5, levels_a=2), GRID, GRID, [2], [2, 3, 4, 5], jobs=4)
    sweep39 = cost_sweep(spec39, GRID, GRID, jobs=4)
    violations = sum(len(audit_monotonicity(s)) for s in (sweep9, fig5, sweep39))
    refinement = []
    col = GRID.index(0.5)
    for coarse, fine in ((2, 4), (3, 5)):
        _, _, uc = fig5.surface(2, coarse)
        _, _, uf = fig5.surface(2, fine)
        refinement += [(coarse, fine, g) for g, a, b in zip(GRID, uc[:, col], uf[:, col]) if b > a + 1e-9]
    ok = violations == 0 and not refinement
    record_criterion(
        7,
        ok,
        f"{violations} monotonicity violations over {len(sweep9.cells) + len(fig5.cells) + len(sweep39.cells)} cells; "
        f"{len(refinement)} refinement violations for level pairs (2,4) and (3,5) at gamma_d=0.5",
    )
    assert ok


def test_criterion_08_property_suites():
    rng = np.random.default_rng(20240601)
    n_cases = 10_000
    failures = {"normalization": 0, "bounds": 0, "zero_sum": 0, "monotone": 0}
    branches = {"floor": 0, "interior": 0, "ceiling": 0}
    for _ in range(n_cases):
        spec = random_toy_spec(rng)
        k = spec.k_loads
        a = rng.integers(0, spec.levels_a, k)
        d = rng.integers(0, spec.levels_d, k)[None, :]
        p = outcome_probabilities(a / (spec.levels_a - 1))[0]
        if abs(p.sum() - 1.0) > 1e-12 or p.min() < 0:
            failures["normalization"] += 1
        table = UtilityKernel(spec).tables(d)[0]
        u = float(p @ table)
        if not (-1e-15 <= u <= 1 - spec.delta0 + 1e-15):
            failures["bounds"] += 1
        if (0.0 - u) + u != 0.0:
            failures["zero_sum"] += 1
        m = spec.model
        q = m.q_nominal * rng.uniform(0, 3)
        inc = rng.uniform(0, 1, k) * (rng.random(k) < 0.7)
        if m.index(q + inc) < m.index(q) - 1e-12:
            failures["monotone"] += 1
        raw = instability_index(m.q_crit_inv, q + 3 * inc - rng.uniform(0, 1, k))[0]
        branch = "floor" if raw < m.delta0 else ("ceiling" if raw > 1 else "interior")
        branches[branch] += 1
        expect = {"floor": 0.0, "ceiling": 1 - m.delta0, "interior": raw - m.delta0}[branch]
        if abs(clip_utility(raw, m.delta0) - expect) > 1e-15:
            failures["bounds"] += 1
    ok = not any(failures.values()) and all(branches.values())
    record_criterion(
        8,
        ok,
        f"{n_cases} random cases; failures {failures}; clip branches hit {branches}",
    )
    assert ok


def test_criterion_09_case39_subset(spec9, spec39, sweep9):
    sweep = cost_sweep(spec39, GRID, GRID, jobs=4)
    ga, gd, u = sweep.surface()
    target = 1 - spec39.delta0
    plateau = np.abs(u - target) <= 1e-9
    cells = [(ga[i], gd[j]) for i, j in zip(*np.nonzero(plateau))]
    confined = bool(cells) and all(a <= 0.2 + 1e-9 and d >= 0.5 - 1e-9 for a, d in cells)
    small_d = [j for j, g in enumerate(gd) if g <= 0.15 + 1e-9]
    zero_small = bool(np.all(u[:, small_d] == 0.0))
    u9 = sweep9.surface()[2]
    collapse9 = int((np.abs(u9 - (1 - spec9.delta0)) <= 1e-9).sum())
    ok = confined and zero_small and len(cells) > collapse9 and abs(spec39.delta0 - 0.5560) <= 0.01
    record_criterion(
        9,
        ok,
        f"plateau {target:.4f} on {len(cells)} cells (gamma_a <= {max(a for a, _ in cells) if cells else float('nan'):.2f}, "
        f"gamma_d >= {min(d for _, d in cells) if cells else float('nan'):.2f}); zero for gamma_d <= 0.15: {zero_small}; "
        f"collapse cells 39-bus {len(cells)} vs 9-bus {collapse9}; subset-vs-full gap not evaluated",
    )
    assert ok


def test_criterion_10_individual_optimization_gap(spec9, sweep9):
    best = (0.0, None)
    for cell in sweep9.cells:
        io = individual_optimization_baseline(spec9.with_costs(cell.gamma_a, cell.gamma_d))[2]
        gap = abs(io - cell.equilibrium.attacker_utility)
        if gap > best[0]:
            best = (gap, (cell.gamma_a, cell.gamma_d))
    ok = best[0] >= 0.1
    record_criterion(10, ok, f"largest gap {best[0]:.4f} at (gamma_a, gamma_d) = {best[1]}")
    assert ok
