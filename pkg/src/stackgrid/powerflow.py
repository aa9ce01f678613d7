"""AC power flow and the voltage-band checks derived from it.

The Newton-Raphson solver works in polar coordinates with the usual
complex-derivative form of the Jacobian. It is small and dense on purpose: the
bundled networks have at most a few dozen buses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .case import SLACK, PowerSystemCase
from .stability import build_admittance

log = logging.getLogger(__name__)

PF_TOL = 1e-8
PF_MAX_ITER = 50
BISECT_TOL = 1e-4
BISECT_CEILING = 10.0
V_BAND = (0.9, 1.1)


class PowerFlowError(RuntimeError):
    """The nominal operating point is unusable for a voltage-band computation."""


@dataclass(frozen=True)
class PowerFlowSolution:
    v_mag: np.ndarray
    v_ang: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float
    message: str = ""


@dataclass(frozen=True)
class BandReport:
    ok: bool
    converged: bool
    worst_bus: int | None
    worst_voltage: float | None
    violations: list[int] = field(default_factory=list)


def _injection(case: PowerSystemCase, q_delta: np.ndarray) -> np.ndarray:
    """Scheduled complex injections; ``q_delta`` adds to load reactive demand."""
    s = np.array([complex(b.p_gen - b.p_demand, -b.q_demand) for b in case.buses])
    k = case.n_loads
    s[:k] -= 1j * np.asarray(q_delta, dtype=float)
    return s


def _newton(y, s_spec, v0, pv, pq, tol, max_iter):
    v = v0.astype(complex)
    pvpq = np.concatenate([pv, pq])
    npv, npq = len(pv), len(pq)

    def mismatch(v):
        mis = v * np.conj(y @ v) - s_spec
        return np.concatenate([mis[pvpq].real, mis[pq].imag])

    f = mismatch(v)
    norm = float(np.max(np.abs(f))) if f.size else 0.0
    it = 0
    while norm > tol and it < max_iter:
        it += 1
        ibus = y @ v
        vm = np.abs(v)
        dvm = np.diag(v / vm)
        dva = np.diag(v)
        di = np.diag(ibus)
        ds_dvm = dva @ np.conj(y @ dvm) + np.conj(di) @ dvm
        ds_dva = 1j * dva @ np.conj(di - y @ dva)
        j11 = ds_dva[np.ix_(pvpq, pvpq)].real
        j12 = ds_dvm[np.ix_(pvpq, pq)].real
        j21 = ds_dva[np.ix_(pq, pvpq)].imag
        j22 = ds_dvm[np.ix_(pq, pq)].imag
        jac = np.block([[j11, j12], [j21, j22]])
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            return v, False, it, norm, "singular Jacobian"
        va = np.angle(v)
        vm = np.abs(v)
        va[pvpq] += dx[: npv + npq]
        vm[pq] += dx[npv + npq :]
        if not np.all(np.isfinite(vm)) or np.any(vm <= 0):
            return v, False, it, np.inf, "iterate left the physical region"
        v = vm * np.exp(1j * va)
        f = mismatch(v)
        norm = float(np.max(np.abs(f)))
        if not np.isfinite(norm):
            return v, False, it, norm, "mismatch diverged"
    ok = norm <= tol
    return v, ok, it, norm, "" if ok else f"no convergence after {it} iterations"


def solve_power_flow(
    case: PowerSystemCase,
    q_injection_delta: np.ndarray | None = None,
    tol: float = PF_TOL,
    max_iter: int = PF_MAX_ITER,
) -> PowerFlowSolution:
    """Solve the AC power flow with load reactive demands raised by ``q_injection_delta``.

    Non-convergence is reported on the returned solution rather than raised.
    """
    k = case.n_loads
    if q_injection_delta is None:
        q_injection_delta = np.zeros(k)
    y = build_admittance(case)
    s_spec = _injection(case, q_injection_delta)
    kinds = [b.kind for b in case.buses]
    pq = np.arange(k)
    pv = np.array([i for i in range(k, case.n_buses) if kinds[i] != SLACK], dtype=int)
    vset = np.array([b.v_setpoint for b in case.buses])

    flat = np.where(np.arange(case.n_buses) < k, 1.0, vset).astype(complex)
    v, ok, it, norm, msg = _newton(y, s_spec, flat, pv, pq, tol, max_iter)
    if not ok:
        log.debug("flat start failed (%s); restarting from setpoint magnitudes", msg)
        v2, ok2, it2, norm2, msg2 = _newton(y, s_spec, vset.astype(complex), pv, pq, tol, max_iter)
        if ok2 or norm2 < norm:
            v, ok, norm, msg = v2, ok2, norm2, msg2
        it += it2
    return PowerFlowSolution(np.abs(v), np.angle(v), bool(ok), it, float(norm), msg)


def power_balance_mismatch(case: PowerSystemCase, sol: PowerFlowSolution, q_injection_delta=None) -> float:
    """Largest bus power-balance error of ``sol`` over non-slack equations.

    Computed from branch flows rather than the Y-bus product, so it is an
    independent check of the solver.
    """
    k = case.n_loads
    dq = np.zeros(k) if q_injection_delta is None else np.asarray(q_injection_delta, float)
    v = sol.v_mag * np.exp(1j * sol.v_ang)
    net = np.zeros(case.n_buses, dtype=complex)
    for br in case.branches:
        f, t = case.index_of(br.from_bus), case.index_of(br.to_bus)
        ys = 1.0 / complex(br.r, br.x)
        half = 0.5j * br.b_charging
        a = br.tap_ratio
        i_f = (v[f] / a - v[t]) * ys / a + v[f] * half / a**2
        i_t = (v[t] - v[f] / a) * ys + v[t] * half
        net[f] += v[f] * np.conj(i_f)
        net[t] += v[t] * np.conj(i_t)
    for i, b in enumerate(case.buses):
        net[i] += abs(v[i]) ** 2 * np.conj(complex(b.shunt_g, b.shunt_b))
    spec = _injection(case, dq)
    err = net - spec
    worst = 0.0
    for i, b in enumerate(case.buses):
        if b.kind == SLACK:
            continue
        worst = max(worst, abs(err[i].real))
        if b.is_load:
            worst = max(worst, abs(err[i].imag))
    return worst


def _band_report(case, sol, vmin, vmax, scope) -> BandReport:
    k = case.n_loads
    idx = np.arange(k) if scope is None else np.asarray(scope, dtype=int)
    if not sol.converged:
        return BandReport(False, False, None, None, [])
    vm = sol.v_mag[idx]
    bad = (vm < vmin) | (vm > vmax)
    dev = np.maximum(vmin - vm, vm - vmax)
    w = int(np.argmax(dev)) if len(idx) else 0
    worst_id = case.buses[int(idx[w])].id if len(idx) else None
    worst_v = float(vm[w]) if len(idx) else None
    viol = [case.buses[int(i)].id for i in idx[bad]]
    return BandReport(not bad.any(), True, worst_id, worst_v, viol)


def in_band(
    case: PowerSystemCase,
    q_delta: np.ndarray,
    vmin: float = V_BAND[0],
    vmax: float = V_BAND[1],
    scope=None,
) -> BandReport:
    """Check load voltages after adding ``q_delta`` to the load reactive demands.

    ``scope`` restricts the check to the given load positions; ``None`` means all loads.
    """
    return _band_report(case, solve_power_flow(case, q_delta), vmin, vmax, scope)


def verify_voltage_range(
    case: PowerSystemCase,
    q_comp: np.ndarray,
    vmin: float = V_BAND[0],
    vmax: float = V_BAND[1],
) -> BandReport:
    """Power flow with demands *reduced* by ``q_comp``; ok iff converged and in band."""
    return in_band(case, -np.asarray(q_comp, dtype=float), vmin, vmax)


def _bisect(check, tol: float, ceiling: float) -> float:
    if check(ceiling):
        return ceiling
    lo, hi = 0.0, ceiling
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if check(mid):
            lo = mid
        else:
            hi = mid
    return lo


def covert_limit(
    case: PowerSystemCase,
    load_id: int,
    vmin: float = V_BAND[0],
    vmax: float = V_BAND[1],
    scope: str = "all",
    tol: float = BISECT_TOL,
    ceiling: float = BISECT_CEILING,
) -> float:
    """Largest reactive-demand increase at ``load_id`` that keeps voltages in band.

    ``scope='all'`` constrains every load voltage; ``scope='target'`` only the
    attacked bus.
    """
    k = case.load_position(load_id)
    if scope not in ("all", "target"):
        raise ValueError(f"scope must be 'all' or 'target', got {scope!r}")
    sel = None if scope == "all" else [k]
    nominal = in_band(case, np.zeros(case.n_loads), vmin, vmax, sel)
    if not nominal.ok:
        raise PowerFlowError(
            f"nominal operating point outside [{vmin}, {vmax}] "
            f"(converged={nominal.converged}, worst bus {nominal.worst_bus})"
        )
    e = np.zeros(case.n_loads)

    def ok(x):
        e[k] = x
        return in_band(case, e, vmin, vmax, sel).ok

    return _bisect(ok, tol, ceiling)


def covert_limits(case: PowerSystemCase, load_ids=None, **kw) -> np.ndarray:
    ids = case.load_ids if load_ids is None else list(load_ids)
    return np.array([covert_limit(case, i, **kw) for i in ids])


def compensation_limit(
    case: PowerSystemCase,
    load_id: int,
    vmin: float = V_BAND[0],
    vmax: float = V_BAND[1],
    tol: float = BISECT_TOL,
    ceiling: float = BISECT_CEILING,
) -> float:
    """Largest reactive compensation at ``load_id`` before its own voltage leaves the band."""
    k = case.load_position(load_id)
    e = np.zeros(case.n_loads)

    def ok(x):
        e[k] = -x
        return in_band(case, e, vmin, vmax, [k]).ok

    return _bisect(ok, tol, ceiling)
