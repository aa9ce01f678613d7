"""Network matrices and the voltage instability index.

The instability index of a load vector ``Q`` is built from the stiffness matrix
``Q_crit = 1/4 diag(V*) B_LL diag(V*)``, where ``V* = -B_LL^-1 B_LG V_G`` are the
open-circuit load voltages. Because every entry of ``Q_crit^-1`` is
non-positive, ``s = -Q_crit^-1 Q`` is the per-load stress vector and the index
is its largest entry. For non-negative ``Q`` this equals ``||Q_crit^-1 Q||_inf``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .case import PowerSystemCase


class ModelError(ValueError):
    """The network violates an assumption of the stiffness-matrix model."""


@dataclass(frozen=True)
class SusceptancePartition:
    b_ll: np.ndarray
    b_lg: np.ndarray
    b_gl: np.ndarray
    b_gg: np.ndarray

    @property
    def k(self) -> int:
        return self.b_ll.shape[0]

    @property
    def m(self) -> int:
        return self.b_gg.shape[0]


@dataclass(frozen=True)
class StabilityModel:
    """Everything needed to evaluate the instability index of a case."""

    partition: SusceptancePartition | None
    v_gen: np.ndarray
    v_open: np.ndarray
    q_crit: np.ndarray
    q_crit_inv: np.ndarray
    q_nominal: np.ndarray
    delta0: float
    load_ids: tuple[int, ...]
    absolute: bool = False

    @property
    def k(self) -> int:
        return len(self.load_ids)

    def index(self, q_load: np.ndarray) -> float:
        return instability_index(self.q_crit_inv, q_load, absolute=self.absolute)[0]

    def stress(self, q_load: np.ndarray) -> np.ndarray:
        """Per-load stress ``-Q_crit^-1 Q`` (broadcasts over leading axes)."""
        return -(np.asarray(q_load, dtype=float) @ self.q_crit_inv.T)

    def condition(self) -> float:
        return float(np.linalg.cond(self.q_crit))


def build_admittance(case: PowerSystemCase) -> np.ndarray:
    """Complex bus admittance matrix in the case's load-first order."""
    n = case.n_buses
    y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        f, t = case.index_of(br.from_bus), case.index_of(br.to_bus)
        ys = 1.0 / complex(br.r, br.x)
        half = 0.5j * br.b_charging
        tap = br.tap_ratio
        y[f, f] += (ys + half) / tap**2
        y[t, t] += ys + half
        y[f, t] -= ys / tap
        y[t, f] -= ys / tap
    for i, bus in enumerate(case.buses):
        y[i, i] += complex(bus.shunt_g, bus.shunt_b)
    return y


def partition_susceptance(y: np.ndarray, case: PowerSystemCase) -> SusceptancePartition:
    b = np.asarray(y).imag
    k = case.n_loads
    part = SusceptancePartition(
        b_ll=b[:k, :k].copy(), b_lg=b[:k, k:].copy(), b_gl=b[k:, :k].copy(), b_gg=b[k:, k:].copy()
    )
    if not np.allclose(part.b_gl, part.b_lg.T, rtol=0.0, atol=1e-12):
        raise ModelError("susceptance matrix is not symmetric between load and generator blocks")
    cond = np.linalg.cond(part.b_ll)
    if not np.isfinite(cond) or cond > 1e14:
        raise ModelError(f"B_LL is singular (condition estimate {cond:.3g})")
    return part


def open_circuit_voltages(part: SusceptancePartition, v_gen: np.ndarray) -> np.ndarray:
    v = -np.linalg.solve(part.b_ll, part.b_lg @ np.asarray(v_gen, dtype=float))
    if np.any(v <= 0):
        bad = np.flatnonzero(v <= 0).tolist()
        raise ModelError(f"non-positive open-circuit voltage at load positions {bad}")
    return v


def stiffness_matrix(v_open: np.ndarray, b_ll: np.ndarray) -> np.ndarray:
    dv = np.diag(np.asarray(v_open, dtype=float))
    q = 0.25 * dv @ b_ll @ dv
    return 0.5 * (q + q.T)


def instability_index(
    q_crit_inv: np.ndarray, q_load: np.ndarray, absolute: bool = False
) -> tuple[float, int]:
    """Return ``(delta, argmax)`` for the load vector ``q_load``.

    By default the index is the largest per-load stress ``max_k (-Q_crit^-1 Q)_k``.
    With ``absolute=True`` it is the max-abs entry instead. The two agree whenever
    ``q_load`` is entrywise non-negative.
    """
    x = np.asarray(q_crit_inv) @ np.asarray(q_load, dtype=float)
    s = np.abs(x) if absolute else -x
    if s.size == 0:
        return 0.0, -1
    k = int(np.argmax(s))
    return float(s[k]) + 0.0, k


def build_stability_model(case: PowerSystemCase, absolute: bool = False) -> StabilityModel:
    part = partition_susceptance(build_admittance(case), case)
    v_gen = case.v_gen
    v_open = open_circuit_voltages(part, v_gen)
    q_crit = stiffness_matrix(v_open, part.b_ll)
    q_inv = np.linalg.inv(q_crit)
    q_inv = 0.5 * (q_inv + q_inv.T)
    q0 = case.q_load
    delta0, _ = instability_index(q_inv, q0, absolute=absolute)
    return StabilityModel(
        partition=part,
        v_gen=v_gen,
        v_open=v_open,
        q_crit=q_crit,
        q_crit_inv=q_inv,
        q_nominal=q0,
        delta0=delta0,
        load_ids=tuple(case.load_ids),
        absolute=absolute,
    )


def model_from_stiffness(
    q_crit: np.ndarray, q_nominal: np.ndarray, load_ids=None, absolute: bool = False
) -> StabilityModel:
    """Model built directly from a stiffness matrix, without network data."""
    q_crit = np.asarray(q_crit, dtype=float)
    q_inv = np.linalg.inv(q_crit)
    q_inv = 0.5 * (q_inv + q_inv.T)
    q0 = np.asarray(q_nominal, dtype=float)
    k = len(q0)
    ids = tuple(range(1, k + 1)) if load_ids is None else tuple(load_ids)
    return StabilityModel(
        partition=None,
        v_gen=np.zeros(0),
        v_open=np.zeros(0),
        q_crit=q_crit,
        q_crit_inv=q_inv,
        q_nominal=q0,
        delta0=instability_index(q_inv, q0, absolute=absolute)[0],
        load_ids=ids,
        absolute=absolute,
    )
