"""Regenerate the bundled ``case39_stressed`` data from ``case39``.

The stressed variant raises every generator voltage setpoint by 3 % (capped at
1.1 pu) and scales all load reactive demands by a common factor chosen so that
the nominal instability index equals ``TARGET``. The nominal power flow stays
inside the 0.9-1.1 pu band.

    python3 scripts/make_case39_stressed.py
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from stackgrid.case import load_case, serialize_matpower_case, serialize_native_case
from stackgrid.powerflow import verify_voltage_range
from stackgrid.stability import build_stability_model

TARGET = 0.5560
VGEN_FACTOR = 1.03
DATA = Path(__file__).resolve().parents[1] / "src" / "stackgrid" / "data"


def main() -> None:
    base = load_case(DATA / "case39.m")
    buses = [
        b if b.is_load else dataclasses.replace(b, v_setpoint=round(min(b.v_setpoint * VGEN_FACTOR, 1.1), 6))
        for b in base.buses
    ]
    raised = base.with_buses(buses)
    lam = TARGET / build_stability_model(raised).delta0
    buses = [
        dataclasses.replace(b, q_demand=round(b.q_demand * lam * base.base_mva, 4) / base.base_mva)
        if b.is_load
        else b
        for b in buses
    ]
    case = base.with_buses(buses, name="case39_stressed")
    delta0 = build_stability_model(case).delta0
    band = verify_voltage_range(case, [0.0] * case.n_loads)
    print(f"scale {lam:.6f}  delta0 {delta0:.6f}  in band {band.ok} (worst bus {band.worst_bus} "
          f"at {band.worst_voltage:.4f} pu)")
    (DATA / "case39_stressed.m").write_text(serialize_matpower_case(case))
    (DATA / "case39_stressed.json").write_text(serialize_native_case(case))


if __name__ == "__main__":
    main()
