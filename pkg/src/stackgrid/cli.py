"""Command-line entry point: ``stackgrid {delta,limits,rank,solve,sweep,oracle}``.

Exit codes: 0 success, 1 verification failure, 2 input error, 3 resource cap.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .case import CaseError, PowerSystemCase, load_case, validate_case
from .game import ActionSpaceTooLarge, GameSpec
from .powerflow import (
    BISECT_TOL,
    PowerFlowError,
    compensation_limit,
    covert_limit,
    in_band,
    verify_voltage_range,
)
from .solver import (
    OracleTooLarge,
    audit_monotonicity,
    check_against_oracle,
    cost_sweep,
    equilibrium_to_dict,
    importance_ranking,
    individual_optimization_baseline,
    select_subset,
    solve_cbse,
)
from .stability import ModelError, StabilityModel, build_stability_model, instability_index

log = logging.getLogger("stackgrid")

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_CAP = 0, 1, 2, 3
CASE_DIR_ENV = "STACKGRID_CASE_DIR"
CACHE_DIR_ENV = "STACKGRID_CACHE_DIR"
DATA_DIR = Path(__file__).resolve().parent / "data"


class InputError(ValueError):
    pass


# --- argument parsing ---------------------------------------------------------


def _positive(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a {kind.__name__}, got {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"expected a positive value, got {text!r}")
        return v

    return conv


def parse_grid(text: str) -> list[float]:
    """``lo:hi:step`` to an inclusive list, or a comma list of values."""
    if "," in text or ":" not in text:
        vals = [float(x) for x in text.split(",") if x.strip()]
    else:
        try:
            lo, hi, step = (float(x) for x in text.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"grid must be lo:hi:step, got {text!r}") from None
        if step <= 0 or hi < lo:
            raise argparse.ArgumentTypeError(f"empty grid {text!r}")
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        vals = [round(lo + i * step, 10) for i in range(n)]
    if not vals or min(vals) <= 0:
        raise argparse.ArgumentTypeError(f"grid values must be positive: {text!r}")
    return vals


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _levels(text: str) -> list[int]:
    vals = _int_list(text)
    if min(vals) < 2:
        raise argparse.ArgumentTypeError("level counts must be at least 2")
    return vals


def _float_or_list(text: str):
    if text == "auto":
        return text
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, a comma list or 'auto', got {text!r}") from None
    if min(vals) < 0:
        raise argparse.ArgumentTypeError("values must be non-negative")
    return vals[0] if len(vals) == 1 else vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("case")
    g.add_argument("--case", default="case9", help="case file, or a name in $%s or the bundled data" % CASE_DIR_ENV)
    g.add_argument("--format", dest="case_format", choices=["native", "matpower", "auto"], default="auto")
    g.add_argument("--config", help="JSON file of option defaults (flags given on the command line win)")
    g.add_argument("--absolute", action="store_true", help="use the max-abs index instead of the max stress")
    g.add_argument("--out", help="artifact path (sweep: prefix for .csv/.json)")
    g.add_argument("--emit", choices=["csv", "json", "both"], default="both")
    g.add_argument("--jobs", type=_positive(int), default=1)
    g.add_argument("--tol", type=_positive(float), default=1e-9, help="payoff tie tolerance")
    g.add_argument("-v", "--verbose", action="store_true")

    band = argparse.ArgumentParser(add_help=False)
    b = band.add_argument_group("voltage band")
    b.add_argument("--vmin", type=_positive(float), default=0.9)
    b.add_argument("--vmax", type=_positive(float), default=1.1)
    b.add_argument("--scope", choices=["all", "target"], default="all", help="loads whose voltage is constrained")
    b.add_argument("--qa-max", type=_float_or_list, help="covert limits (pu) instead of computing them: one value, one per target, or one per load")
    b.add_argument("--limits-file", help="JSON artifact from 'limits' to take covert limits from")
    b.add_argument("--no-cache", action="store_true", help="do not read or write the covert-limit cache")
    b.add_argument("--probe", type=_positive(float), default=0.8, help="defender ranking probe (pu)")
    b.add_argument("--defender-mode", choices=["probe", "relief"], default="probe")

    game = argparse.ArgumentParser(add_help=False)
    gg = game.add_argument_group("game")
    gg.add_argument("--gamma-a", type=_positive(float), default=0.1)
    gg.add_argument("--gamma-d", type=_positive(float), default=0.1)
    gg.add_argument("--levels-a", type=_levels, default=[3])
    gg.add_argument("--levels-d", type=_levels, default=[3])
    gg.add_argument("--subset", type=_positive(int), help="target the union of both players' top-N loads")
    gg.add_argument("--loads", type=_int_list, help="explicit comma list of targeted load ids")
    gg.add_argument("--qd-max", type=_float_or_list, default=2.0, help="compensation cap (pu), list, or 'auto'")

    p = argparse.ArgumentParser(prog="stackgrid", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"stackgrid {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("delta", parents=[common], help="nominal instability index")
    sub.add_parser("limits", parents=[common, band, game], help="covert limits and compensation check")
    sub.add_parser("rank", parents=[common, band], help="importance ranking of loads")
    sub.add_parser("solve", parents=[common, band, game], help="cost-based Stackelberg equilibrium")
    sw = sub.add_parser("sweep", parents=[common, band, game], help="equilibria over a cost grid")
    sw.add_argument("--grid-a", type=parse_grid, default=parse_grid("0.05:1.0:0.05"))
    sw.add_argument("--grid-d", type=parse_grid, default=parse_grid("0.05:1.0:0.05"))
    sw.add_argument("--baseline", action="store_true", help="add individual-optimization payoffs")
    orc = sub.add_parser("oracle", parents=[common, band, game], help="check the solver against brute force")
    orc.add_argument("--cap", type=_positive(int), default=10**5, help="maximum strategy pairs")
    orc.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    return p


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise InputError("config file must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(k for k in (key.replace("-", "_") for key in cfg) if k not in known)
        if unknown:
            raise InputError(f"unknown config keys: {unknown}")
        defaults = {}
        for key, val in cfg.items():
            dest = key.replace("-", "_")
            action = next(a for a in sub._actions if a.dest == dest)
            if action.type is not None and isinstance(val, (str, int, float)) and not isinstance(val, bool):
                val = action.type(str(val))
            defaults[dest] = val
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if getattr(args, "vmin", 0) and args.vmin >= args.vmax:
        raise InputError(f"--vmin {args.vmin} must be below --vmax {args.vmax}")
    return args


# --- helpers ------------------------------------------------------------------


def resolve_case_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    roots = [Path(os.environ[CASE_DIR_ENV])] if os.environ.get(CASE_DIR_ENV) else []
    roots.append(DATA_DIR)
    for root in roots:
        for cand in (root / name, root / f"{name}.json", root / f"{name}.m"):
            if cand.exists():
                return cand
    raise InputError(f"case file not found: {name}")


class Context:
    """Case, model and derived inputs shared by the commands."""

    def __init__(self, args):
        self.args = args
        self.path = resolve_case_path(args.case)
        raw = self.path.read_bytes()
        self.case_hash = hashlib.sha256(raw).hexdigest()
        self.case: PowerSystemCase = load_case(self.path, args.case_format)
        for w in validate_case(self.case).warnings:
            log.warning("%s", w)
        self.model: StabilityModel = build_stability_model(self.case, absolute=args.absolute)

    def provenance(self) -> dict:
        cfg = {k: v for k, v in vars(self.args).items() if k not in ("verbose", "corrupt")}
        return {
            "tool": "stackgrid",
            "version": __version__,
            "case": str(self.path),
            "case_name": self.case.name,
            "case_sha256": self.case_hash,
            "config": cfg,
            "tolerances": {"payoff": self.args.tol, "bisection": BISECT_TOL, "power_flow": 1e-8},
        }

    # covert limits ---------------------------------------------------------
    def _cache_file(self) -> Path:
        root = Path(os.environ.get(CACHE_DIR_ENV) or Path.home() / ".cache" / "stackgrid")
        a = self.args
        return root / f"limits-{self.case_hash[:16]}-{a.vmin:g}-{a.vmax:g}-{a.scope}.json"

    def limits(self, load_ids: list[int]) -> np.ndarray:
        a = self.args
        if a.qa_max is not None:
            all_ids = self.case.load_ids
            if isinstance(a.qa_max, list) and len(a.qa_max) == len(all_ids) != len(load_ids):
                table = dict(zip(all_ids, a.qa_max))
                return np.array([table[i] for i in load_ids], dtype=float)
            return self._vector(a.qa_max, load_ids, "--qa-max")
        if a.limits_file:
            doc = json.loads(Path(a.limits_file).read_text(encoding="utf-8"))
            table = {int(k): float(v) for k, v in doc["covert_limits"].items()}
            missing = [i for i in load_ids if i not in table]
            if missing:
                raise InputError(f"limits file lacks loads {missing}")
            return np.array([table[i] for i in load_ids])
        cache: dict[str, float] = {}
        path = self._cache_file()
        if not a.no_cache and path.exists():
            try:
                cache = json.loads(path.read_text(encoding="utf-8"))["covert_limits"]
            except (OSError, ValueError, KeyError):
                cache = {}
        out = []
        for i in load_ids:
            if str(i) not in cache:
                cache[str(i)] = covert_limit(self.case, i, a.vmin, a.vmax, scope=a.scope)
            out.append(cache[str(i)])
        if not a.no_cache:
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                doc = {"case_sha256": self.case_hash, "vmin": a.vmin, "vmax": a.vmax, "scope": a.scope,
                       "covert_limits": dict(sorted(cache.items(), key=lambda kv: int(kv[0])))}
                path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
            except OSError as exc:
                log.debug("limit cache not written: %s", exc)
        return np.array(out)

    def _vector(self, val, load_ids, flag) -> np.ndarray:
        if isinstance(val, list):
            if len(val) != len(load_ids):
                raise InputError(f"{flag} needs {len(load_ids)} values, got {len(val)}")
            return np.array(val, dtype=float)
        return np.full(len(load_ids), float(val))

    def compensation_caps(self, load_ids: list[int]) -> np.ndarray:
        a = self.args
        if a.qd_max == "auto":
            return np.array([compensation_limit(self.case, i, a.vmin, a.vmax) for i in load_ids])
        return self._vector(a.qd_max, load_ids, "--qd-max")

    def targets(self) -> list[int]:
        a = self.args
        ids = self.case.load_ids
        if a.loads and a.subset:
            raise InputError("--loads and --subset are mutually exclusive")
        if a.loads:
            bad = [i for i in a.loads if i not in ids]
            if bad:
                raise InputError(f"not load buses: {bad}")
            return sorted(set(a.loads))
        if a.subset:
            if a.subset > len(ids):
                raise InputError(f"--subset {a.subset} exceeds the {len(ids)} loads")
            return select_subset(self.ranking(), a.subset)
        return list(ids)

    def ranking(self):
        a = self.args
        return importance_ranking(self.model, self.limits(self.case.load_ids), a.probe, a.defender_mode)

    def spec(self, levels_a: int | None = None, levels_d: int | None = None) -> GameSpec:
        a = self.args
        ids = self.targets()
        pos = [self.case.load_position(i) for i in ids]
        return GameSpec(
            self.model,
            pos,
            a.gamma_a,
            a.gamma_d,
            levels_a or a.levels_a[0],
            levels_d or a.levels_d[0],
            self.limits(ids),
            self.compensation_caps(ids),
            tol=a.tol,
        )


def _emit_json(path: str | None, doc: dict) -> None:
    if path:
        Path(path).write_text(json.dumps(doc, indent=1, default=_jsonable) + "\n", encoding="utf-8")
        print(f"wrote {path}")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


def _single_levels(args) -> None:
    if len(args.levels_a) > 1 or len(args.levels_d) > 1:
        raise InputError("level lists are only accepted by 'sweep'")


# --- commands -----------------------------------------------------------------


def cmd_delta(args) -> int:
    ctx = Context(args)
    m = ctx.model
    _, idx = instability_index(m.q_crit_inv, m.q_nominal, absolute=m.absolute)
    report = {
        "delta0": m.delta0,
        "most_stressed_load": m.load_ids[idx],
        "loads": list(m.load_ids),
        "v_open": m.v_open,
        "q_crit_condition": m.condition(),
        "q_crit_inv_max": float(m.q_crit_inv.max()),
        "provenance": ctx.provenance(),
    }
    print(f"case {ctx.case.name}: K={ctx.case.n_loads} loads, M={ctx.case.n_generators} generators")
    print(f"delta0 = {m.delta0:.4f}  (most stressed load: bus {report['most_stressed_load']})")
    print("open-circuit voltages: " + ", ".join(f"{i}:{v:.4f}" for i, v in zip(m.load_ids, m.v_open)))
    print(f"Q_crit condition number {report['q_crit_condition']:.3g}; max entry of inverse {report['q_crit_inv_max']:.3g}")
    _emit_json(args.out, report)
    return EXIT_OK


def cmd_limits(args) -> int:
    _single_levels(args)
    ctx = Context(args)
    ids = ctx.targets()
    qa = ctx.limits(ids)
    qd = ctx.compensation_caps(ids)
    k = ctx.case.n_loads
    pos = [ctx.case.load_position(i) for i in ids]
    comp = np.zeros(k)
    comp[pos] = qd
    alone = verify_voltage_range(ctx.case, comp, args.vmin, args.vmax)
    net = np.zeros(k)
    net[pos] = qa - qd
    attacked = in_band(ctx.case, net, args.vmin, args.vmax)
    report = {
        "covert_limits": {str(i): float(v) for i, v in zip(ids, qa)},
        "qd_max": {str(i): float(v) for i, v in zip(ids, qd)},
        "compensation_in_band": alone.ok,
        "compensation_worst_bus": alone.worst_bus,
        "compensation_worst_voltage": alone.worst_voltage,
        "compensation_under_attack_in_band": attacked.ok,
        "compensation_under_attack_worst_bus": attacked.worst_bus,
        "provenance": ctx.provenance(),
    }
    print(f"{'load':>5} {'qa_max':>9} {'qd_max':>9}")
    for i, x, y in zip(ids, qa, qd):
        print(f"{i:>5} {x:9.4f} {y:9.4f}")

    def show(label, rep):
        where = "" if rep.ok else f" (worst bus {rep.worst_bus}, {rep.worst_voltage if rep.worst_voltage is not None else float('nan'):.4f} pu)"
        state = "in band" if rep.ok else ("out of band" if rep.converged else "power flow did not converge")
        print(f"{label}: {state}{where}")

    show("full compensation", alone)
    show("full compensation against full covert attack", attacked)
    _emit_json(args.out, report)
    return EXIT_OK if alone.ok else EXIT_VERIFY


def cmd_rank(args) -> int:
    ctx = Context(args)
    r = ctx.ranking()
    rows = []
    for n, (ia, idf) in enumerate(zip(r.attacker_order, r.defender_order), start=1):
        sa = r.attacker_scores[r.load_ids.index(ia)]
        sd = r.defender_scores[r.load_ids.index(idf)]
        rows.append((n, ia, sa, idf, sd))
    lines = ["rank,attacker_load,attacker_score,defender_load,defender_score"]
    lines += [f"{n},{ia},{sa!r},{idf},{sd!r}" for n, ia, sa, idf, sd in rows]
    print(f"{'rank':>4} {'attacker':>9} {'score':>8} {'defender':>9} {'score':>8}")
    for n, ia, sa, idf, sd in rows:
        print(f"{n:>4} {ia:>9} {sa:8.4f} {idf:>9} {sd:8.4f}")
    print("attacker order: " + " > ".join(map(str, r.attacker_order)))
    print("defender order: " + " > ".join(map(str, r.defender_order)))
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    _single_levels(args)
    ctx = Context(args)
    spec = ctx.spec()
    eq = solve_cbse(spec, jobs=args.jobs)
    doc = {"targets": spec.target_ids, "delta0": spec.delta0, "equilibrium": equilibrium_to_dict(eq),
           "provenance": ctx.provenance()}
    print(f"targets {spec.target_ids}  gamma_a={spec.gamma_a:g} gamma_d={spec.gamma_d:g} "
          f"L_a={spec.levels_a} L_d={spec.levels_d}")
    print(f"attacker levels {eq.attacker_action.levels.tolist()}  cost {eq.attacker_cost:.4f}")
    print(f"defender levels {eq.defender_action.levels.tolist()}  cost {eq.defender_cost:.4f}")
    print(f"attacker utility {eq.attacker_utility:.4f}  defender utility {eq.defender_utility:.4f}")
    print(f"index under full attack {eq.post_attack_delta_max:.4f}; optimal defenses {eq.defender_candidates}")
    _emit_json(args.out, doc)
    return EXIT_OK


def cmd_sweep(args) -> int:
    ctx = Context(args)
    spec = ctx.spec()
    meta = {"provenance": ctx.provenance(), "case": ctx.case.name}
    res = cost_sweep(spec, args.grid_a, args.grid_d, args.levels_a, args.levels_d, jobs=args.jobs, metadata=meta)
    bad = audit_monotonicity(res)
    res.metadata["monotonicity_violations"] = len(bad)
    if args.baseline:
        gaps = []
        for c in res.cells:
            if c.equilibrium is None:
                continue
            s = spec.with_costs(c.gamma_a, c.gamma_d, levels_a=c.levels_a, levels_d=c.levels_d)
            io = individual_optimization_baseline(s)[2]
            gaps.append(abs(io - c.equilibrium.attacker_utility))
        res.metadata["baseline_max_gap"] = max(gaps) if gaps else None
        print(f"largest equilibrium vs individual-optimization gap: {res.metadata['baseline_max_gap']}")
    failed = [c for c in res.cells if c.equilibrium is None]
    for la in args.levels_a:
        for ld in args.levels_d:
            ga, gd, u = res.surface(la, ld)
            print(f"attacker utility, L_a={la} L_d={ld} (rows gamma_a, columns gamma_d)")
            print("       " + " ".join(f"{g:6.3g}" for g in gd))
            for g, row in zip(ga, u):
                print(f"{g:6.3g} " + " ".join(f"{x:6.3f}" for x in row))
    print(f"monotonicity audit: {'pass' if not bad else f'{len(bad)} violations'}")
    for v in bad[:10]:
        print(f"  {v}")
    if failed:
        print(f"{len(failed)} cells failed: {failed[0].error}")
    if args.out:
        stem = Path(args.out)
        stem = stem.with_suffix("") if stem.suffix in (".csv", ".json") else stem
        if args.emit in ("csv", "both"):
            stem.with_suffix(".csv").write_text(res.to_csv(), encoding="utf-8")
            print(f"wrote {stem.with_suffix('.csv')}")
        if args.emit in ("json", "both"):
            stem.with_suffix(".json").write_text(res.to_json(), encoding="utf-8")
            print(f"wrote {stem.with_suffix('.json')}")
    if failed and len(failed) == len(res.cells):
        return EXIT_CAP
    return EXIT_VERIFY if bad else EXIT_OK


def cmd_oracle(args) -> int:
    _single_levels(args)
    ctx = Context(args)
    spec = ctx.spec()
    eq = solve_cbse(spec)
    if args.corrupt:
        import dataclasses

        eq = dataclasses.replace(eq, attacker_utility=eq.attacker_utility + 0.01)
    rep = check_against_oracle(spec, eq, cap=args.cap)
    print(f"strategy pairs {rep.pairs}; equilibria {rep.n_equilibria}; common payoff {rep.payoff:.6f}; "
          f"solver payoff {rep.cbse_payoff:.6f}")
    for msg in rep.messages:
        print(f"FAIL: {msg}")
    print("oracle check " + ("passed" if rep.ok else "failed"))
    _emit_json(args.out, {"ok": rep.ok, "pairs": rep.pairs, "equilibria": rep.n_equilibria,
                          "payoff": rep.payoff, "messages": rep.messages, "provenance": ctx.provenance()})
    return EXIT_OK if rep.ok else EXIT_VERIFY


COMMANDS = {
    "delta": cmd_delta,
    "limits": cmd_limits,
    "rank": cmd_rank,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    started = time.perf_counter()
    try:
        code = COMMANDS[args.command](args)
    except (InputError, CaseError, ModelError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PowerFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (ActionSpaceTooLarge, OracleTooLarge) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    log.debug("%s finished in %.3f s", args.command, time.perf_counter() - started)
    return code


if __name__ == "__main__":
    sys.exit(main())
