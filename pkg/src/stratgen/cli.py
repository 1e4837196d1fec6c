"""Command-line entry points, instance serialization, and experiment harness.

The instance file format is strict JSON with units spelled out in the field
names (``*_mw``, ``*_usd_per_mwh`` ...); unknown keys are rejected so that
typos fail loudly instead of silently defaulting.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time

import numpy as np

from .model import (
    CandidateUnit,
    Demand,
    ExistingUnit,
    Instance,
    LongTermScenario,
    LongTermTree,
    OperatingCondition,
    RivalUnit,
    ShortTermScenario,
    Stage,
    validate_instance,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER_LIMIT = 3
EXIT_INTERNAL = 4


class SchemaError(ValueError):
    """Instance file violates the schema; message carries the field path."""


def _require(obj: dict, path: str, known: dict):
    """Strict field check: every key known, every required key present."""
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: expected an object")
    for key in obj:
        if key not in known:
            raise SchemaError(f"{path}: unknown key {key!r}")
    out = {}
    for key, (required, conv) in known.items():
        if key not in obj:
            if required:
                raise SchemaError(f"{path}.{key}: missing required key")
            out[key] = None
            continue
        try:
            out[key] = conv(obj[key])
        except SchemaError:
            raise
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}.{key}: {exc}") from exc
    return out


def _number(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"expected a number, got {v!r}")
    return float(v)


def _keyed_table(raw, path, depth, leaf=_number):
    """Nested {str: {...}} tables to {tuple: float}; integer keys where numeric."""
    def convert_key(s):
        try:
            return int(s)
        except ValueError:
            return s

    out = {}

    def walk(node, prefix):
        if len(prefix) == depth:
            out[tuple(prefix) if depth > 1 else prefix[0]] = leaf(node)
            return
        if not isinstance(node, dict):
            raise SchemaError(f"{path}: expected nesting of depth {depth}")
        for key, sub in node.items():
            walk(sub, prefix + [convert_key(key)])

    walk(raw, [])
    return out


def parse_instance(path: str) -> Instance:
    """Parse and schema-check an instance file (validation is separate)."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return instance_from_dict(raw)


def instance_from_dict(raw: dict) -> Instance:
    top = _require(raw, "instance", {
        "sos_factor_pu": (True, _number),
        "stages": (True, list),
        "long_term_scenarios": (True, list),
        "short_term_scenarios": (True, list),
        "operating_conditions": (True, list),
        "existing_units": (True, list),
        "candidate_units": (True, list),
        "rival_units": (True, list),
        "demands": (True, list),
        "tree": (True, dict),
    })

    stages = []
    for i, s in enumerate(top["stages"]):
        f = _require(s, f"stages[{i}]", {
            "index": (True, int),
            "discount_factor_pu": (True, _number),
            "amortization_rate_pu": (True, _number),
            "budget_usd": (True, _number),
            "years": (False, _number),
        })
        stages.append(Stage(index=f["index"],
                            discount_factor=f["discount_factor_pu"],
                            amortization_rate=f["amortization_rate_pu"],
                            budget=f["budget_usd"],
                            years=f["years"] if f["years"] is not None else 1.0))

    lts = []
    for i, s in enumerate(top["long_term_scenarios"]):
        p = f"long_term_scenarios[{i}]"
        f = _require(s, p, {
            "index": (True, int),
            "probability": (True, _number),
            "investment_cost_usd_per_mw": (True, dict),
            "marginal_cost_usd_per_mwh": (True, dict),
            "peak_load_mw": (True, dict),
            "rival_offer_quantity_mw": (True, dict),
        })
        lts.append(LongTermScenario(
            index=f["index"], probability=f["probability"],
            investment_cost=_keyed_table(f["investment_cost_usd_per_mw"], p, 2),
            marginal_cost=_keyed_table(f["marginal_cost_usd_per_mwh"], p, 2),
            peak_load=_keyed_table(f["peak_load_mw"], p, 2),
            rival_offer_quantity=_keyed_table(f["rival_offer_quantity_mw"], p, 4),
        ))

    sts = []
    for i, s in enumerate(top["short_term_scenarios"]):
        p = f"short_term_scenarios[{i}]"
        f = _require(s, p, {
            "index": (True, int),
            "probability": (True, _number),
            "rival_offer_price_usd_per_mwh": (True, dict),
            "demand_utility_usd_per_mwh": (True, dict),
        })
        sts.append(ShortTermScenario(
            index=f["index"], probability=f["probability"],
            rival_offer_price=_keyed_table(f["rival_offer_price_usd_per_mwh"], p, 3),
            demand_utility=_keyed_table(f["demand_utility_usd_per_mwh"], p, 2),
        ))

    ocs = []
    for i, s in enumerate(top["operating_conditions"]):
        p = f"operating_conditions[{i}]"
        f = _require(s, p, {
            "index": (True, int),
            "weight_hours": (True, _number),
            "wind_capacity_factor_pu": (True, dict),
            "demand_factor_pu": (True, dict),
        })
        ocs.append(OperatingCondition(
            index=f["index"], weight_hours=f["weight_hours"],
            wind_capacity_factor=_keyed_table(f["wind_capacity_factor_pu"], p, 1),
            demand_factor=_keyed_table(f["demand_factor_pu"], p, 1),
        ))

    def units(key, fields, ctor):
        out = []
        for i, s in enumerate(top[key]):
            f = _require(s, f"{key}[{i}]", fields)
            out.append(ctor(f))
        return tuple(out)

    existing = units("existing_units", {
        "id": (True, str),
        "installed_capacity_mw": (True, _number),
        "technology": (True, str),
    }, lambda f: ExistingUnit(id=f["id"],
                              installed_capacity=f["installed_capacity_mw"],
                              technology=f["technology"]))
    candidates = units("candidate_units", {
        "id": (True, str),
        "max_capacity_mw": (True, _number),
        "technology": (True, str),
    }, lambda f: CandidateUnit(id=f["id"], max_capacity=f["max_capacity_mw"],
                               technology=f["technology"]))
    rivals = units("rival_units", {
        "id": (True, str),
        "technology": (True, str),
    }, lambda f: RivalUnit(id=f["id"], technology=f["technology"]))
    demands = units("demands", {"id": (True, str)},
                    lambda f: Demand(id=f["id"]))

    tree_raw = _require(top["tree"], "tree", {"partitions": (True, dict)})
    partitions = {}
    for key, classes in tree_raw["partitions"].items():
        try:
            t = int(key)
        except ValueError as exc:
            raise SchemaError(f"tree.partitions: non-integer stage {key!r}") from exc
        if not isinstance(classes, list):
            raise SchemaError(f"tree.partitions.{key}: expected a list of classes")
        partitions[t] = tuple(tuple(int(g) for g in cls) for cls in classes)

    return Instance(
        stages=tuple(stages),
        long_term_scenarios=tuple(lts),
        short_term_scenarios=tuple(sts),
        operating_conditions=tuple(ocs),
        existing_units=existing,
        candidate_units=candidates,
        rival_units=rivals,
        demands=demands,
        sos_factor=top["sos_factor_pu"],
        tree=LongTermTree(partitions=partitions),
    )


def instance_to_dict(inst: Instance) -> dict:
    def nest(table, depth):
        out = {}
        for key, val in sorted(table.items(), key=lambda kv: str(kv[0])):
            parts = key if isinstance(key, tuple) else (key,)
            node = out
            for p in parts[:-1]:
                node = node.setdefault(str(p), {})
            node[str(parts[-1])] = val
        return out

    return {
        "sos_factor_pu": inst.sos_factor,
        "stages": [
            {"index": s.index, "discount_factor_pu": s.discount_factor,
             "amortization_rate_pu": s.amortization_rate,
             "budget_usd": s.budget, "years": s.years}
            for s in inst.stages
        ],
        "long_term_scenarios": [
            {"index": g.index, "probability": g.probability,
             "investment_cost_usd_per_mw": nest(g.investment_cost, 2),
             "marginal_cost_usd_per_mwh": nest(g.marginal_cost, 2),
             "peak_load_mw": nest(g.peak_load, 2),
             "rival_offer_quantity_mw": nest(g.rival_offer_quantity, 4)}
            for g in inst.long_term_scenarios
        ],
        "short_term_scenarios": [
            {"index": s.index, "probability": s.probability,
             "rival_offer_price_usd_per_mwh": nest(s.rival_offer_price, 3),
             "demand_utility_usd_per_mwh": nest(s.demand_utility, 2)}
            for s in inst.short_term_scenarios
        ],
        "operating_conditions": [
            {"index": c.index, "weight_hours": c.weight_hours,
             "wind_capacity_factor_pu": nest(c.wind_capacity_factor, 1),
             "demand_factor_pu": nest(c.demand_factor, 1)}
            for c in inst.operating_conditions
        ],
        "existing_units": [
            {"id": u.id, "installed_capacity_mw": u.installed_capacity,
             "technology": u.technology}
            for u in inst.existing_units
        ],
        "candidate_units": [
            {"id": u.id, "max_capacity_mw": u.max_capacity,
             "technology": u.technology}
            for u in inst.candidate_units
        ],
        "rival_units": [
            {"id": u.id, "technology": u.technology} for u in inst.rival_units
        ],
        "demands": [{"id": d.id} for d in inst.demands],
        "tree": {"partitions": {
            str(t): [list(cls) for cls in classes]
            for t, classes in sorted(inst.tree.partitions.items())
        }},
    }


def write_instance(inst: Instance, path: str):
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh, indent=1, sort_keys=True)
        fh.write("\n")


def instance_fingerprint(inst: Instance) -> str:
    blob = json.dumps(instance_to_dict(inst), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- instance generation -----------------------------------------------------


def generate_study_instance() -> Instance:
    """Two-stage study-shaped fixture: 1500 MW fleet, 1050 MW load.

    Seven conventional units (five rival, two strategic), one demand block,
    three demand-growth scenarios (+/-20%), three rival-price scenarios
    (+/-10%), five wind operating conditions, candidates ccgt/coal/wind,
    non-binding budget.  Costs are tuned so that the profit-maximizing
    investment differs across scenarios: the scenario subproblems disagree
    at first, which is what the consensus loop has to reconcile.
    """
    stages = (Stage(1, 1.0, 0.2, 1e9, years=3.0),
              Stage(2, 0.8, 0.2, 1e9, years=3.0))
    rivals = {"r1": (300.0, 8.0), "r2": (250.0, 12.0), "r3": (200.0, 18.0),
              "r4": (180.0, 25.0), "r5": (120.0, 32.0)}
    existing = {"e1": (250.0, 10.0), "e2": (200.0, 22.0)}
    cands = {"ccgt": (100.0, 30.0, 5.0e5, "conv"),
             "coal": (100.0, 16.0, 3.5e5, "conv"),
             "wind": (100.0, 0.0, 4.0e5, "wind")}
    ts = (1, 2)
    hs = (1, 2, 3, 4, 5)
    growth = {1: 1.2, 2: 1.0, 3: 0.8}
    price_shift = {1: 1.1, 2: 1.0, 3: 0.9}
    base_load = 1050.0

    lts = tuple(
        LongTermScenario(
            index=g, probability=1 / 3,
            investment_cost={(t, c): cands[c][2] for t in ts for c in cands},
            marginal_cost={
                **{(t, e): existing[e][1] for t in ts for e in existing},
                **{(t, c): cands[c][1] for t in ts for c in cands},
            },
            peak_load={(1, "d1"): base_load,
                       (2, "d1"): base_load * growth[g]},
            rival_offer_quantity={(t, h, k, r): rivals[r][0]
                                  for t in ts for h in hs for k in (1, 2, 3)
                                  for r in rivals},
        )
        for g in (1, 2, 3)
    )
    sts = tuple(
        ShortTermScenario(
            index=k, probability=1 / 3,
            rival_offer_price={(t, g, r): rivals[r][1] * price_shift[k]
                               for t in ts for g in (1, 2, 3) for r in rivals},
            demand_utility={(t, "d1"): 38.0 for t in ts},
        )
        for k in (1, 2, 3)
    )
    cf = {1: 0.95, 2: 0.70, 3: 0.45, 4: 0.25, 5: 0.10}
    hours = {1: 876.0, 2: 1752.0, 3: 2628.0, 4: 2190.0, 5: 1314.0}
    ocs = tuple(
        OperatingCondition(index=h, weight_hours=hours[h],
                           wind_capacity_factor={"wind": cf[h]},
                           demand_factor={"d1": 1.0})
        for h in hs
    )
    return Instance(
        stages=stages,
        long_term_scenarios=lts,
        short_term_scenarios=sts,
        operating_conditions=ocs,
        existing_units=tuple(ExistingUnit(e, existing[e][0], "conv")
                             for e in existing),
        candidate_units=tuple(CandidateUnit(c, cands[c][0], cands[c][3])
                              for c in cands),
        rival_units=tuple(RivalUnit(r, "conv") for r in rivals),
        demands=(Demand("d1"),),
        sos_factor=0.0,
        tree=LongTermTree(partitions={1: ((1, 2, 3),),
                                      2: ((1,), (2,), (3,))}),
    )


def generate_random_instance(seed: int, n_stages: int = 2, n_lt: int = 2,
                             n_ms: int = 2, n_conditions: int = 2,
                             n_existing: int = 1, n_rivals: int = 2,
                             n_candidates: int = 2, n_demands: int = 1,
                             wind_candidates: bool = True) -> Instance:
    """Deterministic pseudo-random instance with the given shape."""
    for name, v in (("n_stages", n_stages), ("n_lt", n_lt), ("n_ms", n_ms),
                    ("n_conditions", n_conditions), ("n_demands", n_demands)):
        if v < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    if min(n_existing, n_rivals, n_candidates) < 0:
        raise ValueError("unit counts must be >= 0")
    rng = np.random.default_rng(seed)
    ts = list(range(1, n_stages + 1))
    gammas = list(range(1, n_lt + 1))
    ks = list(range(1, n_ms + 1))
    hs = list(range(1, n_conditions + 1))

    demands = tuple(Demand(f"d{i}") for i in range(1, n_demands + 1))
    existing = tuple(
        ExistingUnit(f"e{i}", float(rng.uniform(50, 200)), "conv")
        for i in range(1, n_existing + 1))
    rivals = tuple(RivalUnit(f"r{i}", "conv") for i in range(1, n_rivals + 1))
    cand_tech = ["wind" if wind_candidates and i % 2 == 0 else "conv"
                 for i in range(n_candidates)]
    candidates = tuple(
        CandidateUnit(f"c{i + 1}", float(rng.uniform(40, 120)), cand_tech[i])
        for i in range(n_candidates))

    stages = tuple(Stage(t, float(0.9 ** (t - 1)), float(rng.uniform(0.1, 0.3)),
                         1e9) for t in ts)
    rival_price = {r.id: float(rng.uniform(8, 30)) for r in rivals}
    rival_cap = {r.id: float(rng.uniform(40, 150)) for r in rivals}
    peak = {d.id: float(rng.uniform(150, 400)) for d in demands}
    growth = {g: float(rng.uniform(0.85, 1.25)) for g in gammas}
    lt_prob = rng.dirichlet(np.full(n_lt, 4.0))
    ms_prob = rng.dirichlet(np.full(n_ms, 4.0))

    lts = tuple(
        LongTermScenario(
            index=g, probability=float(lt_prob[g - 1]),
            investment_cost={(t, c.id): float(rng.uniform(2e5, 9e5))
                             for t in ts for c in candidates},
            marginal_cost={
                **{(t, e.id): float(rng.uniform(8, 25)) for t in ts
                   for e in existing},
                **{(t, c.id): 0.0 if c.technology == "wind"
                   else float(rng.uniform(10, 28))
                   for t in ts for c in candidates},
            },
            peak_load={(t, d.id): peak[d.id] * growth[g] ** (t - 1)
                       for t in ts for d in demands},
            rival_offer_quantity={
                (t, h, k, r.id): rival_cap[r.id] * float(rng.uniform(0.8, 1.0))
                for t in ts for h in hs for k in ks for r in rivals},
        )
        for g in gammas
    )
    sts = tuple(
        ShortTermScenario(
            index=k, probability=float(ms_prob[k - 1]),
            rival_offer_price={
                (t, g, r.id): rival_price[r.id] * float(rng.uniform(0.9, 1.1))
                for t in ts for g in gammas for r in rivals},
            demand_utility={(t, d.id): float(rng.uniform(32, 45))
                            for t in ts for d in demands},
        )
        for k in ks
    )
    wind_ids = [u.id for u in existing + candidates + rivals
                if u.technology == "wind"]
    weights = rng.dirichlet(np.full(n_conditions, 2.0)) * 8760.0
    ocs = tuple(
        OperatingCondition(
            index=h, weight_hours=float(weights[h - 1]),
            wind_capacity_factor={u: float(rng.uniform(0.1, 0.9))
                                  for u in wind_ids},
            demand_factor={d.id: float(rng.uniform(0.6, 1.0)) for d in demands},
        )
        for h in hs
    )
    # two-level tree: root, then a random nested split at later stages
    partitions = {1: (tuple(gammas),)}
    if n_stages >= 2:
        if n_lt == 1:
            leaf = ((1,),)
        else:
            cut = int(rng.integers(1, n_lt))
            leaf = (tuple(gammas[:cut]), tuple(gammas[cut:]))
        for t in ts[1:]:
            partitions[t] = leaf
    return Instance(
        stages=stages,
        long_term_scenarios=lts,
        short_term_scenarios=sts,
        operating_conditions=ocs,
        existing_units=existing,
        candidate_units=candidates,
        rival_units=rivals,
        demands=demands,
        sos_factor=0.0,
        tree=LongTermTree(partitions=partitions),
    )


def generate_smoke_instance(seed: int = 0) -> Instance:
    """Single-scenario smoke instance (|G| = |K| = 1)."""
    return generate_random_instance(seed, n_stages=1, n_lt=1, n_ms=1,
                                    n_conditions=1, n_existing=1, n_rivals=1,
                                    n_candidates=1)


# -- run reports -------------------------------------------------------------


@dataclasses.dataclass
class RunReport:
    """Serializable summary of one solve; round-trips losslessly."""

    solver: str                     # "extensive" | "admm"
    status: str
    objective: float                # optimum / terminal profit estimate
    investments: dict               # (t, gamma, candidate id) -> MW
    config: dict
    instance_fingerprint: str
    wall_seconds: float
    iterations: list | None = None  # admm gap rows
    extra: dict = dataclasses.field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["investments"] = {f"{t}|{g}|{c}": v
                            for (t, g, c), v in self.investments.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        inv = {}
        for key, v in d["investments"].items():
            t, g, c = key.split("|")
            inv[(int(t), int(g), c)] = v
        d["investments"] = inv
        return cls(**d)

    def write(self, path: str):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_iterations_csv(rows: list, path: str):
    """Deterministic per-iteration bound/residual table.

    Wall-clock columns are deliberately omitted: the file must be
    byte-identical across repeated runs and worker counts.
    """
    fields = ["iter", "gub", "ub", "abs_gap", "rel_gap", "max_residual_mw"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(row[f]) for f in fields])


# -- commands ----------------------------------------------------------------


def cmd_solve_extensive(instance, rel_gap=None, node_limit=None,
                        time_limit=None, backend="highs") -> RunReport:
    from .branch_bound import solve_mpcc
    from .constants import DEFAULT_REL_GAP
    from .reformulate import build_extensive_form, investment_values

    start = time.monotonic()
    model = build_extensive_form(instance)
    res = solve_mpcc(model, rel_gap=rel_gap or DEFAULT_REL_GAP,
                     node_limit=node_limit, time_limit=time_limit,
                     backend=backend)
    inv = (investment_values(model, res.x) if res.x is not None else {})
    return RunReport(
        solver="extensive",
        status=res.status,
        objective=res.objective,
        investments=inv,
        config={"rel_gap": rel_gap, "node_limit": node_limit,
                "time_limit": time_limit, "backend": backend},
        instance_fingerprint=instance_fingerprint(instance),
        wall_seconds=time.monotonic() - start,
        extra={"nodes": res.nodes, "best_bound": res.best_bound},
    )


def cmd_solve_admm(instance, config) -> RunReport:
    from .admm import admm_solve, gap_report

    start = time.monotonic()
    result = admm_solve(instance, config)
    rows = gap_report(result, config.epsilon_mw)
    return RunReport(
        solver="admm",
        status=result.status,
        objective=result.profit_estimate,
        investments=dict(result.consensus),
        config=dataclasses.asdict(config),
        instance_fingerprint=instance_fingerprint(instance),
        wall_seconds=time.monotonic() - start,
        iterations=rows,
        extra={"gub": result.gub, "ub": result.ub,
               "num_iterations": result.num_iterations,
               "certificate": bool(rows and rows[-1]["certificate"])},
    )


def cmd_compare(instance, rhos, admm_config=None) -> list:
    """Extensive solve plus one ADMM run per rho; rows for a CSV table."""
    from .admm import AdmmConfig

    base = admm_config or AdmmConfig()
    rows = []
    ext = cmd_solve_extensive(instance)
    first_stage = sorted((c, v) for (t, g, c), v in ext.investments.items()
                         if t == min(instance.stage_indices()))
    rows.append({
        "solver": "extensive", "rho": None, "status": ext.status,
        "objective": ext.objective, "iterations": None, "abs_gap": None,
        "max_residual_mw": None, "time_seconds": ext.wall_seconds,
        **{f"inv_{c}_mw": v for c, v in dict(first_stage).items()},
    })
    for rho in rhos:
        cfg = dataclasses.replace(base, rho=float(rho))
        rep = cmd_solve_admm(instance, cfg)
        last = rep.iterations[-1]
        inv = {c: v for (t, g, c), v in rep.investments.items()
               if t == min(instance.stage_indices())}
        rows.append({
            "solver": "admm", "rho": float(rho), "status": rep.status,
            "objective": rep.objective,
            "iterations": rep.extra["num_iterations"],
            "abs_gap": last["abs_gap"],
            "max_residual_mw": last["max_residual_mw"],
            "time_seconds": rep.wall_seconds,
            **{f"inv_{c}_mw": v for c, v in sorted(inv.items())},
        })
    return rows


def write_compare_csv(rows: list, path: str):
    fields = []
    for row in rows:
        for key in row:
            if key not in fields:
                fields.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(row.get(f)) for f in fields])


# -- argparse wiring ---------------------------------------------------------


def _load_validated(path: str):
    inst = parse_instance(path)
    rep = validate_instance(inst)
    if not rep.valid:
        raise SchemaError(rep.summary())
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return inst


def _add_admm_flags(p):
    p.add_argument("--rho", type=float, default=100.0)
    p.add_argument("--epsilon-mw", type=float, default=0.01)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--anchor", choices=["local", "consensus"], default="local")
    p.add_argument("--pwl-segments", type=int, default=200)
    p.add_argument("--bound-cadence", type=int, default=None)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)


def _admm_config(args):
    from .admm import AdmmConfig

    return AdmmConfig(rho=args.rho, epsilon_mw=args.epsilon_mw,
                      max_iters=args.max_iters, anchor_mode=args.anchor,
                      pwl_segments=args.pwl_segments,
                      bound_cadence=args.bound_cadence, workers=args.workers)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="stratgen",
        description="Strategic generation-investment planning under "
                    "short- and long-term uncertainty.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a generated instance file")
    p.add_argument("--preset", choices=["study", "smoke", "random"],
                   default="random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    for flag, default in (("--stages", 2), ("--lt-scenarios", 2),
                          ("--ms-scenarios", 2), ("--conditions", 2),
                          ("--existing", 1), ("--rivals", 2),
                          ("--candidates", 2), ("--demands", 1)):
        p.add_argument(flag, type=int, default=default)

    p = sub.add_parser("validate", help="schema-check and validate an instance")
    p.add_argument("instance")

    p = sub.add_parser("stats", help="model size statistics")
    p.add_argument("instance")

    p = sub.add_parser("solve-extensive", help="global extensive-form solve")
    p.add_argument("instance")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--rel-gap", type=float, default=None)
    p.add_argument("--node-limit", type=int, default=None)
    p.add_argument("--time-limit", type=float, default=None)

    p = sub.add_parser("solve-admm", help="consensus decomposition solve")
    p.add_argument("instance")
    p.add_argument("--out-dir", default=".")
    _add_admm_flags(p)

    p = sub.add_parser("compare", help="extensive vs ADMM over a rho sweep")
    p.add_argument("instance")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--rhos", type=float, nargs="+", default=[1e2, 1e3, 1e5])
    _add_admm_flags(p)
    return ap


def main(argv=None) -> int:
    import logging

    logging.basicConfig(
        level=os.environ.get("STRATGEN_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except AssertionError as exc:
        print(f"internal invariant breached: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def _dispatch(args) -> int:
    if args.command == "generate":
        if args.preset == "study":
            inst = generate_study_instance()
        elif args.preset == "smoke":
            inst = generate_smoke_instance(args.seed)
        else:
            inst = generate_random_instance(
                args.seed, n_stages=args.stages, n_lt=args.lt_scenarios,
                n_ms=args.ms_scenarios, n_conditions=args.conditions,
                n_existing=args.existing, n_rivals=args.rivals,
                n_candidates=args.candidates, n_demands=args.demands)
        write_instance(inst, args.out)
        print(f"wrote {args.out} ({instance_fingerprint(inst)})")
        return EXIT_OK

    if args.command == "validate":
        inst = parse_instance(args.instance)
        rep = validate_instance(inst)
        print(rep.summary())
        return EXIT_OK if rep.valid else EXIT_VALIDATION

    inst = _load_validated(args.instance)

    if args.command == "stats":
        from .reformulate import (build_extensive_form, build_scenario_mpcc,
                                  model_statistics)

        g, k = inst.scenario_pairs()[0]
        sub = model_statistics(build_scenario_mpcc(inst, g, k))
        ext = model_statistics(build_extensive_form(inst))
        out = {"subproblem": sub, "extensive": ext,
               "num_scenario_pairs": len(inst.scenario_pairs()),
               "comp_pair_ratio": sub["num_comp_pairs"] / ext["num_comp_pairs"]}
        print(json.dumps(out, indent=1, sort_keys=True))
        return EXIT_OK

    os.makedirs(args.out_dir, exist_ok=True)

    if args.command == "solve-extensive":
        rep = cmd_solve_extensive(inst, rel_gap=args.rel_gap,
                                  node_limit=args.node_limit,
                                  time_limit=args.time_limit)
        rep.write(os.path.join(args.out_dir, "report.json"))
        print(f"{rep.status}: objective {rep.objective:.6g} "
              f"({rep.extra['nodes']} nodes, {rep.wall_seconds:.2f}s)")
        return EXIT_OK if rep.status == "Optimal" else EXIT_SOLVER_LIMIT

    if args.command == "solve-admm":
        from .admm import SubproblemError

        try:
            rep = cmd_solve_admm(inst, _admm_config(args))
        except SubproblemError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INTERNAL
        rep.write(os.path.join(args.out_dir, "report.json"))
        write_iterations_csv(rep.iterations,
                             os.path.join(args.out_dir, "iterations.csv"))
        print(f"{rep.status}: profit estimate {rep.objective:.6g} after "
              f"{rep.extra['num_iterations']} iterations "
              f"(certificate: {rep.extra['certificate']})")
        return EXIT_OK if rep.status == "Converged" else EXIT_SOLVER_LIMIT

    if args.command == "compare":
        rows = cmd_compare(inst, args.rhos, _admm_config(args))
        path = os.path.join(args.out_dir, "compare.csv")
        write_compare_csv(rows, path)
        print(f"wrote {path} ({len(rows)} rows)")
        return EXIT_OK

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
