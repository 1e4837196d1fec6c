"""Domain types for the planning instance and its scenario trees.

The instance is a plain immutable record of the producer's world: stages,
long-term (macro) scenarios, short-term (market) scenarios, operating
conditions, units, demands and the long-term decision tree.  Everything is
validated structurally before any model is built; validation reports all
violations instead of aborting on the first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .constants import PROB_TOL

CONV = "conv"
WIND = "wind"

HOURS_PER_YEAR = 8760.0


@dataclass(frozen=True)
class Stage:
    index: int
    discount_factor: float
    amortization_rate: float
    budget: float
    years: float = 1.0


@dataclass(frozen=True)
class LongTermScenario:
    index: int
    probability: float
    # dense tables, keyed by full index tuples
    investment_cost: dict          # (t, candidate_id) -> $/MW
    marginal_cost: dict            # (t, unit_id) -> $/MWh (existing + candidate)
    peak_load: dict                # (t, demand_id) -> MW
    rival_offer_quantity: dict     # (t, h, k, rival_id) -> MW


@dataclass(frozen=True)
class ShortTermScenario:
    index: int
    probability: float
    rival_offer_price: dict        # (t, gamma, rival_id) -> $/MWh
    demand_utility: dict           # (t, demand_id) -> $/MWh


@dataclass(frozen=True)
class OperatingCondition:
    index: int
    weight_hours: float
    wind_capacity_factor: dict     # unit_id -> p.u., any wind unit (existing/candidate/rival)
    demand_factor: dict            # demand_id -> p.u.


@dataclass(frozen=True)
class ExistingUnit:
    id: str
    installed_capacity: float
    technology: str


@dataclass(frozen=True)
class CandidateUnit:
    id: str
    max_capacity: float
    technology: str


@dataclass(frozen=True)
class RivalUnit:
    id: str
    technology: str


@dataclass(frozen=True)
class Demand:
    id: str


@dataclass(frozen=True)
class LongTermTree:
    """Per-stage partition of the long-term scenario set into tree nodes."""

    partitions: dict               # t -> tuple of tuples of scenario indices

    def classes(self, t: int):
        return self.partitions[t]

    def class_of(self, t: int, gamma: int):
        for cls in self.partitions[t]:
            if gamma in cls:
                return cls
        raise KeyError(f"scenario {gamma} not in any stage-{t} class")


@dataclass(frozen=True)
class Instance:
    stages: tuple
    long_term_scenarios: tuple
    short_term_scenarios: tuple
    operating_conditions: tuple
    existing_units: tuple
    candidate_units: tuple
    rival_units: tuple
    demands: tuple
    sos_factor: float
    tree: LongTermTree

    # -- index helpers ---------------------------------------------------

    def stage_indices(self):
        return [s.index for s in self.stages]

    def lt_by_index(self, gamma: int) -> LongTermScenario:
        for g in self.long_term_scenarios:
            if g.index == gamma:
                return g
        raise KeyError(f"unknown long-term scenario {gamma}")

    def ms_by_index(self, k: int) -> ShortTermScenario:
        for s in self.short_term_scenarios:
            if s.index == k:
                return s
        raise KeyError(f"unknown market scenario {k}")

    def scenario_pairs(self):
        """All (gamma, k) pairs in deterministic order."""
        return [
            (g.index, s.index)
            for g in sorted(self.long_term_scenarios, key=lambda g: g.index)
            for s in sorted(self.short_term_scenarios, key=lambda s: s.index)
        ]

    def pair_probability(self, gamma: int, k: int) -> float:
        return self.lt_by_index(gamma).probability * self.ms_by_index(k).probability

    def is_wind(self, unit_id: str) -> bool:
        for u in self.existing_units + self.candidate_units + self.rival_units:
            if u.id == unit_id:
                return u.technology == WIND
        raise KeyError(f"unknown unit {unit_id}")


@dataclass
class Violation:
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def add(self, path: str, message: str):
        self.violations.append(Violation(path, message))

    def warn(self, path: str, message: str):
        self.warnings.append(Violation(path, message))

    def summary(self) -> str:
        lines = [str(v) for v in self.violations]
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines) if lines else "ok"


def validate_instance(instance: Instance) -> ValidationReport:
    """Check every structural invariant; never raises, reports everything."""
    rep = ValidationReport()
    _check_probabilities(instance, rep)
    _check_stages(instance, rep)
    _check_units(instance, rep)
    _check_conditions(instance, rep)
    _check_tables(instance, rep)
    _check_tree(instance, rep)
    if not 0.0 <= instance.sos_factor <= 1.0:
        rep.add("sos_factor", f"must lie in [0, 1], got {instance.sos_factor}")
    return rep


def _check_probabilities(inst: Instance, rep: ValidationReport):
    for name, scens in (("long_term_scenarios", inst.long_term_scenarios),
                        ("short_term_scenarios", inst.short_term_scenarios)):
        total = sum(s.probability for s in scens)
        kind = "long-term" if name.startswith("long") else "market"
        if abs(total - 1.0) > PROB_TOL:
            rep.add(name, f"{kind} probabilities sum to {total:.12g}")
        for s in scens:
            if s.probability <= 0:
                rep.add(f"{name}[{s.index}].probability",
                        f"must be > 0, got {s.probability}")
        idx = [s.index for s in scens]
        if len(set(idx)) != len(idx):
            rep.add(name, "duplicate scenario indices")


def _check_stages(inst: Instance, rep: ValidationReport):
    if not inst.stages:
        rep.add("stages", "at least one stage required")
    for st in inst.stages:
        p = f"stages[{st.index}]"
        if not 0.0 < st.discount_factor <= 1.0:
            rep.add(f"{p}.discount_factor", f"must lie in (0, 1], got {st.discount_factor}")
        if not 0.0 <= st.amortization_rate <= 1.0:
            rep.add(f"{p}.amortization_rate", f"must lie in [0, 1], got {st.amortization_rate}")
        if st.budget < 0:
            rep.add(f"{p}.budget", f"must be >= 0, got {st.budget}")
    idx = [s.index for s in inst.stages]
    if sorted(idx) != list(range(1, len(idx) + 1)):
        rep.add("stages", f"stage indices must be 1..{len(idx)}, got {idx}")


def _check_units(inst: Instance, rep: ValidationReport):
    seen = set()
    for kind, units in (("existing_units", inst.existing_units),
                        ("candidate_units", inst.candidate_units),
                        ("rival_units", inst.rival_units)):
        for u in units:
            p = f"{kind}[{u.id}]"
            if u.id in seen:
                rep.add(p, "duplicate unit id")
            seen.add(u.id)
            if u.technology not in (CONV, WIND):
                rep.add(f"{p}.technology", f"must be '{CONV}' or '{WIND}', got {u.technology!r}")
            cap = getattr(u, "installed_capacity", getattr(u, "max_capacity", None))
            if cap is not None and cap < 0:
                rep.add(p, f"capacity must be >= 0, got {cap}")
    for d in inst.demands:
        if d.id in seen:
            rep.add(f"demands[{d.id}]", "duplicate id")
        seen.add(d.id)


def _check_conditions(inst: Instance, rep: ValidationReport):
    if not inst.operating_conditions:
        rep.add("operating_conditions", "at least one operating condition required")
    total_hours = 0.0
    for oc in inst.operating_conditions:
        p = f"operating_conditions[{oc.index}]"
        if oc.weight_hours <= 0:
            rep.add(f"{p}.weight_hours", f"must be > 0, got {oc.weight_hours}")
        total_hours += max(oc.weight_hours, 0.0)
        for uid, cf in oc.wind_capacity_factor.items():
            if not 0.0 <= cf <= 1.0:
                rep.add(f"{p}.wind_capacity_factor[{uid}]", f"must lie in [0, 1], got {cf}")
        for did, df in oc.demand_factor.items():
            if not 0.0 <= df <= 1.0:
                rep.add(f"{p}.demand_factor[{did}]", f"must lie in [0, 1], got {df}")
        wind_ids = {u.id for u in inst.existing_units + inst.candidate_units + inst.rival_units
                    if u.technology == WIND}
        missing = wind_ids - set(oc.wind_capacity_factor)
        for uid in sorted(missing):
            rep.add(f"{p}.wind_capacity_factor", f"missing factor for wind unit {uid}")
        missing_d = {d.id for d in inst.demands} - set(oc.demand_factor)
        for did in sorted(missing_d):
            rep.add(f"{p}.demand_factor", f"missing factor for demand {did}")
    if inst.stages:
        years = max(s.years for s in inst.stages)
        if total_hours > HOURS_PER_YEAR * years + 1e-9:
            rep.warn("operating_conditions",
                     f"weights sum to {total_hours:.6g} h, exceeding "
                     f"{HOURS_PER_YEAR * years:.6g} h per stage")


def _check_tables(inst: Instance, rep: ValidationReport):
    stages = [s.index for s in inst.stages]
    conds = [c.index for c in inst.operating_conditions]
    ks = [s.index for s in inst.short_term_scenarios]
    for g in inst.long_term_scenarios:
        p = f"long_term_scenarios[{g.index}]"
        for t in stages:
            for c in inst.candidate_units:
                if (t, c.id) not in g.investment_cost:
                    rep.add(f"{p}.investment_cost", f"missing entry ({t}, {c.id})")
                elif g.investment_cost[(t, c.id)] < 0:
                    rep.add(f"{p}.investment_cost[({t}, {c.id})]", "must be >= 0")
            for u in inst.existing_units + inst.candidate_units:
                if (t, u.id) not in g.marginal_cost:
                    rep.add(f"{p}.marginal_cost", f"missing entry ({t}, {u.id})")
                elif g.marginal_cost[(t, u.id)] < 0:
                    rep.add(f"{p}.marginal_cost[({t}, {u.id})]", "must be >= 0")
            for d in inst.demands:
                if (t, d.id) not in g.peak_load:
                    rep.add(f"{p}.peak_load", f"missing entry ({t}, {d.id})")
                elif g.peak_load[(t, d.id)] < 0:
                    rep.add(f"{p}.peak_load[({t}, {d.id})]", "must be >= 0")
            for h in conds:
                for k in ks:
                    for r in inst.rival_units:
                        if (t, h, k, r.id) not in g.rival_offer_quantity:
                            rep.add(f"{p}.rival_offer_quantity",
                                    f"missing entry ({t}, {h}, {k}, {r.id})")
                        elif g.rival_offer_quantity[(t, h, k, r.id)] < 0:
                            rep.add(f"{p}.rival_offer_quantity[({t}, {h}, {k}, {r.id})]",
                                    "must be >= 0")
    gammas = [g.index for g in inst.long_term_scenarios]
    for s in inst.short_term_scenarios:
        p = f"short_term_scenarios[{s.index}]"
        for t in stages:
            for gamma in gammas:
                for r in inst.rival_units:
                    if (t, gamma, r.id) not in s.rival_offer_price:
                        rep.add(f"{p}.rival_offer_price", f"missing entry ({t}, {gamma}, {r.id})")
                    elif s.rival_offer_price[(t, gamma, r.id)] < 0:
                        rep.add(f"{p}.rival_offer_price[({t}, {gamma}, {r.id})]", "must be >= 0")
            for d in inst.demands:
                if (t, d.id) not in s.demand_utility:
                    rep.add(f"{p}.demand_utility", f"missing entry ({t}, {d.id})")
                elif s.demand_utility[(t, d.id)] < 0:
                    rep.add(f"{p}.demand_utility[({t}, {d.id})]", "must be >= 0")


def _check_tree(inst: Instance, rep: ValidationReport):
    stages = [s.index for s in inst.stages]
    gammas = sorted(g.index for g in inst.long_term_scenarios)
    tree = inst.tree
    for t in stages:
        if t not in tree.partitions:
            rep.add(f"tree.partitions[{t}]", "missing partition for stage")
            return
        covered = [g for cls in tree.partitions[t] for g in cls]
        if sorted(covered) != gammas:
            rep.add(f"tree.partitions[{t}]",
                    f"classes must partition the scenario set {gammas}, got {sorted(covered)}")
    extra = set(tree.partitions) - set(stages)
    for t in sorted(extra):
        rep.add(f"tree.partitions[{t}]", "partition for unknown stage")
    if stages and stages[0] in tree.partitions:
        root = tree.partitions[stages[0]]
        if len(root) != 1:
            rep.add(f"tree.partitions[{stages[0]}]",
                    "stage-1 partition must be the single root class")
    # nestedness: each stage-(t+1) class must lie inside one stage-t class
    for t, t_next in zip(stages, stages[1:]):
        if t not in tree.partitions or t_next not in tree.partitions:
            continue
        parents = [set(cls) for cls in tree.partitions[t]]
        for cls in tree.partitions[t_next]:
            if not any(set(cls) <= par for par in parents):
                rep.add(f"tree.partitions[{t_next}]",
                        f"partition not nested: class {sorted(cls)} splits across "
                        f"stage-{t} classes")


def combined_class(instance: Instance, t: int, gamma: int, k: int):
    """Members and normalised weights of the combined (long x short) class.

    At stage ``t`` the class of ``(gamma, k)`` is class_t(gamma) x K: the
    short-term tree merges every market scenario into each node.  Returned
    weights are pi_LT * pi_MS renormalised over the class.
    """
    if t not in instance.tree.partitions:
        raise KeyError(f"unknown stage {t}")
    instance.ms_by_index(k)  # raises on unknown k
    cls = instance.tree.class_of(t, gamma)
    members = []
    total = 0.0
    for g2 in sorted(cls):
        for s in sorted(instance.short_term_scenarios, key=lambda s: s.index):
            w = instance.lt_by_index(g2).probability * s.probability
            members.append(((g2, s.index), w))
            total += w
    return [(pair, w / total) for pair, w in members]
