"""Map evaluation: flow persistence, overlap tables, state allocation.

All metrics are pure functions over a network, visit rates and a module
assignment; module labels only need to be hashable, so they work both with
flat integer assignments and with tree-path coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, TextIO

from .corpus import StateNetwork, visit_rates
from .lumping import SparseModel


@dataclass
class PersistenceReport:
    """Per-module fraction of flow that stays in its module for one step."""

    per_module: dict[Hashable, float]
    overall: float
    basis: str = ""
    notes: list[str] = field(default_factory=list)


def flow_persistence(net: StateNetwork, assignment: dict[int, Hashable],
                     rates: dict[int, float] | None = None,
                     basis: str = "") -> PersistenceReport:
    """Module flow persistence of an assignment.

    persistence_m = sum_{u,v in m} p_u P_uv / sum_{u in m} p_u, with dangling
    states excluded from the denominator (they take no outgoing step).  The
    overall value is the flow-weighted mean over modules.
    """
    if rates is None:
        rates = visit_rates(net)
    internal: dict[Hashable, float] = {}
    movers: dict[Hashable, float] = {}
    for u in sorted(net.states):
        p_u = rates.get(u, 0.0)
        w_u = net.out_weight[u]
        if p_u <= 0.0 or w_u <= 0.0:
            continue
        m = assignment[u]
        movers[m] = movers.get(m, 0.0) + p_u
        scale = p_u / w_u
        stay = 0.0
        for v, w in net.links[u].items():
            if assignment[v] == m:
                stay += w * scale
        internal[m] = internal.get(m, 0.0) + stay
    notes = []
    empty = sorted({str(m) for m in set(assignment.values()) - set(movers)})
    if empty:
        notes.append(f"omitted {len(empty)} module(s) without outgoing flow: "
                     + ", ".join(empty))
    per_module = {m: internal.get(m, 0.0) / movers[m] for m in movers}
    total_movers = sum(movers.values())
    overall = sum(internal.values()) / total_movers if total_movers > 0.0 else 0.0
    return PersistenceReport(per_module, overall, basis, notes)


@dataclass
class ExternalPersistenceReport:
    fraction: float
    coverage: float
    covered_flow: float
    total_flow: float
    unmatched: list[str] = field(default_factory=list)


def read_classification(stream: Iterable[str], names: list[str]) -> tuple[dict[int, set[str]], list[str]]:
    """Ingest ``name<TAB>category`` lines (repeated lines for multi-membership).

    Returns categories keyed by physical id plus the unmatched names.
    """
    by_name = {name: i for i, name in enumerate(names)}
    categories: dict[int, set[str]] = {}
    unmatched: list[str] = []
    for raw in stream:
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        name, _, cat = line.partition("\t")
        if not cat:
            raise ValueError(f"classification line needs `name<TAB>category`: {line!r}")
        phys = by_name.get(name)
        if phys is None:
            unmatched.append(name)
            continue
        categories.setdefault(phys, set()).add(cat.strip())
    return categories, sorted(set(unmatched))


def external_persistence(net: StateNetwork, categories: dict[int, set[str]],
                         rates: dict[int, float] | None = None) -> ExternalPersistenceReport:
    """Persistence under an external multi-membership classification.

    A step persists if the category sets of its endpoint physical nodes
    intersect; only steps with both endpoints classified count, and the
    covered fraction of flow is reported alongside.
    """
    if rates is None:
        rates = visit_rates(net)
    total = covered = persisted = 0.0
    for u in sorted(net.states):
        p_u = rates.get(u, 0.0)
        w_u = net.out_weight[u]
        if p_u <= 0.0 or w_u <= 0.0:
            continue
        cats_u = categories.get(net.states[u].physical)
        scale = p_u / w_u
        for v, w in net.links[u].items():
            f = w * scale
            total += f
            if not cats_u:
                continue
            cats_v = categories.get(net.states[v].physical)
            if not cats_v:
                continue
            covered += f
            if cats_u & cats_v:
                persisted += f
    if covered <= 0.0:
        raise ValueError("classification covers no flow")
    return ExternalPersistenceReport(persisted / covered, covered / total if total else 0.0,
                                     covered, total)


@dataclass
class OverlapTable:
    """Rows (physical id, module, fraction of the node's flow in that module)."""

    rows: list[tuple[int, Hashable, float]]

    def by_physical(self) -> dict[int, dict[Hashable, float]]:
        out: dict[int, dict[Hashable, float]] = {}
        for phys, module, frac in self.rows:
            out.setdefault(phys, {})[module] = frac
        return out

    def modules_of(self, phys: int) -> list[Hashable]:
        return [m for p, m, _ in self.rows if p == phys]


def overlap_table(model: SparseModel | StateNetwork, assignment: dict[int, Hashable],
                  threshold: float = 0.0,
                  rates: dict[int, float] | None = None) -> OverlapTable:
    """How each physical node's flow distributes over modules.

    The fraction of a row is the visit rate of the node's states assigned to
    that module, normalized by the node's total rate.  Rows below
    ``threshold`` are suppressed (the paper-style table uses 0.01).
    """
    net = model.network if isinstance(model, SparseModel) else model
    if rates is None:
        rates = visit_rates(net)
    mass: dict[int, dict[Hashable, float]] = {}
    for u in sorted(net.states):
        p_u = rates.get(u, 0.0)
        if p_u <= 0.0:
            continue
        phys_mass = mass.setdefault(net.states[u].physical, {})
        m = assignment[u]
        phys_mass[m] = phys_mass.get(m, 0.0) + p_u
    rows: list[tuple[int, Hashable, float]] = []
    for phys in sorted(mass):
        total = sum(mass[phys].values())
        entries = sorted(mass[phys].items(), key=lambda kv: (-kv[1], str(kv[0])))
        for module, m in entries:
            frac = m / total
            if frac >= threshold:
                rows.append((phys, module, frac))
    return OverlapTable(rows)


def state_allocation(models: Iterable[SparseModel]) -> list[tuple[int, int, int]]:
    """Rows (r, physical id, lumped state count) for allocation curves."""
    rows: list[tuple[int, int, int]] = []
    for model in models:
        counts: dict[int, int] = {}
        for sid in model.network.states:
            phys = model.network.states[sid].physical
            counts[phys] = counts.get(phys, 0) + 1
        for phys in sorted(counts):
            rows.append((model.r, phys, counts[phys]))
    rows.sort()
    return rows


# ---------------------------------------------------------------------------
# Report writers
# ---------------------------------------------------------------------------

def write_persistence_tsv(report: PersistenceReport, out: TextIO) -> None:
    out.write(f"# basis: {report.basis}\n")
    for note in report.notes:
        out.write(f"# note: {note}\n")
    out.write("module\tpersistence\n")
    for m in sorted(report.per_module, key=str):
        out.write(f"{m}\t{report.per_module[m]:.12g}\n")
    out.write(f"overall\t{report.overall:.12g}\n")


def write_overlap_tsv(table: OverlapTable, names: list[str], out: TextIO) -> None:
    out.write("physical\tname\tmodule\tfraction\n")
    for phys, module, frac in table.rows:
        out.write(f'{phys}\t"{names[phys]}"\t{module}\t{frac:.12g}\n')


def write_allocation_tsv(rows: list[tuple[int, int, int]], names: list[str],
                         out: TextIO) -> None:
    out.write("r\tphysical\tname\tstates\n")
    for r, phys, count in rows:
        out.write(f'{r}\t{phys}\t"{names[phys]}"\t{count}\n')
