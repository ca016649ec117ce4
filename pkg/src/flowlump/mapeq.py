"""Map equation scoring and module search with physical-node-aware coding.

The two-level code length of a partition is

    L = q H(Q) + sum_m p_m H(P^m)

with q_m the exit flow of module m, q = sum q_m, and P^m the within-module
codebook over the exit event plus the visit rates aggregated per physical
node: state nodes of one physical node assigned to the same module share a
single codeword whose rate is the sum of their visit rates.  The search is
Louvain-style with incremental deltas, module aggregation and fine-tuning.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .corpus import StateNetwork, visit_rates
from .lumping import _g

PASS_TOLERANCE = 1e-10
MOVE_EPS = 1e-15


@dataclass
class ModuleStats:
    """Flow aggregates of one module."""

    internal_flow: float = 0.0
    exit_flow: float = 0.0
    enter_flow: float = 0.0
    phys_rates: dict[int, float] = field(default_factory=dict)

    @property
    def rate_sum(self) -> float:
        return sum(self.phys_rates.values())

    @property
    def total_use(self) -> float:
        """p_m: exit flow plus aggregated visit rates."""
        return self.exit_flow + self.rate_sum


@dataclass
class ModuleMap:
    """Assignment of state nodes to modules plus derived flow quantities.

    ``assignment`` maps state id to a 1-based module id (relabeled by
    descending module flow).  ``submaps``, when present, nests a ModuleMap
    per module over that module's states; then ``codelength_bits`` is the
    hierarchical code length, otherwise the two-level one.
    """

    assignment: dict[int, int]
    modules: dict[int, ModuleStats]
    codelength_bits: float
    submaps: dict[int, "ModuleMap"] | None = None

    def module_of(self, state: int) -> int:
        return self.assignment[state]

    def state_paths(self) -> dict[int, tuple[int, ...]]:
        """State id -> module coordinates (without the leaf rank)."""
        paths = {}
        for u, m in self.assignment.items():
            coords = [m]
            node = self
            while node.submaps and m in node.submaps:
                node = node.submaps[m]
                m = node.assignment[u]
                coords.append(m)
            paths[u] = tuple(coords)
        return paths


def state_flows(net: StateNetwork, rates: dict[int, float]) -> dict[int, dict[int, float]]:
    """Per-step flow f(u->v) = p_u * P_uv; dangling states emit nothing."""
    flows: dict[int, dict[int, float]] = {}
    for u, row in net.links.items():
        w_u = net.out_weight[u]
        p_u = rates.get(u, 0.0)
        if w_u <= 0.0 or p_u <= 0.0:
            flows[u] = {}
            continue
        scale = p_u / w_u
        flows[u] = {v: w * scale for v, w in row.items()}
    return flows


def aggregate_modules(net: StateNetwork, rates: dict[int, float],
                      assignment: dict[int, int],
                      partial: bool = False) -> dict[int, ModuleStats]:
    """Module flow aggregates for an assignment.

    The assignment must cover every state that carries or receives flow;
    with ``partial=True`` unassigned states are treated as outside every
    module (their in-flows count as exits), which scores a sub-map embedded
    in a larger network.
    """
    mods: dict[int, ModuleStats] = {}

    def mod(m: int) -> ModuleStats:
        st = mods.get(m)
        if st is None:
            st = mods[m] = ModuleStats()
        return st

    for u in sorted(net.states):
        p_u = rates.get(u, 0.0)
        mu = assignment.get(u)
        if mu is None:
            if not partial and (p_u > 0.0 or net.out_weight[u] > 0.0):
                raise ValueError(f"assignment misses flow-carrying state {u}")
            continue
        st = mod(mu)
        if p_u > 0.0:
            phys = net.states[u].physical
            st.phys_rates[phys] = st.phys_rates.get(phys, 0.0) + p_u
        w_u = net.out_weight[u]
        if w_u <= 0.0 or p_u <= 0.0:
            continue
        scale = p_u / w_u
        for v, w in net.links[u].items():
            f = w * scale
            mv = assignment.get(v)
            if mv is None and not partial:
                raise ValueError(f"assignment misses flow-receiving state {v}")
            if mv == mu:
                st.internal_flow += f
            else:
                st.exit_flow += f
                if mv is not None:
                    mod(mv).enter_flow += f
    return mods


def codelength_from_stats(mods: dict[int, ModuleStats]) -> float:
    """Two-level code length from module aggregates, in bits/step."""
    q = 0.0
    exit_terms = 0.0
    use_terms = 0.0
    phys_terms = 0.0
    for m in sorted(mods):
        st = mods[m]
        q += st.exit_flow
        exit_terms += _g(st.exit_flow)
        use_terms += _g(st.total_use)
        phys_terms += sum(_g(r) for r in st.phys_rates.values())
    return _g(q) - 2.0 * exit_terms + use_terms - phys_terms


def map_equation(net: StateNetwork, rates: dict[int, float],
                 assignment: dict[int, int]) -> float:
    """Two-level map equation value of a partition, in bits/step."""
    return codelength_from_stats(aggregate_modules(net, rates, assignment))


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------

class _BlockGraph:
    """Working graph of the optimizer: blocks of states with explicit flows.

    ``out``/``inl`` hold inter-block flows (self-loops dropped; they can
    never exit a module), ``phys`` the per-physical visit rates of a block.
    """

    def __init__(self, n: int):
        self.n = n
        self.rate = [0.0] * n
        self.phys: list[dict[int, float]] = [dict() for _ in range(n)]
        self.out: list[dict[int, float]] = [dict() for _ in range(n)]
        self.inl: list[dict[int, float]] = [dict() for _ in range(n)]
        self.members: list[list[int]] = [[] for _ in range(n)]

    @classmethod
    def from_network(cls, net: StateNetwork, rates: dict[int, float]) -> "_BlockGraph":
        ids = sorted(net.states)
        pos = {u: i for i, u in enumerate(ids)}
        g = cls(len(ids))
        flows = state_flows(net, rates)
        for u in ids:
            i = pos[u]
            p_u = rates.get(u, 0.0)
            g.rate[i] = p_u
            if p_u > 0.0:
                g.phys[i][net.states[u].physical] = p_u
            g.members[i] = [u]
            for v, f in flows[u].items():
                if v == u:
                    continue
                j = pos[v]
                g.out[i][j] = g.out[i].get(j, 0.0) + f
                g.inl[j][i] = g.inl[j].get(i, 0.0) + f
        return g

    def aggregate(self, modules: list[int]) -> "_BlockGraph":
        """Collapse current modules into blocks (module labels must be dense)."""
        n = max(modules) + 1
        g = _BlockGraph(n)
        for b in range(self.n):
            m = modules[b]
            g.rate[m] += self.rate[b]
            for i, r in self.phys[b].items():
                g.phys[m][i] = g.phys[m].get(i, 0.0) + r
            g.members[m].extend(self.members[b])
        for b in range(self.n):
            mb = modules[b]
            for t, f in self.out[b].items():
                mt = modules[t]
                if mt == mb:
                    continue
                g.out[mb][mt] = g.out[mb].get(mt, 0.0) + f
                g.inl[mt][mb] = g.inl[mt].get(mb, 0.0) + f
        for m in range(n):
            g.members[m].sort()
        return g


class _ModState:
    """Module bookkeeping with incremental code-length deltas."""

    def __init__(self, graph: _BlockGraph, modules: list[int], debug_every: int = 0):
        self.g = graph
        self.modules = list(modules)
        self.exit: dict[int, float] = {}
        self.rates: dict[int, float] = {}
        self.phys: dict[int, dict[int, float]] = {}
        self.size: dict[int, int] = {}
        for b in range(graph.n):
            m = self.modules[b]
            self.size[m] = self.size.get(m, 0) + 1
            self.rates[m] = self.rates.get(m, 0.0) + graph.rate[b]
            pm = self.phys.setdefault(m, {})
            for i, r in graph.phys[b].items():
                pm[i] = pm.get(i, 0.0) + r
            self.exit.setdefault(m, 0.0)
        for b in range(graph.n):
            mb = self.modules[b]
            for t, f in graph.out[b].items():
                if self.modules[t] != mb:
                    self.exit[mb] += f
        self._next_id = max(self.modules, default=-1) + 1
        self.L = self._full_codelength()
        self._debug_every = debug_every
        self._moves = 0

    def _full_codelength(self) -> float:
        q = 0.0
        val = 0.0
        for m in sorted(self.exit):
            ex = self.exit[m]
            q += ex
            val += -2.0 * _g(ex) + _g(ex + self.rates.get(m, 0.0))
            val -= sum(_g(r) for r in self.phys.get(m, {}).values())
        return _g(q) + val

    def _move_delta(self, b: int, src: int, dst: int,
                    to_src: float, from_src: float,
                    to_dst: float, from_dst: float,
                    out_total: float) -> float:
        g = self.g
        ex_s, ex_d = self.exit[src], self.exit.get(dst, 0.0)
        ex_s_new = ex_s - (out_total - to_src) + from_src
        ex_d_new = ex_d + (out_total - to_dst) - from_dst
        q = sum(self.exit.values())
        q_new = q + (ex_s_new - ex_s) + (ex_d_new - ex_d)
        rb = g.rate[b]
        p_s, p_d = ex_s + self.rates[src], ex_d + self.rates.get(dst, 0.0)
        p_s_new = ex_s_new + self.rates[src] - rb
        p_d_new = ex_d_new + self.rates.get(dst, 0.0) + rb
        dL = (_g(q_new) - _g(q)
              - 2.0 * (_g(ex_s_new) - _g(ex_s) + _g(ex_d_new) - _g(ex_d))
              + _g(p_s_new) - _g(p_s) + _g(p_d_new) - _g(p_d))
        ps, pd = self.phys[src], self.phys.get(dst, {})
        for i, r in g.phys[b].items():
            rs = ps.get(i, 0.0)
            rd = pd.get(i, 0.0)
            dL -= _g(rs - r) - _g(rs) + _g(rd + r) - _g(rd)
        return dL

    def best_move(self, b: int, allow_empty: bool) -> tuple[float, int]:
        g = self.g
        src = self.modules[b]
        to_mod: dict[int, float] = {}
        from_mod: dict[int, float] = {}
        out_total = 0.0
        for t, f in g.out[b].items():
            m = self.modules[t]
            to_mod[m] = to_mod.get(m, 0.0) + f
            out_total += f
        for s, f in g.inl[b].items():
            m = self.modules[s]
            from_mod[m] = from_mod.get(m, 0.0) + f
        candidates = set(to_mod) | set(from_mod)
        candidates.discard(src)
        if allow_empty and self.size[src] > 1:
            candidates.add(self._next_id)
        best_dL, best = 0.0, src
        to_src = to_mod.get(src, 0.0)
        from_src = from_mod.get(src, 0.0)
        for dst in sorted(candidates):
            dL = self._move_delta(b, src, dst, to_src, from_src,
                                  to_mod.get(dst, 0.0), from_mod.get(dst, 0.0),
                                  out_total)
            if dL < best_dL - 0.0:
                best_dL, best = dL, dst
        return best_dL, best

    def apply_move(self, b: int, dst: int) -> None:
        g = self.g
        src = self.modules[b]
        to_mod: dict[int, float] = {}
        from_mod: dict[int, float] = {}
        out_total = 0.0
        for t, f in g.out[b].items():
            m = self.modules[t]
            to_mod[m] = to_mod.get(m, 0.0) + f
            out_total += f
        for s, f in g.inl[b].items():
            m = self.modules[s]
            from_mod[m] = from_mod.get(m, 0.0) + f
        dL = self._move_delta(b, src, dst, to_mod.get(src, 0.0), from_mod.get(src, 0.0),
                              to_mod.get(dst, 0.0), from_mod.get(dst, 0.0), out_total)
        self.exit[src] = self.exit[src] - (out_total - to_mod.get(src, 0.0)) + from_mod.get(src, 0.0)
        if dst not in self.exit:
            self.exit[dst] = 0.0
            self.rates[dst] = 0.0
            self.phys[dst] = {}
            self.size[dst] = 0
            self._next_id = max(self._next_id, dst + 1)
        self.exit[dst] = self.exit[dst] + (out_total - to_mod.get(dst, 0.0)) - from_mod.get(dst, 0.0)
        self.rates[src] -= g.rate[b]
        self.rates[dst] += g.rate[b]
        ps, pd = self.phys[src], self.phys[dst]
        for i, r in g.phys[b].items():
            left = ps.get(i, 0.0) - r
            if left <= MOVE_EPS:
                ps.pop(i, None)
            else:
                ps[i] = left
            pd[i] = pd.get(i, 0.0) + r
        self.size[src] -= 1
        self.size[dst] += 1
        self.modules[b] = dst
        if self.size[src] == 0:
            del self.exit[src], self.rates[src], self.phys[src], self.size[src]
        else:
            # subtraction residue from an exact removal
            if abs(self.exit[src]) < MOVE_EPS:
                self.exit[src] = 0.0
            if abs(self.rates[src]) < MOVE_EPS:
                self.rates[src] = 0.0
        self.L += dL
        self._moves += 1
        if self._debug_every and self._moves % self._debug_every == 0:
            full = self._full_codelength()
            assert abs(full - self.L) < 1e-9, f"incremental drift {abs(full - self.L):g}"
            self.L = full

    def move_passes(self, rng: np.random.Generator, allow_empty: bool) -> float:
        """Single-block moves until one full pass gains less than the tolerance."""
        total = 0.0
        while True:
            gain = 0.0
            for b in rng.permutation(self.g.n):
                dL, dst = self.best_move(int(b), allow_empty)
                if dL < -MOVE_EPS and dst != self.modules[b]:
                    self.apply_move(int(b), dst)
                    gain -= dL
            total += gain
            if gain < PASS_TOLERANCE:
                break
        return total

    def compact_modules(self) -> list[int]:
        """Relabel module ids densely in order of first appearance."""
        remap: dict[int, int] = {}
        out = []
        for m in self.modules:
            if m not in remap:
                remap[m] = len(remap)
            out.append(remap[m])
        return out


def _search_graph(graph: _BlockGraph, rng: np.random.Generator,
                  init: list[int] | None = None, debug_every: int = 0) -> tuple[list[int], float]:
    """One search run on a block graph: moves, aggregation recursion, fine-tune."""
    state = _ModState(graph, init if init is not None else list(range(graph.n)),
                      debug_every=debug_every)
    state.move_passes(rng, allow_empty=init is not None)
    modules = state.compact_modules()
    n_modules = max(modules) + 1
    if n_modules in (graph.n, 1):
        return modules, state.L
    agg = graph.aggregate(modules)
    sub, _ = _search_graph(agg, rng, debug_every=debug_every)
    composed = [sub[m] for m in modules]
    tuned = _ModState(graph, composed, debug_every=debug_every)
    tuned.move_passes(rng, allow_empty=True)
    return tuned.compact_modules(), tuned.L


def _relabel_by_flow(net: StateNetwork, rates: dict[int, float],
                     assignment: dict[int, int]) -> tuple[dict[int, int], dict[int, ModuleStats]]:
    """1-based module ids by descending module flow; returns assignment + stats."""
    stats = aggregate_modules(net, rates, assignment)
    order = sorted(stats, key=lambda m: (-stats[m].rate_sum, -stats[m].exit_flow, m))
    remap = {old: new for new, old in enumerate(order, start=1)}
    new_assignment = {u: remap[m] for u, m in assignment.items()}
    new_stats = {remap[m]: stats[m] for m in stats}
    return new_assignment, new_stats


def optimize(net: StateNetwork, seed: int = 1, trials: int = 10,
             rates: dict[int, float] | None = None,
             debug_check: bool = False) -> ModuleMap:
    """Search for the state-to-module assignment minimizing the map equation.

    Runs ``trials`` independent seeded searches (shuffled visit orders) and
    keeps the best; ties go to the lowest trial index.  The returned
    code length is recomputed from scratch, so it equals
    :func:`map_equation` on the returned assignment exactly.
    """
    if not net.states:
        raise ValueError("cannot optimize an empty network")
    if rates is None:
        rates = visit_rates(net)
    graph = _BlockGraph.from_network(net, rates)
    ids = sorted(net.states)
    debug_every = 10_000 if debug_check else 0

    best: tuple[float, int, list[int]] | None = None
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        prev, _ = _search_graph(graph, rng, debug_every=debug_every)
        for round_idx in range(1, 50):
            rng2 = np.random.default_rng([seed, t, round_idx])
            nxt, _ = _search_graph(graph, rng2, init=prev, debug_every=debug_every)
            if nxt == prev:
                break
            prev = nxt
        assignment = {u: prev[i] for i, u in enumerate(ids)}
        L = map_equation(net, rates, assignment)
        if best is None or L < best[0] - 1e-13:
            best = (L, t, prev)
    assert best is not None
    assignment = {u: best[2][i] for i, u in enumerate(ids)}
    assignment, stats = _relabel_by_flow(net, rates, assignment)
    return ModuleMap(assignment, stats, codelength_from_stats(stats))


# ---------------------------------------------------------------------------
# Hierarchy
# ---------------------------------------------------------------------------

def hierarchical_codelength(net: StateNetwork, rates: dict[int, float],
                            top: ModuleMap) -> float:
    """Exact hierarchical code length of a possibly nested module map.

    Sub-module index codebooks encode entering each child (enter flow) and
    leaving the parent (exit flow); leaf codebooks encode the exit event and
    the per-physical aggregated visit rates.
    """
    flows = state_flows(net, rates)
    paths = top.state_paths()

    exit_f: dict[tuple[int, ...], float] = {}
    enter_f: dict[tuple[int, ...], float] = {}
    for u, row in flows.items():
        pu = paths.get(u, ())
        for v, f in row.items():
            pv = paths.get(v, ())
            depth = 0
            while depth < len(pu) and depth < len(pv) and pu[depth] == pv[depth]:
                depth += 1
            for d in range(depth, len(pu)):
                key = pu[: d + 1]
                exit_f[key] = exit_f.get(key, 0.0) + f
            for d in range(depth, len(pv)):
                key = pv[: d + 1]
                enter_f[key] = enter_f.get(key, 0.0) + f

    def walk(node: ModuleMap, prefix: tuple[int, ...]) -> float:
        bits = 0.0
        children = sorted(set(node.assignment.values()))
        if prefix == ():
            q = sum(exit_f.get((m,), 0.0) for m in children)
            bits += _g(q) - sum(_g(exit_f.get((m,), 0.0)) for m in children)
        for m in children:
            key = prefix + (m,)
            sub = node.submaps.get(m) if node.submaps else None
            if sub is not None:
                kids = sorted(set(sub.assignment.values()))
                ex = exit_f.get(key, 0.0)
                enters = [enter_f.get(key + (c,), 0.0) for c in kids]
                bits += _g(ex + sum(enters)) - _g(ex) - sum(_g(e) for e in enters)
                bits += walk(sub, key)
            else:
                ex = exit_f.get(key, 0.0)
                phys: dict[int, float] = {}
                for u, mu in node.assignment.items():
                    if mu != m:
                        continue
                    p_u = rates.get(u, 0.0)
                    if p_u > 0.0:
                        i = net.states[u].physical
                        phys[i] = phys.get(i, 0.0) + p_u
                rsum = sum(phys.values())
                bits += _g(ex + rsum) - _g(ex) - sum(_g(r) for r in phys.values())
        return bits

    return walk(top, ())


def _induced_graph(net: StateNetwork, rates: dict[int, float],
                   states: list[int]) -> tuple[_BlockGraph, list[int]]:
    ids = sorted(states)
    pos = {u: i for i, u in enumerate(ids)}
    g = _BlockGraph(len(ids))
    flows = state_flows(net, rates)
    for u in ids:
        i = pos[u]
        p_u = rates.get(u, 0.0)
        g.rate[i] = p_u
        if p_u > 0.0:
            g.phys[i][net.states[u].physical] = p_u
        g.members[i] = [u]
        for v, f in flows[u].items():
            j = pos.get(v)
            if j is None or v == u:
                continue
            g.out[i][j] = g.out[i].get(j, 0.0) + f
            g.inl[j][i] = g.inl[j].get(i, 0.0) + f
    return g, ids


def hierarchical(net: StateNetwork, top: ModuleMap, seed: int = 1,
                 trials: int = 4, max_depth: int = 5,
                 rates: dict[int, float] | None = None) -> ModuleMap:
    """Recursively split modules, keeping a sub-level only when it shortens
    the hierarchical code length."""
    if rates is None:
        rates = visit_rates(net)
    result = ModuleMap(dict(top.assignment), top.modules, top.codelength_bits, submaps={})
    current_L = hierarchical_codelength(net, rates, result)

    def try_split(node: ModuleMap, states_of: dict[int, list[int]],
                  prefix: tuple[int, ...]) -> None:
        nonlocal current_L
        for m in sorted(states_of):
            states = states_of[m]
            if len(states) < 2 or len(prefix) + 1 >= max_depth:
                continue
            graph, ids = _induced_graph(net, rates, states)
            best_mods: list[int] | None = None
            best_sub_L = math.inf
            for t in range(trials):
                rng = np.random.default_rng([seed, *prefix, m, t])
                mods, L = _search_graph(graph, rng)
                if L < best_sub_L - 1e-13:
                    best_sub_L, best_mods = L, mods
            assert best_mods is not None
            if max(best_mods) == 0:
                continue
            sub_assignment = {u: best_mods[i] + 1 for i, u in enumerate(ids)}
            sub_stats = aggregate_modules(net, rates, sub_assignment, partial=True)
            candidate = ModuleMap(sub_assignment, sub_stats,
                                  codelength_from_stats(sub_stats), submaps={})
            if node.submaps is None:
                node.submaps = {}
            node.submaps[m] = candidate
            trial_L = hierarchical_codelength(net, rates, result)
            if trial_L < current_L - PASS_TOLERANCE:
                current_L = trial_L
                sub_states: dict[int, list[int]] = {}
                for u, sm in sub_assignment.items():
                    sub_states.setdefault(sm, []).append(u)
                try_split(candidate, sub_states, prefix + (m,))
            else:
                del node.submaps[m]

    top_states: dict[int, list[int]] = {}
    for u, m in result.assignment.items():
        top_states.setdefault(m, []).append(u)
    try_split(result, top_states, ())
    result.codelength_bits = hierarchical_codelength(net, rates, result)
    return result


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------

def write_tree(mmap: ModuleMap, net: StateNetwork, rates: dict[int, float],
               out: TextIO) -> None:
    """Tree lines ``path flow "physicalName" stateId physicalId``.

    The path is colon-separated module coordinates ending in the state's
    flow rank inside its deepest module; flows carry 12 significant digits.
    """
    paths = mmap.state_paths()
    by_module: dict[tuple[int, ...], list[int]] = {}
    for u, coords in paths.items():
        by_module.setdefault(coords, []).append(u)
    out.write(f"# codelength {mmap.codelength_bits:.12g} bits\n")
    for coords in sorted(by_module):
        members = by_module[coords]
        members.sort(key=lambda u: (-rates.get(u, 0.0), u))
        for rank, u in enumerate(members, start=1):
            phys = net.states[u].physical
            path = ":".join(str(c) for c in coords + (rank,))
            out.write(f'{path} {rates.get(u, 0.0):.12g} "{net.names[phys]}" {u} {phys}\n')


def read_tree(stream: TextIO | Iterable[str]) -> dict[int, tuple[int, ...]]:
    """State id -> module coordinates (leaf rank stripped)."""
    assignment: dict[int, tuple[int, ...]] = {}
    for raw in stream:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        path_s, _, rest = line.partition(" ")
        parts = rest.rsplit(" ", 2)
        state_id = int(parts[1])
        coords = tuple(int(c) for c in path_s.split(":"))
        assignment[state_id] = coords[:-1]
    return assignment


def map_export(mmap: ModuleMap, net: StateNetwork, rates: dict[int, float]) -> dict:
    """JSON-ready description: modules, aggregated physical flows, module links."""
    flows = state_flows(net, rates)
    inter: dict[tuple[int, int], float] = {}
    for u, row in flows.items():
        mu = mmap.assignment[u]
        for v, f in row.items():
            mv = mmap.assignment[v]
            if mu != mv:
                key = (mu, mv)
                inter[key] = inter.get(key, 0.0) + f
    modules = []
    for m in sorted(mmap.modules):
        st = mmap.modules[m]
        modules.append({
            "id": m,
            "flow": st.rate_sum,
            "exit_flow": st.exit_flow,
            "enter_flow": st.enter_flow,
            "internal_flow": st.internal_flow,
            "physical": [
                {"id": i, "name": net.names[i], "flow": r}
                for i, r in sorted(st.phys_rates.items(), key=lambda kv: (-kv[1], kv[0]))
            ],
        })
    return {
        "codelength": mmap.codelength_bits,
        "num_states": len(mmap.assignment),
        "num_physical": len(net.names),
        "modules": modules,
        "links": [
            {"source": a, "target": b, "flow": f}
            for (a, b), f in sorted(inter.items())
        ],
    }


def write_map_json(mmap: ModuleMap, net: StateNetwork, rates: dict[int, float],
                   out: TextIO) -> None:
    json.dump(map_export(mmap, net, rates), out, indent=1, sort_keys=True)
    out.write("\n")
