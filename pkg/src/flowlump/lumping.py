"""Minimum-information-loss lumping of state nodes into sparse Markov chains.

State nodes of one physical node are merged greedily, each step picking the
pair whose merge costs the least entropy rate on the space of physical
targets.  The full merge sequence per physical node (a dendrogram) lets any
model size be materialized later by undoing merges in order of decreasing
cost across all physical nodes.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, TextIO

from .corpus import StateNetwork, StateNode

# Above this many states per physical node the pair search is restricted to
# the 32 nearest candidates by out-link Jaccard similarity.
EXACT_PAIR_LIMIT = 64
JACCARD_CANDIDATES = 32

_LOG2 = math.log(2.0)


def _g(x: float) -> float:
    """x * log2(x) with g(0) = 0."""
    return x * math.log(x) / _LOG2 if x > 0.0 else 0.0


def kl_divergence(p: dict, q: dict) -> float:
    """Kullback-Leibler divergence D(p || q) in bits; 0*log(0/.) = 0.

    Both arguments must be normalized and support(p) must lie inside
    support(q).
    """
    for dist, label in ((p, "p"), (q, "q")):
        s = sum(dist.values())
        if abs(s - 1.0) > 1e-9:
            raise ValueError(f"{label} is not normalized (sums to {s!r})")
    bits = 0.0
    for x, px in p.items():
        if px <= 0.0:
            continue
        qx = q.get(x, 0.0)
        if qx <= 0.0:
            raise ValueError(f"support violation: p({x!r}) > 0 but q({x!r}) = 0")
        bits += px * math.log(px / qx) / _LOG2
    return max(bits, 0.0)


def entropy_bits(dist: Iterable[float]) -> float:
    """Shannon entropy of a normalized distribution, in bits."""
    return -sum(_g(p) for p in dist if p > 0.0)


def _merge_cost(wa: float, ta: dict[int, float], wb: float, tb: dict[int, float]) -> float:
    """Un-normalized lumping objective w_a*D(P_a||M) + w_b*D(P_b||M).

    ``ta``/``tb`` hold raw out-weights per target; the identity used is
    (wa+wb)*H(M) - wa*H(P_a) - wb*H(P_b), which only touches shared targets.
    """
    if wa <= 0.0 or wb <= 0.0:
        return 0.0
    cost = _g(wa + wb) - _g(wa) - _g(wb)
    small, big = (ta, tb) if len(ta) <= len(tb) else (tb, ta)
    for x, a in small.items():
        b = big.get(x)
        if b is not None:
            cost += _g(a) + _g(b) - _g(a + b)
    return max(cost, 0.0)


def physical_out_weights(net: StateNetwork) -> dict[int, dict[int, float]]:
    """Per state, raw out-weight aggregated by target physical node."""
    proj: dict[int, dict[int, float]] = {}
    for u, row in net.links.items():
        agg: dict[int, float] = {}
        states = net.states
        for v, w in row.items():
            j = states[v].physical
            agg[j] = agg.get(j, 0.0) + w
        proj[u] = agg
    return proj


def lump_delta(u: int, v: int, net: StateNetwork,
               proj: dict[int, dict[int, float]] | None = None,
               total_weight: float | None = None) -> float:
    """Entropy-rate increase, in bits/step, of lumping states u and v.

    The distributions compared are over physical targets; the raw objective
    is divided by the total link weight so deltas are comparable across
    physical nodes.  A dangling member contributes nothing.
    """
    if u == v:
        raise ValueError("cannot lump a state with itself")
    if net.states[u].physical != net.states[v].physical:
        raise ValueError("lumping candidates must share a physical node")
    if proj is None:
        proj = {}
        for s in (u, v):
            dist = net.physical_projection(s)
            w = net.out_weight[s]
            proj[s] = {} if dist is None else {j: p * w for j, p in dist.items()}
    if total_weight is None:
        total_weight = net.total_weight
    return _merge_cost(net.out_weight[u], proj[u], net.out_weight[v], proj[v]) / total_weight


@dataclass
class LumpDendrogram:
    """Greedy merge sequence of one physical node's state nodes.

    ``merges`` runs from k original states down to one: (left, right, delta)
    with left < right, new block id = left, and delta the entropy-rate
    increase in bits/step.  Block ids are the minimum original state id of
    the block.
    """

    physical: int
    leaves: tuple[int, ...]
    merges: list[tuple[int, int, float]]


def _jaccard_candidates(targets: dict[int, dict[int, float]], ids: list[int]) -> set[tuple[int, int]]:
    """Per state the 32 nearest others by Jaccard similarity of target sets."""
    by_target: dict[int, list[int]] = {}
    for s in ids:
        for x in targets[s]:
            by_target.setdefault(x, []).append(s)
    inter: dict[tuple[int, int], int] = {}
    for members in by_target.values():
        for i, a in enumerate(members):
            for b in members[i + 1:]:
                key = (a, b) if a < b else (b, a)
                inter[key] = inter.get(key, 0) + 1
    best: dict[int, list[tuple[float, int]]] = {s: [] for s in ids}
    for (a, b), n in inter.items():
        union = len(targets[a]) + len(targets[b]) - n
        sim = n / union if union else 0.0
        best[a].append((-sim, b))
        best[b].append((-sim, a))
    pairs: set[tuple[int, int]] = set()
    for s, cands in best.items():
        cands.sort()
        for _, other in cands[:JACCARD_CANDIDATES]:
            pairs.add((s, other) if s < other else (other, s))
    return pairs


def build_dendrogram(net: StateNetwork, physical: int,
                     state_ids: list[int] | None = None,
                     proj: dict[int, dict[int, float]] | None = None,
                     total_weight: float | None = None,
                     exact: bool | None = None) -> LumpDendrogram:
    """Greedily lump one physical node's states down to a single block.

    At each step the pair with minimum entropy-rate delta is merged (ties
    broken by lowest (min id, max id) pair); dangling states are folded
    together first at zero cost.  The candidate frontier is kept in a lazily
    invalidated heap; above EXACT_PAIR_LIMIT states the initial candidates
    are pruned to Jaccard neighbors unless ``exact=True``.
    """
    if state_ids is None:
        state_ids = net.states_of_physical().get(physical, [])
    if not state_ids:
        raise ValueError(f"physical node {physical} owns no state nodes")
    if proj is None:
        proj = physical_out_weights(net)
    if total_weight is None:
        total_weight = net.total_weight
    ids = sorted(state_ids)

    weight = {s: net.out_weight[s] for s in ids}
    targets = {s: dict(proj.get(s, {})) for s in ids}
    merges: list[tuple[int, int, float]] = []
    alive = set(ids)

    # Dangling states first, folded into the lowest-id dangling block.
    dangling = [s for s in ids if weight[s] <= 0.0]
    for s in dangling[1:]:
        merges.append((dangling[0], s, 0.0))
        alive.discard(s)
    if len(alive) <= 1:
        return LumpDendrogram(physical, tuple(ids), merges)

    if exact is None:
        exact = len(alive) <= EXACT_PAIR_LIMIT
    live = sorted(alive)
    if exact:
        pairs = {(a, b) for i, a in enumerate(live) for b in live[i + 1:]}
    else:
        pairs = _jaccard_candidates(targets, live)

    version = {s: 0 for s in ids}
    partners: dict[int, set[int]] = {s: set() for s in live}
    heap: list[tuple[float, int, int, int, int]] = []

    def push(a: int, b: int) -> None:
        if a > b:
            a, b = b, a
        delta = _merge_cost(weight[a], targets[a], weight[b], targets[b]) / total_weight
        heap.append((delta, a, b, version[a], version[b]))
        partners[a].add(b)
        partners[b].add(a)

    for a, b in sorted(pairs):
        push(a, b)
    heapq.heapify(heap)

    while len(alive) > 1:
        if not heap:
            # Pruned candidate graph ran dry; fall back to all remaining pairs.
            live = sorted(alive)
            for i, a in enumerate(live):
                for b in live[i + 1:]:
                    heapq.heappush(heap, (
                        _merge_cost(weight[a], targets[a], weight[b], targets[b]) / total_weight,
                        a, b, version[a], version[b]))
            continue
        delta, a, b, va, vb = heapq.heappop(heap)
        if a not in alive or b not in alive or version[a] != va or version[b] != vb:
            continue
        merges.append((a, b, delta))
        ta, tb = targets[a], targets[b]
        if len(tb) > len(ta):
            ta, tb = tb, ta
        for x, w in tb.items():
            ta[x] = ta.get(x, 0.0) + w
        targets[a] = ta
        targets.pop(b, None)
        weight[a] += weight[b]
        alive.discard(b)
        version[a] += 1
        touched = (partners[a] | partners.pop(b, set())) & alive
        touched.discard(a)
        partners[a] = set()
        for x in sorted(touched):
            partners[x].discard(b)
            delta_x = _merge_cost(weight[a], targets[a], weight[x], targets[x]) / total_weight
            lo, hi = (a, x) if a < x else (x, a)
            heapq.heappush(heap, (delta_x, lo, hi, version[lo], version[hi]))
            partners[a].add(x)
            partners[x].add(a)

    return LumpDendrogram(physical, tuple(ids), merges)


def build_all_dendrograms(net: StateNetwork, exact: bool | None = None) -> dict[int, LumpDendrogram]:
    """One dendrogram per physical node that owns state nodes."""
    proj = physical_out_weights(net)
    total = net.total_weight
    groups = net.states_of_physical()
    return {phys: build_dendrogram(net, phys, group, proj, total, exact)
            for phys, group in sorted(groups.items())}


# ---------------------------------------------------------------------------
# Sparse models
# ---------------------------------------------------------------------------

@dataclass
class SparseModel:
    """A partition of original state nodes plus the lumped network it induces."""

    partition: dict[int, int]
    r: int
    network: StateNetwork
    entropy_rate_bits: float
    source: StateNetwork

    def blocks(self) -> dict[int, list[int]]:
        """Lumped id -> sorted original member ids."""
        out: dict[int, list[int]] = {}
        for orig, lumped in self.partition.items():
            out.setdefault(lumped, []).append(orig)
        for members in out.values():
            members.sort()
        return out


def lumped_network(partition: dict[int, int], net: StateNetwork) -> StateNetwork:
    """Apply a partition: link weights are summed exactly, never renormalized.

    Lumped ids must be dense 0..r-1; each block must stay within one physical
    node.  Singleton blocks keep their context, larger blocks drop it.
    """
    blocks: dict[int, list[int]] = {}
    for orig, lumped in partition.items():
        blocks.setdefault(lumped, []).append(orig)
    out = StateNetwork(net.names, net.order)
    for lumped in range(len(blocks)):
        members = sorted(blocks[lumped])
        phys = {net.states[m].physical for m in members}
        if len(phys) != 1:
            raise ValueError(f"block {lumped} spans physical nodes {sorted(phys)}")
        context = net.states[members[0]].context if len(members) == 1 else None
        sid = out.add_state(phys.pop(), context, members=frozenset(members))
        assert sid == lumped
    for u, row in net.links.items():
        lu = partition[u]
        for v, w in row.items():
            out.add_link(lu, partition[v], w)
    return out


def entropy_rate(net: StateNetwork) -> float:
    """Expected bits/step of the next-physical-node distribution.

    H = sum_u (w_u / W) * H(physical projection of u); dangling states
    contribute nothing and W sums the non-dangling out-weights.
    """
    total = net.total_weight
    if total <= 0.0:
        warnings.warn("all states dangling; entropy rate is 0", stacklevel=2)
        return 0.0
    states = net.states
    bits = 0.0
    for u, row in net.links.items():
        w_u = net.out_weight[u]
        if w_u <= 0.0:
            continue
        agg: dict[int, float] = {}
        for v, w in row.items():
            j = states[v].physical
            agg[j] = agg.get(j, 0.0) + w
        bits += _g(w_u) - sum(_g(a) for a in agg.values())
    return bits / total


def expand_model(net: StateNetwork, dendrograms: dict[int, LumpDendrogram], r: int) -> SparseModel:
    """Materialize the sparse model with exactly r lumped states.

    Starting from one block per physical node, merges are undone across all
    dendrograms in order of decreasing delta (ties to the lower physical id),
    respecting reverse merge order within each physical node.
    """
    n_min = len(dendrograms)
    n_max = sum(len(d.leaves) for d in dendrograms.values())
    if not n_min <= r <= n_max:
        raise ValueError(f"target state count {r} outside [{n_min}, {n_max}]")

    undone = {phys: 0 for phys in dendrograms}
    heap = []
    for phys in sorted(dendrograms):
        merges = dendrograms[phys].merges
        if merges:
            heap.append((-merges[-1][2], phys))
    heapq.heapify(heap)
    for _ in range(r - n_min):
        neg_delta, phys = heapq.heappop(heap)
        undone[phys] += 1
        nxt = len(dendrograms[phys].merges) - 1 - undone[phys]
        if nxt >= 0:
            heapq.heappush(heap, (-dendrograms[phys].merges[nxt][2], phys))

    members: dict[int, list[int]] = {}
    for phys, dendro in dendrograms.items():
        blocks = {leaf: [leaf] for leaf in dendro.leaves}
        stop = len(dendro.merges) - undone[phys]
        for a, b, _ in dendro.merges[:stop]:
            blocks[a].extend(blocks.pop(b))
        members.update(blocks)

    partition: dict[int, int] = {}
    for lumped, root in enumerate(sorted(members)):
        for orig in members[root]:
            partition[orig] = lumped
    network = lumped_network(partition, net)
    return SparseModel(partition, r, network, entropy_rate(network), net)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def write_dendro(dendrograms: dict[int, LumpDendrogram], out: TextIO) -> None:
    """One ``*Dendrogram`` block per physical node; deltas at 17 digits."""
    for phys in sorted(dendrograms):
        d = dendrograms[phys]
        out.write(f"*Dendrogram {phys}\n")
        out.write("leaves " + " ".join(str(s) for s in d.leaves) + "\n")
        for a, b, delta in d.merges:
            out.write(f"merge {a} {b} {delta:.17g}\n")


def read_dendro(stream: TextIO | Iterable[str]) -> dict[int, LumpDendrogram]:
    """Inverse of :func:`write_dendro`."""
    dendrograms: dict[int, LumpDendrogram] = {}
    phys = None
    leaves: tuple[int, ...] = ()
    merges: list[tuple[int, int, float]] = []

    def flush():
        if phys is not None:
            dendrograms[phys] = LumpDendrogram(phys, leaves, merges)

    for raw in stream:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("*Dendrogram"):
            flush()
            phys = int(line.split()[1])
            leaves, merges = (), []
        elif line.startswith("leaves"):
            leaves = tuple(int(t) for t in line.split()[1:])
        elif line.startswith("merge"):
            _, a, b, delta = line.split()
            merges.append((int(a), int(b), float(delta)))
        else:
            raise ValueError(f"unrecognized dendrogram line: {line!r}")
    flush()
    return dendrograms
