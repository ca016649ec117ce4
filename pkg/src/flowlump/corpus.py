"""Pathway corpora and higher-order Markov state networks.

A corpus is a list of weighted multi-step pathways over physical nodes.
For a chosen Markov order m, the corpus is unrolled into a state network
whose nodes carry a context of the m-1 previously visited physical nodes,
so that m-th order dynamics become first-order dynamics between states.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np


class EmptyCorpusError(ValueError):
    """Raised when parsing yields no usable pathway line."""


@dataclass(frozen=True)
class PathRecord:
    """One weighted pathway: a sequence of physical node ids."""

    nodes: tuple[int, ...]
    weight: float
    group_key: str | None = None


@dataclass
class PathCorpus:
    """Weighted pathways plus the dense physical-node id space they use.

    ``names[i]`` is the display name of internal physical id ``i``; ids are
    dense 0..N-1 in first-seen (or declaration) order.
    """

    names: list[str]
    paths: list[PathRecord]
    rejects: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_physical(self) -> int:
        return len(self.names)

    @property
    def total_weight(self) -> float:
        return sum(p.weight for p in self.paths)

    def name_map(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.names)}

    def subset(self, keep: Iterable[int]) -> "PathCorpus":
        """Corpus restricted to the given path indices; id space unchanged."""
        keep = set(keep)
        return PathCorpus(self.names, [p for i, p in enumerate(self.paths) if i in keep])


def _unquote(token: str) -> str:
    if len(token) >= 2 and token[0] == '"' and token[-1] == '"':
        return token[1:-1]
    return token


def parse_paths(stream: TextIO | Iterable[str], grouped: bool = False) -> PathCorpus:
    """Parse pathway data from text.

    Two layouts are accepted:

    * headerless: each line is ``n1 n2 ... nk weight`` with k >= 2, node
      tokens taken as names;
    * directive form: an optional ``*Vertices`` block of ``id "name"`` lines
      followed by a ``*Paths`` block (``*GroupedPaths`` marks a leading
      group column, as does ``grouped=True``).

    Lines starting with ``#`` and blank lines are skipped.  Malformed lines
    are collected as (line number, reason) in ``corpus.rejects`` and are
    fatal only if no line parses at all.
    """
    names: list[str] = []
    by_key: dict[str, int] = {}
    declared = False
    section = "paths"
    paths: list[PathRecord] = []
    rejects: list[tuple[int, str]] = []

    def resolve(token: str, lineno: int) -> int | None:
        if token in by_key:
            return by_key[token]
        if declared:
            rejects.append((lineno, f"undeclared node id {token!r}"))
            return None
        by_key[token] = len(names)
        names.append(_unquote(token))
        return by_key[token]

    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("*"):
            head = line.split()[0].lower()
            if head == "*vertices":
                section = "vertices"
                declared = True
            elif head == "*paths":
                section = "paths"
            elif head == "*groupedpaths":
                section = "paths"
                grouped = True
            else:
                rejects.append((lineno, f"unknown directive {line.split()[0]!r}"))
            continue
        if section == "vertices":
            parts = line.split(None, 1)
            if len(parts) != 2:
                rejects.append((lineno, "vertex line needs `id name`"))
                continue
            key, name = parts
            if key in by_key:
                rejects.append((lineno, f"duplicate vertex id {key!r}"))
                continue
            by_key[key] = len(names)
            names.append(_unquote(name.strip()))
            continue

        tokens = line.split()
        group_key = None
        if grouped:
            if len(tokens) < 4:
                rejects.append((lineno, "grouped path line needs `group n1 n2 ... w`"))
                continue
            group_key, tokens = tokens[0], tokens[1:]
        if len(tokens) < 3:
            rejects.append((lineno, "path shorter than 2 nodes"))
            continue
        try:
            weight = float(tokens[-1])
        except ValueError:
            rejects.append((lineno, f"non-numeric weight {tokens[-1]!r}"))
            continue
        if not math.isfinite(weight) or weight <= 0:
            rejects.append((lineno, f"weight must be positive, got {tokens[-1]}"))
            continue
        node_ids = []
        ok = True
        for tok in tokens[:-1]:
            nid = resolve(tok, lineno)
            if nid is None:
                ok = False
                break
            node_ids.append(nid)
        if ok:
            paths.append(PathRecord(tuple(node_ids), weight, group_key))

    if not paths:
        raise EmptyCorpusError(
            f"no usable path lines ({len(rejects)} rejected)"
            + ("" if not rejects else f"; first: line {rejects[0][0]}: {rejects[0][1]}")
        )
    if rejects:
        warnings.warn(f"rejected {len(rejects)} malformed line(s), first at line {rejects[0][0]}: "
                      f"{rejects[0][1]}", stacklevel=2)
    return PathCorpus(names, paths, rejects)


def write_paths(corpus: PathCorpus, out: TextIO) -> None:
    """Serialize a corpus (internal dense ids; weights at 17 significant digits)."""
    out.write("*Vertices\n")
    for i, name in enumerate(corpus.names):
        out.write(f'{i} "{name}"\n')
    grouped = any(p.group_key is not None for p in corpus.paths)
    out.write("*GroupedPaths\n" if grouped else "*Paths\n")
    for p in corpus.paths:
        cols = [] if not grouped else [str(p.group_key)]
        cols += [str(n) for n in p.nodes] + [f"{p.weight:.17g}"]
        out.write(" ".join(cols) + "\n")


# ---------------------------------------------------------------------------
# State networks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateNode:
    """A state node: a physical node plus the context it was reached through.

    ``context`` is the tuple of the m-1 previously visited physical ids for a
    fixed-order-m network ( () for first order) and None for lumped blocks,
    whose members may have different contexts.  ``members`` is the set of
    original state ids represented by this node (singleton unless lumped).
    """

    id: int
    physical: int
    context: tuple[int, ...] | None
    members: frozenset[int]


class StateNetwork:
    """State nodes with weighted directed links.

    ``links[u][v]`` is w_uv; ``out_weight[u]`` is w_u = sum_v w_uv and is
    present (possibly 0.0) for every state, so dangling states are explicit.
    """

    def __init__(self, names: list[str], order: int):
        self.names = names
        self.order = order
        self.states: dict[int, StateNode] = {}
        self.links: dict[int, dict[int, float]] = {}
        self.out_weight: dict[int, float] = {}
        self.index: dict[tuple[tuple[int, ...], int], int] = {}

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def total_weight(self) -> float:
        return sum(self.out_weight.values())

    def add_state(self, physical: int, context: tuple[int, ...] | None = None,
                  members: frozenset[int] | None = None) -> int:
        key = (context, physical)
        if context is not None and key in self.index:
            return self.index[key]
        sid = len(self.states)
        self.states[sid] = StateNode(sid, physical, context,
                                     members if members is not None else frozenset((sid,)))
        self.links[sid] = {}
        self.out_weight[sid] = 0.0
        if context is not None:
            self.index[key] = sid
        return sid

    def add_link(self, u: int, v: int, w: float) -> None:
        row = self.links[u]
        row[v] = row.get(v, 0.0) + w
        self.out_weight[u] += w

    def transitions(self, u: int) -> dict[int, float] | None:
        """P_uv = w_uv / w_u over targets sorted by id; None marks a dangling state."""
        w_u = self.out_weight[u]
        if w_u <= 0.0:
            return None
        row = self.links[u]
        return {v: row[v] / w_u for v in sorted(row)}

    def physical_projection(self, u: int) -> dict[int, float] | None:
        """The transition distribution of u aggregated over target physical nodes."""
        w_u = self.out_weight[u]
        if w_u <= 0.0:
            return None
        agg: dict[int, float] = {}
        for v, w in self.links[u].items():
            j = self.states[v].physical
            agg[j] = agg.get(j, 0.0) + w
        return {j: agg[j] / w_u for j in sorted(agg)}

    def in_links(self) -> dict[int, dict[int, float]]:
        """Reverse adjacency (built on demand, not cached)."""
        rev: dict[int, dict[int, float]] = {u: {} for u in self.states}
        for u, row in self.links.items():
            for v, w in row.items():
                rev[v][u] = rev[v].get(u, 0.0) + w
        return rev

    def states_of_physical(self) -> dict[int, list[int]]:
        """State ids grouped by owning physical node, in id order."""
        groups: dict[int, list[int]] = {}
        for sid in sorted(self.states):
            groups.setdefault(self.states[sid].physical, []).append(sid)
        return groups


def build_state_network(corpus: PathCorpus, order: int) -> StateNetwork:
    """Unroll a corpus into the fixed-order-m state network.

    Every window X_{t-m},...,X_t of every path adds its path weight to the
    link (X_{t-m},...,X_{t-1}) -> (X_{t-m+1},...,X_t).  Target states exist
    even when they never occur as a source (dangling).  Paths shorter than
    m+1 nodes are skipped with a counted warning.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    net = StateNetwork(list(corpus.names), order)
    skipped = 0
    for path in corpus.paths:
        nodes = path.nodes
        if len(nodes) < order + 1:
            skipped += 1
            continue
        prev = net.add_state(nodes[order - 1], nodes[: order - 1])
        for t in range(order, len(nodes)):
            cur = net.add_state(nodes[t], nodes[t - order + 1: t])
            net.add_link(prev, cur, path.weight)
            prev = cur
    if net.n_states == 0:
        raise EmptyCorpusError(f"no path long enough for order {order} "
                               f"({skipped} skipped)")
    if skipped:
        warnings.warn(f"skipped {skipped} path(s) shorter than {order + 1} nodes",
                      stacklevel=2)
    return net


def visit_rates(net: StateNetwork, stationary: bool = False,
                tol: float = 1e-12, max_iter: int = 1000) -> dict[int, float]:
    """Visit rates p_u per state.

    Default is empirical: p_u = w_u / sum_x w_x, so dangling states get 0 and
    the rates sum to 1 over non-dangling states.  With ``stationary=True`` the
    rates solve pi = pi P by power iteration (L1 tolerance ``tol``, at most
    ``max_iter`` sweeps, renormalizing to absorb dangling leakage); a
    non-converged iteration is returned with a warning.
    """
    total = net.total_weight
    if total <= 0.0:
        raise ValueError("network carries no flow")
    if not stationary:
        return {u: net.out_weight[u] / total for u in net.states}

    ids = sorted(net.states)
    pos = {u: i for i, u in enumerate(ids)}
    src, dst, prob = [], [], []
    for u in ids:
        w_u = net.out_weight[u]
        if w_u <= 0.0:
            continue
        for v, w in net.links[u].items():
            src.append(pos[u])
            dst.append(pos[v])
            prob.append(w / w_u)
    src = np.asarray(src, dtype=np.intp)
    dst = np.asarray(dst, dtype=np.intp)
    prob = np.asarray(prob, dtype=np.float64)

    pi = np.full(len(ids), 1.0 / len(ids))
    converged = False
    for _ in range(max_iter):
        nxt = np.zeros_like(pi)
        np.add.at(nxt, dst, pi[src] * prob)
        s = nxt.sum()
        if s <= 0.0:
            break
        nxt /= s
        if np.abs(nxt - pi).sum() < tol:
            pi = nxt
            converged = True
            break
        pi = nxt
    if not converged:
        warnings.warn(f"stationary distribution not converged to {tol} "
                      f"within {max_iter} iterations; returning best iterate",
                      stacklevel=2)
    return {u: float(pi[pos[u]]) for u in ids}


# ---------------------------------------------------------------------------
# Serialization (fixed-order networks)
# ---------------------------------------------------------------------------

def write_snet(net: StateNetwork, out: TextIO) -> None:
    """Write a fixed-order state network; weights at 17 significant digits."""
    out.write("*Vertices\n")
    for i, name in enumerate(net.names):
        out.write(f'{i} "{name}"\n')
    out.write("*States\n")
    for sid in sorted(net.states):
        s = net.states[sid]
        ctx = " ".join(str(c) for c in s.context) if s.context is not None else ""
        out.write(f'{sid} {s.physical} "{ctx}"\n')
    out.write("*Links\n")
    for u in sorted(net.links):
        row = net.links[u]
        for v in sorted(row):
            out.write(f"{u} {v} {row[v]:.17g}\n")


def read_snet(stream: TextIO | Iterable[str]) -> StateNetwork:
    """Inverse of :func:`write_snet` (bit-exact on weights)."""
    names: list[str] = []
    staged: list[tuple[int, int, tuple[int, ...]]] = []
    links: list[tuple[int, int, float]] = []
    section = None
    for raw in stream:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("*"):
            section = line.split()[0].lower()
            continue
        if section == "*vertices":
            key, name = line.split(None, 1)
            assert int(key) == len(names), "vertex ids must be dense and ordered"
            names.append(_unquote(name.strip()))
        elif section == "*states":
            sid_s, phys_s, ctx_s = line.split(None, 2)
            ctx_s = _unquote(ctx_s.strip())
            ctx = tuple(int(c) for c in ctx_s.split()) if ctx_s else ()
            staged.append((int(sid_s), int(phys_s), ctx))
        elif section == "*links":
            u_s, v_s, w_s = line.split()
            links.append((int(u_s), int(v_s), float(w_s)))
        else:
            raise ValueError(f"line outside any *Vertices/*States/*Links block: {line!r}")

    order = 1 + max((len(ctx) for _, _, ctx in staged), default=0)
    net = StateNetwork(names, order)
    for sid, phys, ctx in sorted(staged):
        got = net.add_state(phys, ctx)
        assert got == sid, "state ids must be dense and ordered"
    for u, v, w in links:
        net.add_link(u, v, w)
    return net
