"""Synthetic pathway generator with planted second-order hub structure.

Walkers move inside modules of non-hub nodes and occasionally visit shared
hub nodes; a step leaving a hub returns to the walker's origin module with
probability ``return_prob`` and otherwise jumps to a uniformly random other
module.  At ``return_prob = 1/n_modules`` the process is effectively
first-order; near 1 it plants the strong return flow that splits hub state
nodes by origin.  All randomness comes from one seed through numpy's PCG64
generator.
"""

from __future__ import annotations

import numpy as np

from .corpus import PathCorpus, PathRecord


def generate(n_nodes: int = 50, n_modules: int = 4, n_hubs: int = 4,
             return_prob: float = 0.9, hub_rate: float = 0.3,
             path_length: int = 3, n_paths: int = 10000,
             seed: int = 1) -> PathCorpus:
    """Simulate unit-weight paths of ``path_length`` nodes from the planted process.

    Non-hub ids 0..N-H-1 are split round-robin over ``n_modules`` modules;
    the last ``n_hubs`` ids are shared hubs reachable from every module.
    """
    if n_modules < 2:
        raise ValueError("need at least 2 modules")
    if not 0.0 <= return_prob <= 1.0:
        raise ValueError(f"return probability {return_prob} outside [0, 1]")
    if not 0.0 <= hub_rate < 1.0:
        raise ValueError(f"hub rate {hub_rate} outside [0, 1)")
    if n_hubs == 0 and hub_rate > 0.0:
        raise ValueError("hub rate > 0 requires hubs")
    if path_length < 2:
        raise ValueError("paths need at least 2 nodes")
    n_regular = n_nodes - n_hubs
    if n_regular < 2 * n_modules:
        raise ValueError(f"{n_nodes} nodes leave {n_regular} non-hubs; "
                         f"need at least 2 per module")

    module_nodes: list[list[int]] = [[] for _ in range(n_modules)]
    module_of: dict[int, int] = {}
    for i in range(n_regular):
        module_nodes[i % n_modules].append(i)
        module_of[i] = i % n_modules
    hubs = list(range(n_regular, n_nodes))

    names = [f"n{module_of[i]}_{i}" for i in range(n_regular)]
    names += [f"hub{j}" for j in range(n_hubs)]

    def within(module: int, exclude: int | None, rng: np.random.Generator) -> int:
        members = module_nodes[module]
        if exclude is None or exclude not in members:
            return members[int(rng.integers(len(members)))]
        # draw among the first len-1 slots and map a collision to the last
        pick = members[int(rng.integers(len(members) - 1))]
        return members[-1] if pick == exclude else pick

    rng = np.random.default_rng(seed)
    paths = []
    for _ in range(n_paths):
        origin = int(rng.integers(n_modules))
        current = within(origin, None, rng)
        path = [current]
        at_hub = False
        for _ in range(path_length - 1):
            if at_hub:
                if rng.random() >= return_prob:
                    shift = 1 + int(rng.integers(n_modules - 1))
                    origin = (origin + shift) % n_modules
                current = within(origin, None, rng)
                at_hub = False
            else:
                origin = module_of[current]
                if n_hubs and rng.random() < hub_rate:
                    current = hubs[int(rng.integers(n_hubs))]
                    at_hub = True
                else:
                    current = within(origin, current, rng)
            path.append(current)
        paths.append(PathRecord(tuple(path), 1.0))
    return PathCorpus(names, paths)


def hub_return_frequency(corpus: PathCorpus, n_modules: int, n_hubs: int) -> float:
    """Empirical fraction of 3-windows x -> hub -> y with y in x's module.

    Works on corpora from :func:`generate`, where hubs occupy the last
    ``n_hubs`` ids and module membership of non-hubs is id mod n_modules.
    """
    n_regular = len(corpus.names) - n_hubs
    through = returned = 0.0
    for p in corpus.paths:
        for a, b, c in zip(p.nodes, p.nodes[1:], p.nodes[2:]):
            if b >= n_regular and a < n_regular and c < n_regular:
                through += p.weight
                if a % n_modules == c % n_modules:
                    returned += p.weight
    if through == 0.0:
        raise ValueError("no hub-through windows in corpus")
    return returned / through
