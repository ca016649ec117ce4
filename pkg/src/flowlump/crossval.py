"""k-fold cross-validation over pathway data to pick the model size.

For each fold, a training corpus is lumped to a target state count, the
resulting network is clustered, and the held-out paths are projected through
the training lumpings and module assignment to measure a validation code
length.  The schedule of state counts grows geometrically and stops once the
median validation code length has passed its minimum.
"""

from __future__ import annotations

import math
import statistics
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from .corpus import PathCorpus, StateNetwork, build_state_network, visit_rates
from .lumping import LumpDendrogram, SparseModel, build_all_dendrograms, expand_model
from .mapeq import ModuleMap, map_equation, optimize

DEFAULT_SCHEDULE_FACTOR = math.sqrt(2.0)


@dataclass
class FoldPlan:
    """Path-index to fold assignment; balanced within each group."""

    k: int
    fold_of: dict[int, int]

    def train_indices(self, fold: int) -> list[int]:
        return [i for i, f in sorted(self.fold_of.items()) if f != fold]

    def valid_indices(self, fold: int) -> list[int]:
        return [i for i, f in sorted(self.fold_of.items()) if f == fold]


def split_folds(corpus: PathCorpus, k: int, seed: int, grouped: bool = False) -> FoldPlan:
    """Shuffle paths within each group (seeded) and deal them round-robin.

    Ungrouped corpora treat each path as its own group, which reduces to a
    plain shuffled split.  Fold sizes within a group differ by at most one.
    """
    n = len(corpus.paths)
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    if k > n:
        raise ValueError(f"cannot split {n} path(s) into {k} folds")
    groups: dict[str, list[int]] = {}
    for i, p in enumerate(corpus.paths):
        key = p.group_key if (grouped and p.group_key is not None) else f"__path_{i}"
        groups.setdefault(key, []).append(i)
    rng = np.random.default_rng([seed, 0xF01D])
    fold_of: dict[int, int] = {}
    for key in sorted(groups):
        idx = groups[key]
        order = rng.permutation(len(idx))
        for pos, j in enumerate(order):
            fold_of[idx[int(j)]] = pos % k
    return FoldPlan(k, fold_of)


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def train_fold(train_corpus: PathCorpus, order: int, r: int, seed: int,
               trials: int = 3) -> tuple[SparseModel, ModuleMap]:
    """Lump the training corpus to r states and cluster the lumped network."""
    net = build_state_network(train_corpus, order)
    dendros = build_all_dendrograms(net)
    return _train_on(net, dendros, r, seed, trials)


def _train_on(net: StateNetwork, dendros: dict[int, LumpDendrogram], r: int,
              seed: int, trials: int) -> tuple[SparseModel, ModuleMap]:
    n_min = len(dendros)
    n_max = net.n_states
    r_eff = min(max(r, n_min), n_max)
    if r_eff != r:
        warnings.warn(f"target state count {r} clamped to {r_eff} "
                      f"(training network spans [{n_min}, {n_max}])", stacklevel=2)
    model = expand_model(net, dendros, r_eff)
    mmap = optimize(model.network, seed=seed, trials=trials)
    return model, mmap


@dataclass
class ValidationResult:
    bits: float
    dropped_weight: float
    projected_weight: float


def validate_fold(model: SparseModel, mmap: ModuleMap,
                  valid_corpus: PathCorpus) -> ValidationResult:
    """Code length of held-out flow through the training model and map.

    Validation state nodes are projected onto training lumped states by
    exact context match; unseen contexts fall back to the heaviest training
    lumped state of the same physical node; physical nodes absent from
    training drop their flow (reported as dropped weight).
    """
    source = model.source
    valid_net = build_state_network(valid_corpus, model.source.order)

    heaviest: dict[int, int] = {}
    for lumped_id in sorted(model.network.states):
        s = model.network.states[lumped_id]
        w = model.network.out_weight[lumped_id]
        cur = heaviest.get(s.physical)
        if cur is None or w > model.network.out_weight[cur]:
            heaviest[s.physical] = lumped_id

    def project(state_id: int) -> int | None:
        s = valid_net.states[state_id]
        orig = source.index.get((s.context, s.physical))
        if orig is not None:
            return model.partition[orig]
        return heaviest.get(s.physical)

    proj_cache = {u: project(u) for u in valid_net.states}
    lumped_links: dict[int, dict[int, float]] = {}
    dropped = 0.0
    projected = 0.0
    for u, row in valid_net.links.items():
        tu = proj_cache[u]
        for v, w in row.items():
            tv = proj_cache[v]
            if tu is None or tv is None:
                dropped += w
                continue
            projected += w
            target_row = lumped_links.setdefault(tu, {})
            target_row[tv] = target_row.get(tv, 0.0) + w
    if projected <= 0.0:
        raise ValueError("validation corpus contributes no projectable flow")

    vnet = StateNetwork(source.names, source.order)
    for lumped_id in sorted(model.network.states):
        s = model.network.states[lumped_id]
        sid = vnet.add_state(s.physical, None, members=s.members)
        assert sid == lumped_id
    for u, row in lumped_links.items():
        for v, w in row.items():
            vnet.add_link(u, v, w)
    rates = visit_rates(vnet)
    bits = map_equation(vnet, rates, mmap.assignment)
    return ValidationResult(bits, dropped, projected)


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------

@dataclass
class CVRow:
    r: int
    fold: int
    train_bits: float
    valid_bits: float
    dropped_weight: float


@dataclass
class CVReport:
    k: int
    seed: int
    order: int
    trials: int
    schedule_factor: float
    schedule: list[int] = field(default_factory=list)
    rows: list[CVRow] = field(default_factory=list)
    medians: dict[int, float] = field(default_factory=dict)
    selected_r: int = 0

    def rows_for(self, r: int) -> list[CVRow]:
        return [row for row in self.rows if row.r == r]


def default_schedule(n_first_order: int, n_total: int,
                     factor: float = DEFAULT_SCHEDULE_FACTOR) -> list[int]:
    """Geometric state-count schedule from N up to the full model size."""
    if factor <= 1.0:
        raise ValueError("schedule factor must exceed 1")
    schedule = []
    value = float(n_first_order)
    while True:
        r = min(int(math.ceil(value)), n_total)
        if not schedule or r > schedule[-1]:
            schedule.append(r)
        if r >= n_total:
            break
        value *= factor
    return schedule


class _FoldCache:
    """Per-fold training artifacts, built once and reused across the schedule."""

    def __init__(self, corpus: PathCorpus, plan: FoldPlan, order: int):
        self.corpus = corpus
        self.plan = plan
        self.order = order
        self._folds: dict[int, tuple[StateNetwork, dict[int, LumpDendrogram], PathCorpus]] = {}

    def get(self, fold: int):
        if fold not in self._folds:
            train = self.corpus.subset(self.plan.train_indices(fold))
            valid = self.corpus.subset(self.plan.valid_indices(fold))
            net = build_state_network(train, self.order)
            dendros = build_all_dendrograms(net)
            self._folds[fold] = (net, dendros, valid)
        return self._folds[fold]


_WORKER: _FoldCache | None = None
_WORKER_ARGS: tuple | None = None


def _init_worker(corpus: PathCorpus, plan: FoldPlan, order: int,
                 seed: int, trials: int) -> None:
    global _WORKER, _WORKER_ARGS
    _WORKER = _FoldCache(corpus, plan, order)
    _WORKER_ARGS = (seed, trials)


def _point_fold_job(args: tuple[int, int]) -> tuple[int, int, float, float, float, str]:
    r, fold = args
    assert _WORKER is not None and _WORKER_ARGS is not None
    seed, trials = _WORKER_ARGS
    return _run_point(_WORKER, r, fold, seed, trials)


def _run_point(cache: _FoldCache, r: int, fold: int, seed: int,
               trials: int) -> tuple[int, int, float, float, float, str]:
    try:
        net, dendros, valid = cache.get(fold)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model, mmap = _train_on(net, dendros, r, _derive_seed(seed, fold), trials)
            res = validate_fold(model, mmap, valid)
        return (r, fold, mmap.codelength_bits, res.bits, res.dropped_weight, "")
    except Exception as exc:  # noqa: BLE001 - per-fold failures are reported, not fatal
        return (r, fold, math.nan, math.nan, math.nan, f"{type(exc).__name__}: {exc}")


def sweep(corpus: PathCorpus, order: int = 2, k: int = 10, seed: int = 1,
          schedule: list[int] | None = None,
          schedule_factor: float = DEFAULT_SCHEDULE_FACTOR,
          trials: int = 3, grouped: bool = False, threads: int = 1,
          patience: int = 2) -> CVReport:
    """Cross-validate over a geometric schedule of state counts.

    Evaluates every fold at each schedule point, early-stopping after the
    median validation code length has exceeded the best seen for ``patience``
    consecutive points.  The selected r attains the minimum median; ties go
    to the smaller (sparser) model.
    """
    plan = split_folds(corpus, k, seed, grouped)
    full_net = build_state_network(corpus, order)
    n_first = len(full_net.states_of_physical())
    n_total = full_net.n_states
    if schedule is None:
        schedule = default_schedule(n_first, n_total, schedule_factor)
    else:
        if sorted(set(schedule)) != list(schedule):
            raise ValueError("schedule must be strictly increasing")
        if schedule[0] != n_first:
            raise ValueError(f"schedule must start at the first-order size {n_first}")

    report = CVReport(k, seed, order, trials, schedule_factor, schedule=[])
    cache = _FoldCache(corpus, plan, order)
    pool = None
    if threads > 1:
        pool = ProcessPoolExecutor(max_workers=threads, initializer=_init_worker,
                                   initargs=(corpus, plan, order, seed, trials))
    try:
        best_median = math.inf
        worse_streak = 0
        for r in schedule:
            jobs = [(r, fold) for fold in range(k)]
            if pool is not None:
                results = list(pool.map(_point_fold_job, jobs))
            else:
                results = [_run_point(cache, r, fold, seed, trials) for r, fold in jobs]
            results.sort(key=lambda t: (t[0], t[1]))
            valid_bits = []
            for r_out, fold, train_bits, v_bits, dropped, err in results:
                if err:
                    warnings.warn(f"fold {fold} failed at r={r_out}: {err}", stacklevel=2)
                    continue
                report.rows.append(CVRow(r_out, fold, train_bits, v_bits, dropped))
                valid_bits.append(v_bits)
            if len(valid_bits) < k - 2:
                raise RuntimeError(f"only {len(valid_bits)} of {k} folds valid at r={r}")
            report.schedule.append(r)
            med = statistics.median(valid_bits)
            report.medians[r] = med
            if med < best_median - 1e-12:
                best_median = med
                worse_streak = 0
            else:
                worse_streak += 1
                if worse_streak >= patience:
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    report.selected_r = min(report.medians, key=lambda r: (report.medians[r], r))
    return report


def write_cv_report(report: CVReport, out: TextIO) -> None:
    """Tab-separated rows plus a summary block; floats at 17 digits."""
    out.write(f"# flowlump cv: k={report.k} seed={report.seed} order={report.order} "
              f"trials={report.trials} factor={report.schedule_factor:.17g}\n")
    out.write("r\tfold\ttrain_bits\tvalid_bits\tdropped_weight\n")
    for row in report.rows:
        out.write(f"{row.r}\t{row.fold}\t{row.train_bits:.17g}\t"
                  f"{row.valid_bits:.17g}\t{row.dropped_weight:.17g}\n")
    out.write("# summary\n")
    for r in report.schedule:
        out.write(f"# median\t{r}\t{report.medians[r]:.17g}\n")
    out.write(f"# selected_r\t{report.selected_r}\n")
