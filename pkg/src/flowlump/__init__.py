"""flowlump: sparse Markov chain flow maps for multi-step pathway data.

Pipeline: parse weighted pathways, unroll them into higher-order state
networks, lump state nodes per physical node by minimum entropy-rate loss,
pick the model size by cross-validated code length, and map the flows into
overlapping modules with a physical-node-aware map equation.
"""

from .corpus import (
    EmptyCorpusError,
    PathCorpus,
    PathRecord,
    StateNetwork,
    StateNode,
    build_state_network,
    parse_paths,
    read_snet,
    visit_rates,
    write_paths,
    write_snet,
)
from .crossval import (
    CVReport,
    FoldPlan,
    split_folds,
    sweep,
    train_fold,
    validate_fold,
    write_cv_report,
)
from .lumping import (
    LumpDendrogram,
    SparseModel,
    build_all_dendrograms,
    build_dendrogram,
    entropy_rate,
    expand_model,
    kl_divergence,
    lump_delta,
    lumped_network,
    read_dendro,
    write_dendro,
)
from .mapeq import (
    ModuleMap,
    ModuleStats,
    hierarchical,
    hierarchical_codelength,
    map_equation,
    optimize,
    read_tree,
    write_tree,
)
from .metrics import (
    OverlapTable,
    PersistenceReport,
    external_persistence,
    flow_persistence,
    overlap_table,
    read_classification,
    state_allocation,
)
from .synth import generate as generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "EmptyCorpusError", "PathCorpus", "PathRecord", "StateNetwork", "StateNode",
    "build_state_network", "parse_paths", "read_snet", "visit_rates",
    "write_paths", "write_snet",
    "LumpDendrogram", "SparseModel", "build_all_dendrograms", "build_dendrogram",
    "entropy_rate", "expand_model", "kl_divergence", "lump_delta",
    "lumped_network", "read_dendro", "write_dendro",
    "ModuleMap", "ModuleStats", "hierarchical", "hierarchical_codelength",
    "map_equation", "optimize", "read_tree", "write_tree",
    "OverlapTable", "PersistenceReport", "external_persistence",
    "flow_persistence", "overlap_table", "read_classification", "state_allocation",
    "CVReport", "FoldPlan", "split_folds", "sweep", "train_fold",
    "validate_fold", "write_cv_report",
    "generate_synthetic",
]
