"""Population-based incomplete DCOP solvers on a deterministic message-passing simulator."""

from .model import (
    DcopInstance,
    GlobalCapConstraint,
    InstanceError,
    brute_force_optimum,
    delta_local_cost,
    evaluate_global_cost,
    four_agent_example,
    load_instance,
    local_cost,
    save_instance,
    validate_instance,
)
from .engine import Engine, ProtocolError, RunTrace, build_engine, run_phases
from .pseudotree import PseudoTree, build_bfs_tree, tree_height

__version__ = "0.1.0"
