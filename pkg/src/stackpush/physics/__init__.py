from . import kernels, scene, world  # noqa: F401
from .world import (  # noqa: F401
    BodyProps,
    ContinuousProperties,
    ConstructionError,
    ExecutionError,
    ExecutionOutcome,
    SimulationFault,
    World,
    build_world,
    canonical_props,
    execute,
    realize,
    replay_trace,
    save_trace,
    world_for_state,
)
