"""Stack-and-push task-and-motion planning lab.

An agent plans symbolic action sequences and gripper trajectories for
block stack-and-transport tasks in a 2D rigid-body simulation, learning
unknown block sizes with a particle filter over grounded simulated worlds
and learning an action-outcome model from task-completion experience.
"""

__version__ = "0.1.0"

from ._accel import NUMBA_ENABLED, backend_name  # noqa: F401
