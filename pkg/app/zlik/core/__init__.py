from app.zlik.core.types import (
    Action,
    HISTORY_CHANNELS,
    RelativeStep,
    State,
    STATE_FIELDS,
    Trajectory,
)
from app.zlik.core.frames import (
    integrate_history,
    relative_history_array,
    relative_step,
    relative_steps,
    relative_targets_array,
    to_relative_history,
    to_relative_targets,
    to_world,
    wrap_angle,
    wrap_angles,
)

__all__ = [
    "Action",
    "HISTORY_CHANNELS",
    "RelativeStep",
    "State",
    "STATE_FIELDS",
    "Trajectory",
    "integrate_history",
    "relative_history_array",
    "relative_step",
    "relative_steps",
    "relative_targets_array",
    "to_relative_history",
    "to_relative_targets",
    "to_world",
    "wrap_angle",
    "wrap_angles",
]
