"""Flow-state types and body-frame velocity conversions.

The body frame puts x_b along the vehicle axis (pointing into the oncoming
flow at zero incidence) and y_b in the pitch plane. A flow state is either
described by (speed, angle of attack) or by the equivalent in-plane
body-referenced components (vx, vy):

    vx = speed * cos(aoa),   vy = speed * sin(aoa),   aoa = atan(vy / vx)

Positive angle of attack tilts the velocity toward +y_b. Angles are degrees
everywhere in public APIs; radians never leak out. The convention is only
valid for |aoa| < 90 deg (vx > 0), which covers every condition this package
generates (|aoa| <= 9 deg).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import ConfigError


class EstimationTarget(enum.Enum):
    """What the regressor predicts: a scalar speed or both body components."""

    SCALAR_SPEED = "scalar_speed"
    BODY_COMPONENTS = "body_components"

    @property
    def k(self) -> int:
        """Output dimensionality (1 for scalar speed, 2 for components)."""
        return 1 if self is EstimationTarget.SCALAR_SPEED else 2


@dataclass(frozen=True)
class FlowState:
    """Freestream speed magnitude (m/s) and angle of attack (degrees)."""

    speed: float
    aoa: float

    def __post_init__(self):
        if self.speed < 0:
            raise ConfigError(f"speed must be >= 0, got {self.speed}")
        if not -90.0 < self.aoa < 90.0:
            raise ConfigError(f"aoa must lie in (-90, 90) deg, got {self.aoa}")


@dataclass(frozen=True)
class BodyVelocity:
    """In-plane body-referenced velocity components (m/s)."""

    vx: float
    vy: float


def body_components(state: FlowState) -> BodyVelocity:
    """Convert (speed, aoa) to body-frame components.

    Raises ConfigError for |aoa| >= 90 deg, where the single-branch inverse
    tangent convention breaks down (FlowState already enforces this).
    """
    a = math.radians(state.aoa)
    return BodyVelocity(vx=state.speed * math.cos(a), vy=state.speed * math.sin(a))


def aoa_from_components(v: BodyVelocity) -> float:
    """Recover angle of attack in degrees from body components.

    Requires vx > 0: vx <= 0 means the state is outside the convention's
    validity (|aoa| >= 90 deg) and is rejected.
    """
    if v.vx <= 0:
        raise ConfigError(f"aoa recovery requires vx > 0, got vx={v.vx}")
    return math.degrees(math.atan(v.vy / v.vx))


def speed_from_components(v: BodyVelocity) -> float:
    """Euclidean speed magnitude from body components."""
    return math.hypot(v.vx, v.vy)
