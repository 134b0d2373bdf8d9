"""Gain feedback that counters detector backaction.

The controller compares the monitored state with the backaction-free
target evolution on the same grid and modulates the drive amplitude,

    g -> (1 - f * dphi) * g,

where dphi is the phase mismatch in the y-z plane of the Bloch sphere, the
plane in which the transverse drive rotates the state. A trajectory that
has drifted ahead of the target gets a weaker drive, one that lags gets a
stronger one. The comparison uses the state at step start, one step of
causal delay, and the reference is shared read-only across trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _engine
from .qubit import DensityMatrix, DriveProtocol, bloch_coordinates, density_from_bloch

__all__ = [
    "FeedbackParams",
    "ReferenceTrajectory",
    "GainController",
    "reference_trajectory",
    "phase_error",
    "controlled_gain",
    "make_controller",
]

DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class FeedbackParams:
    f: float
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.f < 0:
            raise ValueError("feedback strength must be nonnegative")


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Backaction-free target evolution on the integration grid."""

    bloch: np.ndarray  # (steps+1, 3)

    @property
    def states(self) -> list[DensityMatrix]:
        return [density_from_bloch(*r) for r in self.bloch]

    def __len__(self) -> int:
        return self.bloch.shape[0]


def reference_trajectory(
    init: DensityMatrix, protocol: DriveProtocol, steps: int
) -> ReferenceTrajectory:
    """Deterministic evolution with the detector decoupled and no noise."""
    r0 = np.array(bloch_coordinates(init))
    return ReferenceTrajectory(_engine.unitary_bloch_series(r0, protocol, steps))


def _plane_phase(y: float, z: float) -> float | None:
    if math.hypot(y, z) < DEGENERATE_NORM:
        return None
    return math.atan2(y, z)


def phase_error(actual: DensityMatrix, desired: DensityMatrix) -> float:
    """Phase mismatch in the y-z Bloch plane, wrapped to (-pi, pi].

    Returns 0 when either state has negligible projection onto the plane.
    """
    _, ya, za = bloch_coordinates(actual)
    _, yd, zd = bloch_coordinates(desired)
    pa = _plane_phase(ya, za)
    pd = _plane_phase(yd, zd)
    if pa is None or pd is None:
        return 0.0
    w = math.remainder(pa - pd, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


def controlled_gain(g: float, fp: FeedbackParams, dphi: float) -> float:
    """(1 - f * dphi) * g; no clipping."""
    if not fp.enabled:
        return g
    return (1.0 - fp.f * dphi) * g


@dataclass(frozen=True)
class GainController:
    """Closed-loop hook consumed by the trajectory integrator."""

    strength: float
    reference_bloch: np.ndarray

    def gain_at(self, k: int, rho: DensityMatrix, g: float) -> float:
        ref = density_from_bloch(*self.reference_bloch[k])
        return controlled_gain(g, FeedbackParams(self.strength), phase_error(rho, ref))


def make_controller(
    params: FeedbackParams,
    init: DensityMatrix,
    protocol: DriveProtocol,
    steps: int,
) -> GainController | None:
    """Build the per-run controller, or None when feedback is disabled."""
    if not params.enabled or params.f == 0.0:
        return None
    ref = reference_trajectory(init, protocol, steps)
    return GainController(strength=params.f, reference_bloch=ref.bloch)
