"""Exact two-level algebra: states, operators, spectra, thermal states.

A qubit density matrix is stored as one real population and one complex
coherence,

    rho = [[rho11, rho12], [conj(rho12), 1 - rho11]],

so the trace is 1 by construction. Hermitian operators are stored as four
real Pauli coefficients. The coherence-aligned realization is used
throughout: an operator A = (c0, cx, cy, cz) has matrix

    A = [[c0 + cz, cx + i*cy], [cx - i*cy, c0 - cz]],

which makes tr(rho A) = c0 + cx*x + cy*y + cz*z with the Bloch coordinates
(x, y, z) = (2 Re rho12, 2 Im rho12, 2 rho11 - 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DensityMatrix",
    "QubitOperator",
    "DriveProtocol",
    "SpectralDecomposition",
    "ThermalSpec",
    "drive_amplitude",
    "hamiltonian_at",
    "eigendecompose",
    "thermal_state",
    "expectation",
    "bloch_coordinates",
    "density_from_bloch",
    "free_energy_difference",
    "von_neumann_entropy",
]


@dataclass(frozen=True)
class DensityMatrix:
    """Conditional qubit state: population of |1> and the (1,2) coherence."""

    rho11: float
    rho12: complex

    def validate(self, atol: float = 1e-12) -> None:
        """Raise ValueError unless the state is physical within atol."""
        if not (-atol <= self.rho11 <= 1.0 + atol):
            raise ValueError(f"rho11 = {self.rho11} outside [0, 1]")
        excess = abs(self.rho12) ** 2 - self.rho11 * (1.0 - self.rho11)
        if excess > atol:
            raise ValueError(f"coherence violates positivity by {excess:.3e}")

    def purity(self) -> float:
        x, y, z = bloch_coordinates(self)
        return 0.5 * (1.0 + x * x + y * y + z * z)

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.rho11, self.rho12], [np.conj(self.rho12), 1.0 - self.rho11]],
            dtype=complex,
        )


@dataclass(frozen=True)
class QubitOperator:
    """Hermitian 2x2 operator in Pauli coefficients (c0, cx, cy, cz)."""

    c0: float
    cx: float
    cy: float
    cz: float

    def __add__(self, other: "QubitOperator") -> "QubitOperator":
        return QubitOperator(
            self.c0 + other.c0, self.cx + other.cx, self.cy + other.cy, self.cz + other.cz
        )

    def __sub__(self, other: "QubitOperator") -> "QubitOperator":
        return QubitOperator(
            self.c0 - other.c0, self.cx - other.cx, self.cy - other.cy, self.cz - other.cz
        )

    def scaled(self, a: float) -> "QubitOperator":
        return QubitOperator(a * self.c0, a * self.cx, a * self.cy, a * self.cz)

    def vector_norm(self) -> float:
        """Norm of the traceless part."""
        return math.sqrt(self.cx**2 + self.cy**2 + self.cz**2)

    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.c0 + self.cz, self.cx + 1j * self.cy],
                [self.cx - 1j * self.cy, self.c0 - self.cz],
            ],
            dtype=complex,
        )


IDENTITY = QubitOperator(1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class DriveProtocol:
    """Hyperbolic-secant ramp of the transverse drive.

    lambda(t) = g / cosh(nu * (1 - t/tau)) rises monotonically from
    g/cosh(nu) at t = 0 to g at t = tau. nu = 0 gives a constant drive.
    The longitudinal splitting epsilon is static.
    """

    g: float
    nu: float
    tau: float
    epsilon: float
    hbar: float = 1.0

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.g < 0 or self.nu < 0:
            raise ValueError("g and nu must be nonnegative")
        if self.hbar <= 0:
            raise ValueError("hbar must be positive")


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues and rank-1 projectors of a traceless Hermitian operator."""

    e_minus: float
    e_plus: float
    proj_minus: QubitOperator
    proj_plus: QubitOperator
    degenerate: bool = False

    def axis(self) -> np.ndarray:
        """Unit Bloch vector of the e_plus eigenstate."""
        p = self.proj_plus
        return np.array([2 * p.cx, 2 * p.cy, 2 * p.cz])


@dataclass(frozen=True)
class ThermalSpec:
    """Inverse temperature; beta = math.inf selects the ground state."""

    beta: float

    def __post_init__(self) -> None:
        if not (self.beta >= 0):
            raise ValueError("beta must be nonnegative")


# fp slack for grid endpoints landing a few ulp outside [0, tau]
_TIME_SLACK = 1e-9


def drive_amplitude(t: float, p: DriveProtocol) -> float:
    """Drive amplitude lambda(t); t must lie in [0, tau]."""
    if t < -_TIME_SLACK * p.tau or t > p.tau * (1.0 + _TIME_SLACK):
        raise ValueError(f"t = {t} outside protocol window [0, {p.tau}]")
    return p.g / math.cosh(p.nu * (1.0 - t / p.tau))


def hamiltonian_at(t: float, p: DriveProtocol) -> QubitOperator:
    """H(t) = epsilon*sigma_z + lambda(t)*sigma_x."""
    return QubitOperator(0.0, drive_amplitude(t, p), 0.0, p.epsilon)


def eigendecompose(h: QubitOperator, degeneracy_tol: float = 0.0) -> SpectralDecomposition:
    """Spectral decomposition of a traceless Hermitian operator.

    The degenerate case (vanishing Pauli vector) returns the computational
    basis projectors with the degenerate flag set, so downstream projective
    bookkeeping stays total.
    """
    if abs(h.c0) > 1e-14:
        raise ValueError("eigendecompose expects a traceless operator (c0 = 0)")
    n = h.vector_norm()
    if n <= degeneracy_tol:
        return SpectralDecomposition(
            e_minus=0.0,
            e_plus=0.0,
            proj_minus=QubitOperator(0.5, 0.0, 0.0, -0.5),
            proj_plus=QubitOperator(0.5, 0.0, 0.0, 0.5),
            degenerate=True,
        )
    nx, ny, nz = h.cx / n, h.cy / n, h.cz / n
    proj_plus = QubitOperator(0.5, 0.5 * nx, 0.5 * ny, 0.5 * nz)
    proj_minus = QubitOperator(0.5, -0.5 * nx, -0.5 * ny, -0.5 * nz)
    return SpectralDecomposition(-n, n, proj_minus, proj_plus)


def thermal_state(spec: ThermalSpec, h: QubitOperator) -> DensityMatrix:
    """Gibbs state exp(-beta h)/Z: thermal populations in the eigenbasis of h."""
    sd = eigendecompose(h - QubitOperator(h.c0, 0.0, 0.0, 0.0))
    n = sd.e_plus
    if n == 0.0:
        return DensityMatrix(0.5, 0j)
    if math.isinf(spec.beta):
        r = -1.0
    else:
        r = -math.tanh(spec.beta * n)
    ax = sd.axis()
    return density_from_bloch(r * ax[0], r * ax[1], r * ax[2])


def expectation(rho: DensityMatrix, a: QubitOperator) -> float:
    """tr(rho A), real by Hermiticity."""
    x, y, z = bloch_coordinates(rho)
    return a.c0 + a.cx * x + a.cy * y + a.cz * z


def bloch_coordinates(rho: DensityMatrix) -> tuple[float, float, float]:
    return (2.0 * rho.rho12.real, 2.0 * rho.rho12.imag, 2.0 * rho.rho11 - 1.0)


def density_from_bloch(x: float, y: float, z: float) -> DensityMatrix:
    """Inverse of bloch_coordinates; exact round trip."""
    return DensityMatrix(rho11=(1.0 + z) / 2.0, rho12=complex(x / 2.0, y / 2.0))


def _log_partition(beta: float, h: QubitOperator) -> float:
    e = eigendecompose(h).e_plus
    return float(np.logaddexp(beta * e, -beta * e))


def free_energy_difference(spec: ThermalSpec, h0: QubitOperator, htau: QubitOperator) -> float:
    """Equilibrium free-energy change -ln(Z_tau/Z_0)/beta for traceless H's."""
    if spec.beta <= 0:
        raise ValueError("free energy difference requires beta > 0")
    return -(_log_partition(spec.beta, htau) - _log_partition(spec.beta, h0)) / spec.beta


def von_neumann_entropy(rho: DensityMatrix) -> float:
    """-tr(rho ln rho) in nats; 0 for pure states, ln 2 at the center."""
    x, y, z = bloch_coordinates(rho)
    r = math.sqrt(x * x + y * y + z * z)
    r = min(r, 1.0)
    out = 0.0
    for p in ((1.0 + r) / 2.0, (1.0 - r) / 2.0):
        if p > 0.0:
            out -= p * math.log(p)
    return out
