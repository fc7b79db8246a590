"""Dicke-basis states and collective spin operators for N qubits.

Basis index ``k`` counts qubits in ``|1>``, so ``Z|D_k> = (N - 2k)|D_k>`` and
``k = 0`` is the north pole of the collective-spin sphere.  Collective
operators are sums of single-qubit Paulis, ``X = sum_i X_i`` (no factor 1/2),
and are stored as sparse banded matrices.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .errors import CapacityError

#: Largest ensemble size accepted by the Dicke backend.  A dense Hermitian
#: factorization at this size takes a few minutes and ~270 MB.
MAX_QUBITS = 4096

HUSIMI_MAGIC = b"HUSQ"


@dataclass(frozen=True)
class DickeSpace:
    n_qubits: int

    def __post_init__(self):
        n = self.n_qubits
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
            raise TypeError(f"n_qubits must be an integer, got {type(n).__name__}")
        if n < 1:
            raise ValueError(f"n_qubits must be >= 1, got {n}")
        if n > MAX_QUBITS:
            raise CapacityError(f"n_qubits={n} exceeds the Dicke backend limit {MAX_QUBITS}")
        object.__setattr__(self, "n_qubits", int(n))

    @property
    def dim(self) -> int:
        return self.n_qubits + 1

    @cached_property
    def z_eigenvalues(self) -> np.ndarray:
        k = np.arange(self.dim)
        return (self.n_qubits - 2 * k).astype(float)

    @cached_property
    def log_binomial(self) -> np.ndarray:
        """``log C(N, k)`` for k = 0..N, via log-gamma."""
        n = self.n_qubits
        k = np.arange(self.dim)
        return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


@dataclass(frozen=True)
class DickeVector:
    """State vector over the Dicke basis.

    The amplitudes are stored read-only; evolution never renormalizes, so
    ``norm_drift`` reports any accumulated deviation from unit norm.
    """

    space: DickeSpace
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.shape != (self.space.dim,):
            raise ValueError(
                f"amplitude array has shape {amps.shape}, expected ({self.space.dim},)"
            )
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n_qubits(self) -> int:
        return self.space.n_qubits

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def norm_drift(self) -> float:
        return abs(self.norm() - 1.0)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def overlap(self, other: "DickeVector") -> complex:
        """``<self|other>``."""
        if other.space != self.space:
            raise ValueError("states live in different Dicke spaces")
        return complex(np.vdot(self.amplitudes, other.amplitudes))


def _ladder(n: int) -> np.ndarray:
    """Raising coefficients ``<D_{k+1}|X|D_k> = sqrt((N-k)(k+1))``, k = 0..N-1."""
    k = np.arange(n, dtype=float)
    return np.sqrt((n - k) * (k + 1))


@dataclass(frozen=True)
class CollectiveOperators:
    """Collective X, Y, Z and the derived generators on one Dicke space.

    All matrices are ``scipy.sparse`` arrays in DIA (banded) format: Z and Z^2
    are diagonal, X and Y have bandwidth 1 and ``h_tat = XY + YX`` has
    bandwidth 2.  ``dense(name)`` materializes one on demand.
    """

    space: DickeSpace
    ladder: np.ndarray = field(repr=False)

    @property
    def n_qubits(self) -> int:
        return self.space.n_qubits

    @cached_property
    def X(self) -> sp.dia_array:
        a = self.ladder
        return sp.diags_array([a, a], offsets=[-1, 1], format="dia", dtype=complex)

    @cached_property
    def Y(self) -> sp.dia_array:
        a = self.ladder
        return sp.diags_array([1j * a, -1j * a], offsets=[-1, 1], format="dia")

    @cached_property
    def Z(self) -> sp.dia_array:
        return sp.diags_array(self.space.z_eigenvalues.astype(complex), format="dia")

    @cached_property
    def z_squared(self) -> sp.dia_array:
        return sp.diags_array(self.space.z_eigenvalues.astype(complex) ** 2, format="dia")

    @cached_property
    def tat_band(self) -> np.ndarray:
        """``<D_{k+2}|XY+YX|D_k> / (2i) = a_k a_{k+1}``; the diagonal vanishes."""
        a = self.ladder
        return a[:-1] * a[1:]

    @cached_property
    def h_tat(self) -> sp.dia_array:
        b = 2j * self.tat_band
        if b.size == 0:
            return sp.dia_array((self.space.dim, self.space.dim), dtype=complex)
        return sp.diags_array([b, -b], offsets=[-2, 2], format="dia")

    def dense(self, name: str) -> np.ndarray:
        mats = {"X": self.X, "Y": self.Y, "Z": self.Z, "h_tat": self.h_tat,
                "z_squared": self.z_squared}
        try:
            return mats[name].toarray()
        except KeyError:
            raise ValueError(f"unknown operator {name!r}; choose from {sorted(mats)}") from None


def build_collective_ops(space: DickeSpace) -> CollectiveOperators:
    return CollectiveOperators(space=space, ladder=_ladder(space.n_qubits))


def dicke_state(space: DickeSpace, k: int) -> DickeVector:
    if not 0 <= k <= space.n_qubits:
        raise ValueError(f"Dicke index k={k} outside [0, {space.n_qubits}]")
    amps = np.zeros(space.dim, dtype=complex)
    amps[k] = 1.0
    return DickeVector(space, amps)


@dataclass(frozen=True)
class SpinCoherentParams:
    polar: float
    azimuth: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.polar <= np.pi:
            raise ValueError(f"polar angle {self.polar} outside [0, pi]")
        if not 0.0 <= self.azimuth < 2 * np.pi:
            raise ValueError(f"azimuth {self.azimuth} outside [0, 2pi)")


def _coherent_log_moduli(space: DickeSpace, polar: np.ndarray) -> np.ndarray:
    """``log |<D_k|theta, .>|`` for each polar angle (rows) and k (columns)."""
    n = space.n_qubits
    k = np.arange(space.dim)
    polar = np.atleast_1d(np.asarray(polar, dtype=float))
    # 0 * log(0) must count as 0 at the poles
    with np.errstate(divide="ignore", invalid="ignore"):
        log_c = np.log(np.abs(np.cos(polar / 2)))[:, None]
        log_s = np.log(np.abs(np.sin(polar / 2)))[:, None]
        north = np.where(n - k == 0, 0.0, (n - k) * log_c)
        south = np.where(k == 0, 0.0, k * log_s)
    return 0.5 * space.log_binomial[None, :] + north + south


def spin_coherent(space: DickeSpace, params: SpinCoherentParams) -> DickeVector:
    """All-qubit product state pointing along (polar, azimuth).

    Amplitudes ``sqrt(C(N,k)) cos^{N-k}(polar/2) (sin(polar/2) e^{i azimuth})^k``
    are assembled in log space so that N in the thousands does not overflow.
    """
    logmod = _coherent_log_moduli(space, params.polar)[0]
    k = np.arange(space.dim)
    amps = np.exp(logmod) * np.exp(1j * k * params.azimuth)
    return DickeVector(space, amps)


def _clenshaw_curtis_weights(n_intervals: int) -> np.ndarray:
    """Weights for ``int_0^pi f(theta) sin(theta) dtheta`` at theta_j = j pi / n."""
    n = n_intervals
    theta = np.pi * np.arange(n + 1) / n
    w = np.ones(n + 1)
    for m in range(1, n // 2 + 1):
        b = 1.0 if 2 * m == n else 2.0
        w -= b * np.cos(2 * m * theta) / (4 * m * m - 1)
    w *= 2.0 / n
    w[0] /= 2
    w[-1] /= 2
    return w


@dataclass(frozen=True)
class HusimiGrid:
    """Husimi Q function sampled on a pole-inclusive (polar, azimuth) grid.

    Polar nodes are ``j*pi/(n_polar-1)``, azimuth nodes ``2*pi*m/n_azimuth``.
    ``values[j, m]`` may be negative only for difference fields built by
    :func:`husimi_difference`.
    """

    n_qubits: int
    polar: np.ndarray
    azimuth: np.ndarray
    values: np.ndarray

    @property
    def resolution(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def normalization(self) -> float:
        return (self.n_qubits + 1) / (4 * np.pi)

    def integral(self) -> float:
        """Sphere integral using Clenshaw-Curtis in polar and the trapezoid rule in azimuth.

        Exact (to rounding) once ``n_polar - 1 >= N`` and ``n_azimuth > N``.
        """
        n_polar, n_az = self.values.shape
        w_polar = _clenshaw_curtis_weights(n_polar - 1)
        ring = self.values.sum(axis=1) * (2 * np.pi / n_az)
        return float(w_polar @ ring)

    def argmax(self) -> tuple[float, float]:
        j, m = np.unravel_index(np.argmax(self.values), self.values.shape)
        return float(self.polar[j]), float(self.azimuth[m])

    def to_csv(self, path, meta: str | None = None) -> None:
        pp, aa = np.meshgrid(self.polar, self.azimuth, indexing="ij")
        with open(path, "w", newline="") as fh:
            if meta:
                fh.write(f"# {meta}\n")
            writer = csv.writer(fh)
            writer.writerow(["polar", "azimuth", "Q"])
            for p, a, q in zip(pp.ravel(), aa.ravel(), self.values.ravel()):
                writer.writerow([repr(float(p)), repr(float(a)), repr(float(q))])

    def to_bytes(self) -> bytes:
        n_polar, n_az = self.values.shape
        header = HUSIMI_MAGIC + struct.pack("<III", self.n_qubits, n_polar, n_az)
        return header + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    def to_binary(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "HusimiGrid":
        if blob[:4] != HUSIMI_MAGIC:
            raise ValueError("not a Husimi grid file (bad magic)")
        n, n_polar, n_az = struct.unpack("<III", blob[4:16])
        values = np.frombuffer(blob[16:], dtype="<f8")
        if values.size != n_polar * n_az:
            raise ValueError(f"payload holds {values.size} values, header says {n_polar * n_az}")
        polar, azimuth = _grid_axes(n_polar, n_az)
        return cls(n, polar, azimuth, values.reshape(n_polar, n_az).copy())

    @classmethod
    def from_binary(cls, path) -> "HusimiGrid":
        return cls.from_bytes(Path(path).read_bytes())


def _grid_axes(n_polar: int, n_azimuth: int) -> tuple[np.ndarray, np.ndarray]:
    polar = np.pi * np.arange(n_polar) / (n_polar - 1)
    azimuth = 2 * np.pi * np.arange(n_azimuth) / n_azimuth
    return polar, azimuth


def _overlap_grid(state: DickeVector, n_polar: int, n_azimuth: int) -> np.ndarray:
    """``<theta, phi|state>`` on the grid.

    For fixed polar angle the overlap is a Fourier sum over k, so each ring
    is one FFT of length ``n_azimuth`` (k folded modulo n_azimuth).
    """
    space = state.space
    polar, _ = _grid_axes(n_polar, n_azimuth)
    coeff = np.exp(_coherent_log_moduli(space, polar)) * state.amplitudes[None, :]
    dim = space.dim
    pad = (-dim) % n_azimuth
    if pad:
        coeff = np.concatenate([coeff, np.zeros((n_polar, pad))], axis=1)
    folded = coeff.reshape(n_polar, -1, n_azimuth).sum(axis=1)
    return np.fft.fft(folded, axis=1)


def _check_resolution(resolution) -> tuple[int, int]:
    n_polar, n_azimuth = (int(r) for r in resolution)
    if n_polar < 2 or n_azimuth < 1:
        raise ValueError(f"resolution {resolution} too small; need n_polar >= 2, n_azimuth >= 1")
    return n_polar, n_azimuth


def husimi(state: DickeVector, resolution=(128, 256)) -> HusimiGrid:
    """``Q = (N+1)/(4 pi) |<theta, phi|state>|^2`` on the grid."""
    n_polar, n_azimuth = _check_resolution(resolution)
    ov = _overlap_grid(state, n_polar, n_azimuth)
    n = state.n_qubits
    polar, azimuth = _grid_axes(n_polar, n_azimuth)
    return HusimiGrid(n, polar, azimuth, (n + 1) / (4 * np.pi) * np.abs(ov) ** 2)


def husimi_difference(
    alpha_part: DickeVector,
    beta_part: DickeVector,
    resolution=(128, 256),
    weights=(1.0, 1.0),
) -> HusimiGrid:
    """Signed field ``w_a Q_alpha - w_b Q_beta`` for the two-branch colour plots."""
    qa = husimi(alpha_part, resolution)
    qb = husimi(beta_part, resolution)
    return HusimiGrid(qa.n_qubits, qa.polar, qa.azimuth,
                      weights[0] * qa.values - weights[1] * qb.values)
