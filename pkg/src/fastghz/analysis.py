"""Observables of Dicke-basis states and two-axis-twisting squeezing scans."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dicke import DickeVector, build_collective_ops
from .propagator import GeneratorBank, from_eigenbasis, generator_bank, to_eigenbasis
from .search import golden_section_min, parabolic_vertex


@dataclass(frozen=True)
class DickeTailProfile:
    """``cumulative[k] = sum_{l <= k} |<D_l|psi>|^2``."""

    cumulative: np.ndarray

    @property
    def tail(self) -> np.ndarray:
        """Weight strictly above each k, ``1 - cumulative``."""
        return 1.0 - self.cumulative


def dicke_tail(state: DickeVector) -> DickeTailProfile:
    return DickeTailProfile(np.cumsum(state.probabilities()))


def polarization_error(state: DickeVector) -> float:
    """Relative shortfall of the Z polarization, ``(N - <Z>) / N``."""
    n = state.n_qubits
    z = float(state.probabilities() @ state.space.z_eigenvalues)
    return (n - z) / n


def expectation(state: DickeVector, which: str) -> float:
    ops = build_collective_ops(state.space)
    op = {"X": ops.X, "Y": ops.Y, "Z": ops.Z}[which]
    return float(np.vdot(state.amplitudes, op @ state.amplitudes).real)


def variance(state: DickeVector, which: str) -> float:
    """Standard deviation ``sqrt(<O^2> - <O>^2)`` of a collective operator."""
    if which not in ("X", "Y", "Z"):
        raise ValueError(f"which must be X, Y or Z, got {which!r}")
    ops = build_collective_ops(state.space)
    op = {"X": ops.X, "Y": ops.Y, "Z": ops.Z}[which]
    o_psi = op @ state.amplitudes
    second = float(np.vdot(o_psi, o_psi).real)
    first = float(np.vdot(state.amplitudes, o_psi).real)
    return math.sqrt(max(0.0, second - first * first))


@dataclass(frozen=True)
class SqueezeScan:
    n_qubits: int
    tau: np.ndarray
    y_var: np.ndarray
    tau_min: float
    y_var_min: float
    tau_min_parabolic: float

    @property
    def delta_y_min(self) -> float:
        return math.sqrt(self.y_var_min)

    def to_csv(self, path, meta: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if meta:
                fh.write(f"# {meta}\n")
            w = csv.writer(fh)
            w.writerow(["tau", "y_var", "N"])
            for t, v in zip(self.tau, self.y_var):
                w.writerow([repr(float(t)), repr(float(v)), self.n_qubits])


def squeeze_scan(N: int, tau_grid=None, bank: GeneratorBank | None = None,
                 tol: float = 1e-5) -> SqueezeScan:
    """``<Y^2>`` along ``S(tau)|D_0>`` and the time of strongest squeezing.

    ``<Y> = 0`` on this trajectory, so ``<Y^2>`` is the variance.  The minimum
    is bracketed on the grid, estimated by a parabola through the three
    points around it (in ``log <Y^2>``) and polished by golden section.
    """
    tau = np.linspace(0.0, 0.2, 201) if tau_grid is None else np.asarray(tau_grid, dtype=float)
    if tau.size < 50:
        raise ValueError(f"need at least 50 grid points, got {tau.size}")
    if tau.min() < 0 or tau.max() > 0.25:
        raise ValueError("tau grid must lie within [0, 0.25]")
    bank = generator_bank(N) if bank is None else bank
    cache = bank["H_TAT"]
    ops = bank.ops
    rate = math.log(N) / N
    e0 = np.zeros(bank.space.dim, dtype=complex)
    e0[0] = 1.0
    c0 = to_eigenbasis(cache, e0)

    def y2_batch(times):
        coeffs = np.exp(-1j * rate * np.outer(cache.eigenvalues, times)) * c0[:, None]
        y_psi = ops.Y @ from_eigenbasis(cache, coeffs)
        return np.sum(np.abs(y_psi) ** 2, axis=0)

    y_var = y2_batch(tau)
    i = int(np.argmin(y_var))
    if 0 < i < tau.size - 1:
        logs = np.log(y_var[i - 1:i + 2])
        t_par = parabolic_vertex(*tau[i - 1:i + 2], *logs)
        t_min, log_min = golden_section_min(
            lambda t: float(np.log(y2_batch(np.array([t]))[0])), tau[i - 1], tau[i + 1], tol)
        y_min = math.exp(log_min)
        if y_min > y_var[i]:
            t_min, y_min = float(tau[i]), float(y_var[i])
    else:
        t_par = t_min = float(tau[i])
        y_min = float(y_var[i])
    return SqueezeScan(N, tau, y_var, float(t_min), float(y_min), float(t_par))


def squeeze_collapse(scans) -> list[tuple[int, float, float]]:
    """Rows ``(N, tau - tau_min, Delta Y / ln N)`` for comparing scans across N."""
    rows = []
    for s in scans:
        ln = math.log(s.n_qubits)
        for t, v in zip(s.tau, s.y_var):
            rows.append((s.n_qubits, float(t - s.tau_min), math.sqrt(v) / ln))
    return rows


def tau2_predictor(N: int, theta: float, c: float = 2.0) -> float:
    """Pulling-away time at which TAT stretches the branch separation to O(N).

    ``tau2 = [ln(c N / theta) - 2 ln(ln N)] / (4 ln N)``.  A non-positive
    result (theta approaching c N / ln(N)^2) is returned with a warning.
    """
    if N < 3:
        raise ValueError(f"predictor needs N >= 3, got {N}")
    if theta <= 0:
        raise ValueError(f"predictor needs theta > 0, got {theta}")
    ln = math.log(N)
    tau2 = (math.log(c * N / theta) - 2 * math.log(ln)) / (4 * ln)
    if tau2 <= 0:
        warnings.warn(f"tau2 predictor {tau2:.4g} is out of range for N={N}, theta={theta}",
                      RuntimeWarning, stacklevel=2)
    return tau2
