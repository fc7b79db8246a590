"""Full 2^N state-vector simulation with inhomogeneous TAT couplings.

Used to test how much the protocol relies on permutation symmetry: the two
squeezing stages before the rotations run under

    H' = sum_i sum_{j != i} J_ij (X_i Y_j + Y_i X_j),   J_ij uniform in [1 - delta, 1 + delta],

while every other block stays collective.  Bit i of a basis index is the
state of ensemble qubit i; the control qubit is not stored (|0> branch only).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la
from scipy.special import gammaln

from .dicke import DickeSpace, DickeVector
from .errors import CapacityError, NumericError
from .optimizer import _best_tau3
from .propagator import generator_bank, to_eigenbasis
from .protocol import ProtocolParams, fidelity_report, run_protocol

MAX_FULL_QUBITS = 24
DISORDER_HEADER = ("N", "delta", "seed", "theta", "tau1", "tau2", "tau3",
                   "epsilon", "epsilon_clean", "leakage")


@dataclass(frozen=True, eq=False)
class DisorderedCoupling:
    N: int
    delta: float
    seed: int
    J: np.ndarray = field(repr=False)

    def pairs(self):
        """``(i, j, J_ij)`` for i < j."""
        iu, ju = np.triu_indices(self.N, 1)
        return [(int(i), int(j), float(self.J[i, j])) for i, j in zip(iu, ju)]

    def norm_bound(self) -> float:
        """Upper bound on ``||H'||``: each pair term has norm 4 |J_ij|."""
        return 4.0 * float(np.abs(np.triu(self.J, 1)).sum())


def _check_full_size(N: int) -> None:
    if N < 2:
        raise ValueError(f"full-space backend needs N >= 2, got {N}")
    if N > MAX_FULL_QUBITS:
        raise CapacityError(f"N={N} exceeds the full-space limit {MAX_FULL_QUBITS}")


def sample_disorder(N: int, delta: float, seed: int) -> DisorderedCoupling:
    """Symmetric couplings, each drawn from a counter-based stream keyed by (seed, i, j).

    A pair's coupling depends only on (seed, i, j), never on draw order.
    ``delta = 0`` gives exactly 1 for every pair.
    """
    _check_full_size(N)
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    if not 0 <= seed < 2 ** 64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    J = np.zeros((N, N))
    for i in range(N):
        for j in range(i + 1, N):
            gen = np.random.Generator(np.random.Philox(key=seed, counter=[i, j, 0, 0]))
            J[i, j] = J[j, i] = 1.0 + delta * (2.0 * gen.random() - 1.0)
    J.flags.writeable = False
    return DisorderedCoupling(N, float(delta), int(seed), J)


@dataclass(frozen=True)
class FullStateVector:
    N: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (2 ** self.N,):
            raise ValueError(f"expected {2 ** self.N} amplitudes, got shape {amps.shape}")
        object.__setattr__(self, "amplitudes", amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def all_zero(N: int) -> FullStateVector:
    _check_full_size(N)
    amps = np.zeros(2 ** N, dtype=complex)
    amps[0] = 1.0
    return FullStateVector(N, amps)


def popcounts(N: int) -> np.ndarray:
    return np.bitwise_count(np.arange(2 ** N, dtype=np.uint64)).astype(np.int64)


def _axis(N: int, qubit: int) -> int:
    return N - 1 - qubit


def disordered_tat_matvec(coupling: DisorderedCoupling, psi: np.ndarray) -> np.ndarray:
    """``H' psi``.

    Per pair, ``X_i Y_j + Y_i X_j = 2i(|11><00| - |00><11|)`` and the ordered
    double sum counts each unordered pair twice.
    """
    N = coupling.N
    v = psi.reshape((2,) * N)
    out = np.zeros_like(v)
    for i, j, J in coupling.pairs():
        s00 = [slice(None)] * N
        s11 = [slice(None)] * N
        s00[_axis(N, i)] = s00[_axis(N, j)] = 0
        s11[_axis(N, i)] = s11[_axis(N, j)] = 1
        s00, s11 = tuple(s00), tuple(s11)
        c = 4j * J
        out[s11] += c * v[s00]
        out[s00] -= c * v[s11]
    return out.reshape(-1)


def expm_lanczos(matvec, v: np.ndarray, t: float, tol: float = 1e-10, m_max: int = 64,
                 norm_bound: float | None = None):
    """``exp(-i H t) v`` for Hermitian ``H`` given only ``matvec``.

    Substeps of adaptive length; each substep builds a fully reorthogonalized
    Lanczos basis until the a posteriori estimate ``beta_m |[exp(-i h T)]_{m,1}|``
    drops below its share of ``tol``.  An exhausted basis halves the step.
    Returns ``(w, info)`` where ``info`` holds the accumulated error estimate,
    the number of substeps and matrix-vector products.
    """
    w = np.array(v, dtype=complex)
    if t == 0:
        return w, {"error": 0.0, "steps": 0, "matvecs": 0}
    total = abs(t)
    direction = math.copysign(1.0, t)
    h = total if not norm_bound else min(total, 24.0 / norm_bound)
    done, err_total, steps, matvecs = 0.0, 0.0, 0, 0
    while done < total * (1 - 1e-15):
        h = min(h, total - done)
        beta0 = np.linalg.norm(w)
        basis = np.empty((m_max + 1, w.size), dtype=complex)
        basis[0] = w / beta0
        alphas, betas = [], []
        accepted = None
        budget = tol * h / total
        for m in range(1, m_max + 1):
            u = matvec(basis[m - 1])
            matvecs += 1
            a = float(np.vdot(basis[m - 1], u).real)
            u -= a * basis[m - 1]
            if m > 1:
                u -= betas[-1] * basis[m - 2]
            u -= basis[:m].T @ (basis[:m].conj() @ u)
            b = float(np.linalg.norm(u))
            alphas.append(a)
            if m == 1:
                theta, q = np.array([a]), np.ones((1, 1))
            else:
                theta, q = la.eigh_tridiagonal(np.array(alphas), np.array(betas))
            small = q @ (np.exp(-1j * direction * h * theta) * q[0])
            err = b * abs(small[-1]) * beta0
            if b < 1e-13 * max(1.0, abs(a)) or err <= budget:
                accepted = (m, small, err if b >= 1e-13 * max(1.0, abs(a)) else 0.0)
                break
            betas.append(b)
            basis[m] = u / b
        if accepted is None:
            h /= 2
            if h < total * 1e-10:
                raise NumericError(f"Lanczos exponential did not converge (residual {err:.3e})",
                                   residual=err)
            continue
        m, small, err = accepted
        w = beta0 * (small @ basis[:m])
        done += h
        err_total += err
        steps += 1
        if m < m_max // 2:
            h *= 1.5
    return w, {"error": err_total, "steps": steps, "matvecs": matvecs}


def evolve_disordered_tat(coupling: DisorderedCoupling, tau: float, state: FullStateVector,
                          tol: float = 1e-10) -> FullStateVector:
    """Apply ``exp(-i tau (ln N / N) H')``."""
    if state.N != coupling.N:
        raise ValueError(f"state has N={state.N}, coupling has N={coupling.N}")
    if tau == 0:
        return state
    N = coupling.N
    w, _ = expm_lanczos(lambda x: disordered_tat_matvec(coupling, x), state.amplitudes,
                        tau * math.log(N) / N, tol=tol, norm_bound=coupling.norm_bound())
    return FullStateVector(N, w)


def rotate_all(state: FullStateVector, gate: np.ndarray) -> FullStateVector:
    """Apply the same 2x2 ``gate`` to every qubit."""
    N = state.N
    v = state.amplitudes
    for q in range(N):
        v = np.einsum("ab,xbz->xaz", gate, v.reshape(2 ** (N - 1 - q), 2, 2 ** q)).reshape(-1)
    return FullStateVector(N, v)


def x_rotation_gate(phi: float) -> np.ndarray:
    """Single-qubit ``exp(+i phi X / 2)``."""
    c, s = math.cos(phi / 2), math.sin(phi / 2)
    return np.array([[c, 1j * s], [1j * s, c]])


def _log_binomial(N: int) -> np.ndarray:
    k = np.arange(N + 1)
    return gammaln(N + 1) - gammaln(k + 1) - gammaln(N - k + 1)


def project_dicke(state: FullStateVector) -> np.ndarray:
    """``<D_k|state>`` for k = 0..N (class sums divided by sqrt C(N, k))."""
    N = state.N
    sums = np.bincount(popcounts(N), weights=state.amplitudes.real, minlength=N + 1) \
        + 1j * np.bincount(popcounts(N), weights=state.amplitudes.imag, minlength=N + 1)
    return sums * np.exp(-0.5 * _log_binomial(N))


def embed_dicke(state: DickeVector) -> FullStateVector:
    N = state.n_qubits
    _check_full_size(N)
    scale = np.exp(-0.5 * _log_binomial(N))
    return FullStateVector(N, (state.amplitudes * scale)[popcounts(N)])


def dm_leakage(state: FullStateVector) -> float:
    """Probability outside the permutation-symmetric subspace."""
    inside = float(np.sum(np.abs(project_dicke(state)) ** 2))
    return max(0.0, state.norm() ** 2 - inside)


@dataclass(frozen=True)
class DisorderReport:
    epsilon: float
    epsilon_clean: float
    leakage: float
    leakage_steps: tuple
    seed: int
    delta: float
    params: ProtocolParams
    tau3_used: float
    reoptimized: bool
    final_norm: float

    @property
    def excess(self) -> float:
        return self.epsilon - self.epsilon_clean

    def row(self) -> tuple:
        p = self.params
        return (p.N, self.delta, self.seed, p.theta, p.tau1, p.tau2, self.tau3_used,
                self.epsilon, self.epsilon_clean, self.leakage)


def run_disordered_protocol(params: ProtocolParams, coupling: DisorderedCoupling,
                            reoptimize_tau3: bool = False, tol: float = 1e-10) -> DisorderReport:
    """|0>-branch protocol with disorder in ``S(tau1)`` and ``S(-tau2)`` only.

    Leakage is the out-of-manifold weight after each of those two stages
    (no other block changes it), reported as the larger of the two.  With
    ``reoptimize_tau3`` the unsqueezing time is re-chosen for this disorder
    realization; that search runs on the state's Dicke-manifold projection,
    which is exact because the remaining blocks are collective and
    ``|0...0>`` lies in the manifold.
    """
    N = params.N
    if coupling.N != N:
        raise ValueError(f"coupling has N={coupling.N}, params have N={N}")
    q = math.pi / 4
    z = N - 2 * popcounts(N)
    state = all_zero(N)
    state = evolve_disordered_tat(coupling, params.tau1, state, tol)
    leak1 = dm_leakage(state)
    state = rotate_all(state, x_rotation_gate(params.phi))
    state = evolve_disordered_tat(coupling, -params.tau2, state, tol)
    leak2 = dm_leakage(state)
    state = rotate_all(state, x_rotation_gate(-2 * q))
    state = FullStateVector(N, np.exp(-1j * q * z * z / (4 * N)) * state.amplitudes)
    state = FullStateVector(N, np.exp(0.5j * q * z) * state.amplitudes)

    tau3 = params.tau3
    if reoptimize_tau3:
        bank = generator_bank(N)
        coeffs = to_eigenbasis(bank["H_TAT"], project_dicke(state))
        tau3 = _best_tau3(bank, coeffs, 151, 1e-6).tau3
    clean = sample_disorder(N, 0.0, coupling.seed)
    state = evolve_disordered_tat(clean, tau3, state, tol)
    eps = 1.0 - abs(state.amplitudes[0]) ** 2
    eps_clean = fidelity_report(run_protocol(params)).epsilon
    return DisorderReport(float(eps), float(eps_clean), max(leak1, leak2), (leak1, leak2),
                          coupling.seed, coupling.delta, params, float(tau3), reoptimize_tau3,
                          state.norm())


def append_disorder_rows(path, reports, meta: str | None = None) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            if meta:
                fh.write(f"# {meta}\n")
            w.writerow(DISORDER_HEADER)
        for r in reports:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.row()])
