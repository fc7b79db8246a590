"""The squeeze / separate / rotate / unsqueeze GHZ-encoding protocol.

Building blocks, with X, Y, Z collective operators on the N ensemble qubits
and Z0 the Pauli Z of the control (data) qubit::

    RX(phi) = exp(+i phi X / 2)        RZ(phi) = exp(+i phi Z / 2)
    C(phi)  = exp(+i phi Z0 X / 2)     S(tau)  = exp(-i tau (ln N / N) (XY + YX))
    O(phi)  = exp(-i phi Z^2 / (4N))

and the protocol is ``S(tau3) RZ(pi/4) O(pi/4) RX(-pi/2) S(-tau2) C(phi) S(tau1)``
with ``phi = theta ln(N)^2 / N``.  Logs are natural.

Conditioned on the control qubit, ``C(phi)`` is ``RX(+phi)`` on the |0>
branch and ``RX(-phi)`` on the |1> branch, so the "reduced" picture evolves
the |0> branch alone; the two-branch picture carries both.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .dicke import DickeSpace, DickeVector, dicke_state, husimi, husimi_difference
from .propagator import GeneratorBank, evolve, generator_bank

#: Per-qubit phase relating the two branch targets: the |1> branch ends in
#: BRANCH_PHASE**N times the pi rotation about (x+y)/sqrt(2) of the |0> branch.
BRANCH_PHASE = complex(np.exp(-0.75j * np.pi))

BLOCK_KINDS = ("RX", "RZ", "C", "S", "O", "OY", "TILT")


@dataclass(frozen=True)
class ProtocolParams:
    N: int
    theta: float
    tau1: float
    tau2: float
    tau3: float

    def __post_init__(self):
        if isinstance(self.N, bool) or not isinstance(self.N, (int, np.integer)) or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        for name in ("theta", "tau1", "tau2", "tau3"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
            object.__setattr__(self, name, value)

    @property
    def log_n(self) -> float:
        return math.log(self.N)

    @property
    def phi(self) -> float:
        """Controlled-rotation angle ``theta ln(N)^2 / N``."""
        return self.theta * self.log_n ** 2 / self.N

    def replace(self, **changes) -> "ProtocolParams":
        fields = {"N": self.N, "theta": self.theta, "tau1": self.tau1,
                  "tau2": self.tau2, "tau3": self.tau3}
        fields.update(changes)
        return ProtocolParams(**fields)


@dataclass(frozen=True)
class Block:
    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ValueError(f"unknown block kind {self.kind!r}")
        if not math.isfinite(self.value):
            raise ValueError(f"block parameter must be finite, got {self.value}")


@dataclass(frozen=True)
class ControlledState:
    """``alpha |0>_0 (x) branch0 + beta |1>_0 (x) branch1``."""

    branch0: DickeVector
    branch1: DickeVector
    alpha: complex = 1 / math.sqrt(2)
    beta: complex = 1 / math.sqrt(2)

    def __post_init__(self):
        if self.branch0.space != self.branch1.space:
            raise ValueError("branches live in different Dicke spaces")
        weight = abs(self.alpha) ** 2 + abs(self.beta) ** 2
        if abs(weight - 1) > 1e-9:
            raise ValueError(f"|alpha|^2 + |beta|^2 = {weight}, expected 1")

    @property
    def space(self) -> DickeSpace:
        return self.branch0.space

    def norm(self) -> float:
        return math.sqrt(abs(self.alpha) ** 2 * self.branch0.norm() ** 2
                         + abs(self.beta) ** 2 * self.branch1.norm() ** 2)


@dataclass(frozen=True)
class ProtocolTrace:
    """States after each block, in order.

    ``target_phase`` is the phase carried by the |1>-branch target
    ``target_phase * |D_N>``; the |0>-branch target is always ``|D_0>``.
    """

    params: ProtocolParams | None
    mode: str
    n_qubits: int
    checkpoints: list = field(default_factory=list)
    target_phase: complex = 1.0
    time: float | None = None

    @property
    def labels(self) -> list[str]:
        return [label for label, _ in self.checkpoints]

    @property
    def final(self):
        if not self.checkpoints:
            raise ValueError("trace has no checkpoints")
        return self.checkpoints[-1][1]


class TimeBudget(NamedTuple):
    total: float
    lower_bound: float
    cnot: float


def time_budget(params: ProtocolParams) -> TimeBudget:
    """Interaction time of the protocol with the ln N / N and pi/4 references."""
    n, ln = params.N, params.log_n
    total = (params.theta * ln ** 2 / (2 * n) + math.pi / (8 * n)
             + ln / n * (params.tau1 + params.tau2 + params.tau3))
    return TimeBudget(total, ln / n, math.pi / 4)


@dataclass(frozen=True)
class FidelityReport:
    n_qubits: int
    f0: complex
    f1: complex
    epsilon: float
    epsilon_reduced: float
    alpha_weight: float
    time_budget: float
    lower_bound_ref: float
    mode: str
    params: ProtocolParams | None = None

    @property
    def cnot_time(self) -> float:
        return math.pi / 4

    def to_dict(self) -> dict:
        p = self.params
        return {
            "N": self.n_qubits,
            "theta": p.theta if p else None,
            "tau1": p.tau1 if p else None,
            "tau2": p.tau2 if p else None,
            "tau3": p.tau3 if p else None,
            "phi": p.phi if p else None,
            "f0_re": self.f0.real,
            "f0_im": self.f0.imag,
            "f1_re": self.f1.real,
            "f1_im": self.f1.imag,
            "epsilon": self.epsilon,
            "epsilon_reduced": self.epsilon_reduced,
            "T": self.time_budget,
            "T_over_cnot": self.time_budget / self.cnot_time,
        }

    def to_json(self, meta: dict | None = None) -> str:
        doc = self.to_dict()
        if meta:
            doc["meta"] = meta
        return json.dumps(doc, indent=2, sort_keys=False)


def worst_case_infidelity(f0: complex, f1: complex) -> tuple[float, float]:
    """Worst case over inputs of ``1 - | |alpha|^2 f0 + |beta|^2 f1 |^2``.

    The overlap sweeps the segment [f1, f0] as |alpha|^2 goes from 0 to 1,
    so the worst case is the point of the segment nearest the origin.
    Returns ``(epsilon, |alpha|^2 at the minimum)``.
    """
    f0, f1 = complex(f0), complex(f1)
    d = f0 - f1
    if abs(d) < 1e-300:
        p = 1.0
    else:
        p = -(d.conjugate() * f1).real / abs(d) ** 2
        p = min(1.0, max(0.0, p))
    closest = p * f0 + (1 - p) * f1
    return min(1.0, max(0.0, 1.0 - abs(closest) ** 2)), p


def _apply(kind: str, value: float, psi: np.ndarray, bank: GeneratorBank, sign: int = 1) -> np.ndarray:
    """Apply one block to amplitudes (a vector or a column batch)."""
    n = bank.n_qubits
    if value == 0:
        return psi
    if kind == "RX":
        return evolve(bank["X"], -value / 2, psi)
    if kind == "C":
        return evolve(bank["X"], -sign * value / 2, psi)
    if kind == "S":
        return evolve(bank["H_TAT"], value * math.log(n) / n, psi)
    if kind == "RZ":
        return evolve(bank["Z"], -value / 2, psi)
    if kind == "O":
        return evolve(bank["Z2"], value / (4 * n), psi)
    if kind == "OY":
        return evolve(bank["Y2"], value / (4 * n), psi)
    if kind == "TILT":
        # exp(+i tau (ln N/N)(AB+BA)), the image of S(tau) under RX(pi/2) RZ(-pi/4)
        return evolve(bank["TILTED"], -value * math.log(n) / n, psi)
    raise ValueError(f"unknown block kind {kind!r}")


def _bank_for(space: DickeSpace, bank: GeneratorBank | None) -> GeneratorBank:
    if bank is None:
        return generator_bank(space.n_qubits)
    if bank.space != space:
        raise ValueError(f"generator bank is for N={bank.n_qubits}, state has N={space.n_qubits}")
    return bank


def apply_block(block: Block, state, direction: int = 1, branch: int | None = None,
                bank: GeneratorBank | None = None):
    """Apply ``block`` (parameter multiplied by ``direction``) to a state.

    On a :class:`DickeVector` the controlled rotation needs ``branch`` (0 or 1)
    to pick the control value; on a :class:`ControlledState` it rotates the
    two branches in opposite directions.
    """
    if direction not in (1, -1):
        raise ValueError(f"direction must be +1 or -1, got {direction}")
    value = direction * block.value
    if isinstance(state, ControlledState):
        bank = _bank_for(state.space, bank)
        b0 = _apply(block.kind, value, state.branch0.amplitudes, bank, +1)
        b1 = _apply(block.kind, value, state.branch1.amplitudes, bank, -1)
        return ControlledState(DickeVector(state.space, b0), DickeVector(state.space, b1),
                               state.alpha, state.beta)
    if not isinstance(state, DickeVector):
        raise TypeError(f"expected DickeVector or ControlledState, got {type(state).__name__}")
    sign = 1
    if block.kind == "C":
        if branch not in (0, 1):
            raise ValueError("controlled rotation on a single branch needs branch=0 or branch=1")
        sign = 1 if branch == 0 else -1
    bank = _bank_for(state.space, bank)
    return DickeVector(state.space, _apply(block.kind, value, state.amplitudes, bank, sign))


def protocol_blocks(params: ProtocolParams) -> list[tuple[str, Block]]:
    q = math.pi / 4
    return [
        ("S_tau1", Block("S", params.tau1)),
        ("C_phi", Block("C", params.phi)),
        ("S_-tau2", Block("S", -params.tau2)),
        ("RX_-pi/2", Block("RX", -2 * q)),
        ("O_pi/4", Block("O", q)),
        ("RZ_pi/4", Block("RZ", q)),
        ("S_tau3", Block("S", params.tau3)),
    ]


def rewritten_blocks(params: ProtocolParams) -> list[tuple[str, Block]]:
    """Same unitary with every interaction stage before the two final rotations."""
    q = math.pi / 4
    return [
        ("S_tau1", Block("S", params.tau1)),
        ("C_phi", Block("C", params.phi)),
        ("S_-tau2", Block("S", -params.tau2)),
        ("OY_pi/4", Block("OY", q)),
        ("TILT_tau3", Block("TILT", params.tau3)),
        ("RX_-pi/2", Block("RX", -2 * q)),
        ("RZ_pi/4", Block("RZ", q)),
    ]


def _initial_state(space: DickeSpace, mode: str, alpha, beta):
    d0 = dicke_state(space, 0)
    if mode == "reduced":
        return d0
    if mode == "two_branch":
        return ControlledState(d0, d0, alpha, beta)
    raise ValueError(f"mode must be 'reduced' or 'two_branch', got {mode!r}")


def _run_blocks(params, blocks, mode, alpha, beta, bank) -> ProtocolTrace:
    space = DickeSpace(params.N)
    bank = _bank_for(space, bank)
    state = _initial_state(space, mode, alpha, beta)
    trace = ProtocolTrace(params, mode, params.N, target_phase=BRANCH_PHASE ** params.N,
                          time=time_budget(params).total)
    for label, block in blocks:
        if isinstance(state, DickeVector):
            state = apply_block(block, state, branch=0, bank=bank)
        else:
            state = apply_block(block, state, bank=bank)
        trace.checkpoints.append((label, state))
    return trace


def run_protocol(params: ProtocolParams, mode: str = "reduced",
                 alpha: complex = 1 / math.sqrt(2), beta: complex = 1 / math.sqrt(2),
                 bank: GeneratorBank | None = None) -> ProtocolTrace:
    return _run_blocks(params, protocol_blocks(params), mode, alpha, beta, bank)


def rewritten_protocol(params: ProtocolParams, mode: str = "reduced",
                       alpha: complex = 1 / math.sqrt(2), beta: complex = 1 / math.sqrt(2),
                       bank: GeneratorBank | None = None) -> ProtocolTrace:
    return _run_blocks(params, rewritten_blocks(params), mode, alpha, beta, bank)


def fidelity_report(trace: ProtocolTrace) -> FidelityReport:
    """Branch overlaps and worst-case infidelity of the final state.

    In reduced mode only the |0> branch exists and ``f1`` is set equal to
    ``f0``, which the branch symmetry guarantees for the full protocol.
    """
    final = trace.final
    n = trace.n_qubits
    if isinstance(final, ControlledState):
        f0 = complex(final.branch0.amplitudes[0])
        f1 = complex(np.conj(trace.target_phase) * final.branch1.amplitudes[n])
    else:
        f0 = f1 = complex(final.amplitudes[0])
    eps, p = worst_case_infidelity(f0, f1)
    if trace.params is not None:
        budget = time_budget(trace.params)
        total, lower = budget.total, budget.lower_bound
    else:
        total, lower = trace.time, math.log(n) / n
    return FidelityReport(n, f0, f1, eps, 1.0 - abs(f0) ** 2, p, total, lower,
                          trace.mode, trace.params)


def cnot_baseline_trace(N: int, alpha: complex = 1 / math.sqrt(2), beta: complex = 1 / math.sqrt(2),
                        bank: GeneratorBank | None = None) -> ProtocolTrace:
    """Parallel-CNOT encoding: ``exp(-i (pi/4) Z0 X)``, an ensemble rotation, a control phase.

    After the interaction the |0> branch is ``exp(-i pi X/4)|D_0>`` and the
    |1> branch ``exp(+i pi X/4)|D_0>``.  The ensemble rotation ``RX(+pi/2)``
    returns the |0> branch to ``|D_0>`` and sends the |1> branch to
    ``exp(i pi X/2)|D_0> = i^N |D_N>``; the control-qubit Z rotation removes
    the ``i^N``.
    """
    space = DickeSpace(N)
    bank = _bank_for(space, bank)
    d0 = dicke_state(space, 0)
    state = ControlledState(d0, d0, alpha, beta)
    trace = ProtocolTrace(None, "two_branch", N, time=math.pi / 4)
    state = apply_block(Block("C", -math.pi / 2), state, bank=bank)
    trace.checkpoints.append(("H_cnot", state))
    state = apply_block(Block("RX", math.pi / 2), state, bank=bank)
    trace.checkpoints.append(("RX_pi/2", state))
    b1 = DickeVector(space, (-1j) ** N * state.branch1.amplitudes)
    state = ControlledState(state.branch0, b1, alpha, beta)
    trace.checkpoints.append(("control_phase", state))
    return trace


def cnot_baseline(N: int, bank: GeneratorBank | None = None) -> FidelityReport:
    return fidelity_report(cnot_baseline_trace(N, bank=bank))


def export_husimi(trace: ProtocolTrace, out_dir, resolution=(128, 256), meta: str | None = None) -> list[Path]:
    """One Husimi CSV per checkpoint.

    Two-branch traces are written as the signed field
    ``|alpha|^2 Q_alpha - |beta|^2 Q_beta``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, (label, state) in enumerate(trace.checkpoints, start=1):
        if isinstance(state, ControlledState):
            grid = husimi_difference(state.branch0, state.branch1, resolution,
                                     (abs(state.alpha) ** 2, abs(state.beta) ** 2))
        else:
            grid = husimi(state, resolution)
        safe = label.replace("/", "_")
        path = out_dir / f"husimi_{i}_{safe}.csv"
        grid.to_csv(path, meta=meta)
        paths.append(path)
    return paths
