"""Nested parameter search for the encoding protocol.

The inner search picks the unsqueezing time tau3 for fixed (N, theta, tau1,
tau2).  Everything before the last block is evolved once and projected onto
the TAT eigenbasis, after which the overlap ``<D_0|S(tau3) psi>`` is an
O(N) sum for any tau3.  Outer searches sweep (tau1, tau2) on grids.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .analysis import tau2_predictor
from .propagator import GeneratorBank, from_eigenbasis, generator_bank, to_eigenbasis
from .protocol import ProtocolParams, _apply, time_budget
from .search import golden_section_min

TAU3_RANGE = (0.0, 0.15)
TAU_RANGE = (0.0, 0.15)
THETA_RANGE = (0.0, 2.0)
SWEEP_HEADER = ("N", "theta", "tau1", "tau2", "tau3", "epsilon", "T")


class Tau3Result(NamedTuple):
    tau3: float
    epsilon: float
    coarse_epsilon: float


def _separated(bank: GeneratorBank, theta: float, tau1: float) -> np.ndarray:
    """|0>-branch state after ``C(phi) S(tau1)``."""
    n = bank.n_qubits
    psi = np.zeros(bank.space.dim, dtype=complex)
    psi[0] = 1.0
    psi = _apply("S", tau1, psi, bank)
    return _apply("C", theta * math.log(n) ** 2 / n, psi, bank, +1)


def _before_unsqueeze(bank: GeneratorBank, psi: np.ndarray, tau2) -> np.ndarray:
    """Apply ``RZ O RX S(-tau2)`` and return TAT-eigenbasis coefficients.

    ``tau2`` may be an array, in which case ``psi`` is broadcast to a batch
    with one column per value.
    """
    q = math.pi / 4
    tau2 = np.atleast_1d(np.asarray(tau2, dtype=float))
    cache = bank["H_TAT"]
    n = bank.n_qubits
    rate = math.log(n) / n
    c = to_eigenbasis(cache, psi)
    batch = np.exp(1j * rate * np.outer(cache.eigenvalues, tau2)) * c[:, None]
    states = from_eigenbasis(cache, batch)
    states = _apply("RX", -2 * q, states, bank)
    states = _apply("O", q, states, bank)
    states = _apply("RZ", q, states, bank)
    return to_eigenbasis(cache, states)


def _unsqueeze_overlap(bank: GeneratorBank, coeffs: np.ndarray, tau3) -> np.ndarray:
    """``|<D_0|S(tau3)|psi>|`` for the given eigenbasis coefficients of psi."""
    cache = bank["H_TAT"]
    n = bank.n_qubits
    rate = math.log(n) / n
    weighted = cache.row(0) * coeffs
    tau3 = np.atleast_1d(np.asarray(tau3, dtype=float))
    return np.abs(np.exp(-1j * rate * np.outer(tau3, cache.eigenvalues)) @ weighted)


def _best_tau3(bank: GeneratorBank, coeffs: np.ndarray, grid_points: int, tol: float) -> Tau3Result:
    lo, hi = TAU3_RANGE
    grid = np.linspace(lo, hi, grid_points)
    ov = _unsqueeze_overlap(bank, coeffs, grid)
    i = int(np.argmax(ov))
    best_t, best_ov = float(grid[i]), float(ov[i])
    coarse_eps = 1.0 - best_ov ** 2
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    t_ref, neg = golden_section_min(lambda t: -float(_unsqueeze_overlap(bank, coeffs, t)[0]), a, b, tol)
    if -neg > best_ov:
        best_t, best_ov = float(t_ref), -neg
    eps = min(1.0, max(0.0, 1.0 - best_ov ** 2))
    return Tau3Result(best_t, eps, min(1.0, max(0.0, coarse_eps)))


def optimize_tau3(N: int, theta: float, tau1: float, tau2: float,
                  bank: GeneratorBank | None = None, grid_points: int = 151,
                  tol: float = 1e-6) -> Tau3Result:
    """Unsqueezing time in [0, 0.15] maximizing ``|<D_0|psi_final>|``.

    A ``grid_points`` coarse grid is refined by golden section to ``tol``
    inside the bracket around the best grid point.  The refined value is
    kept only if it beats the grid, and grid ties resolve to the smaller tau3.
    """
    bank = generator_bank(N) if bank is None else bank
    coeffs = _before_unsqueeze(bank, _separated(bank, theta, tau1), tau2)[:, 0]
    return _best_tau3(bank, coeffs, grid_points, tol)


@dataclass(frozen=True)
class FullOptimum:
    N: int
    theta: float
    tau1: float
    tau2: float
    tau3: float
    epsilon: float
    coarse_epsilon: float
    tau1_grid: np.ndarray = field(repr=False)
    tau2_grid: np.ndarray = field(repr=False)
    epsilon_grid: np.ndarray = field(repr=False)
    refinement_path: list = field(default_factory=list, repr=False)

    @property
    def params(self) -> ProtocolParams:
        return ProtocolParams(self.N, self.theta, self.tau1, self.tau2, self.tau3)


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    count = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(count + 1), 12)


def optimize_full(N: int, theta: float, bank: GeneratorBank | None = None,
                  tau1_step: float = 0.005, tau2_window: float = 0.02, tau2_step: float = 0.002,
                  min_step: float = 5e-4, c: float = 2.0) -> FullOptimum:
    """Best (tau1, tau2, tau3) for one (N, theta).

    Coarse grid: tau1 over [0, 0.15], tau2 over the predictor +- window; each
    cell gets the inner tau3 search.  The best cell is then polished by a
    compass search over (tau1, tau2) whose steps halve down to ``min_step``.
    Ties go to the smaller parameters.
    """
    bank = generator_bank(N) if bank is None else bank
    center = tau2_predictor(N, theta, c)
    tau1_grid = _grid(*TAU_RANGE, tau1_step)
    half = int(round(tau2_window / tau2_step))
    tau2_grid = np.round(center + tau2_step * np.arange(-half, half + 1), 12)
    tau2_grid = tau2_grid[tau2_grid >= 0]
    eps_grid = np.empty((tau1_grid.size, tau2_grid.size))
    tau3_grid = np.empty_like(eps_grid)
    for i, t1 in enumerate(tau1_grid):
        coeffs = _before_unsqueeze(bank, _separated(bank, theta, t1), tau2_grid)
        for j in range(tau2_grid.size):
            r = _best_tau3(bank, coeffs[:, j], 151, 1e-6)
            eps_grid[i, j], tau3_grid[i, j] = r.epsilon, r.tau3
    # row-major argmin picks the smallest (tau1, tau2) among exact ties
    flat = np.flatnonzero(eps_grid <= eps_grid.min() + 1e-12)[0]
    i, j = np.unravel_index(flat, eps_grid.shape)
    best = (float(tau1_grid[i]), float(tau2_grid[j]))
    best_eps, best_t3 = float(eps_grid[i, j]), float(tau3_grid[i, j])
    coarse_eps = best_eps

    memo = {}

    def evaluate(t1, t2):
        key = (round(t1, 12), round(t2, 12))
        if key not in memo:
            memo[key] = optimize_tau3(N, theta, t1, t2, bank=bank)
        return memo[key]

    steps = [tau1_step / 2, tau2_step / 2]
    path = [(best[0], best[1], best_eps)]
    while True:
        moved = False
        for d1, d2 in ((-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)):
            t1 = best[0] + d1 * steps[0]
            t2 = best[1] + d2 * steps[1]
            if not (TAU_RANGE[0] <= t1 <= TAU_RANGE[1]) or t2 < 0:
                continue
            r = evaluate(t1, t2)
            if r.epsilon < best_eps - 1e-12:
                best, best_eps, best_t3 = (t1, t2), r.epsilon, r.tau3
                path.append((t1, t2, best_eps))
                moved = True
                break
        if moved:
            continue
        if steps[0] <= min_step and steps[1] <= min_step:
            break
        steps = [max(min_step, s / 2) for s in steps]
    return FullOptimum(N, float(theta), best[0], best[1], best_t3, best_eps, coarse_eps,
                       tau1_grid, tau2_grid, eps_grid, path)


@dataclass(frozen=True)
class SweepSpec:
    """Grid of (N, theta, tau1, tau2) cells, each getting the inner tau3 search.

    ``tau2_values=None`` centres a tau2 window of half-width ``tau2_window``
    (step ``tau2_step``) on the predictor for every (N, theta).
    """

    n_values: tuple
    theta_values: tuple
    tau1_values: tuple
    tau2_values: tuple | None = None
    tau2_window: float = 0.02
    tau2_step: float = 0.002
    output: str = "sweep.csv"
    resume: bool = True
    allow_out_of_range: bool = False

    def __post_init__(self):
        for name in ("n_values", "theta_values", "tau1_values"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ValueError(f"{name} must be nonempty")
            object.__setattr__(self, name, vals)
        if self.tau2_values is not None:
            if not tuple(self.tau2_values):
                raise ValueError("tau2_values must be nonempty")
            object.__setattr__(self, "tau2_values", tuple(self.tau2_values))
        if not self.allow_out_of_range:
            for t in self.theta_values:
                if not THETA_RANGE[0] <= t <= THETA_RANGE[1]:
                    raise ValueError(f"theta={t} outside {THETA_RANGE}; set allow_out_of_range")
            for t in self.tau1_values + (self.tau2_values or ()):
                if not TAU_RANGE[0] <= t <= TAU_RANGE[1]:
                    raise ValueError(f"tau={t} outside {TAU_RANGE}; set allow_out_of_range")

    def tau2_for(self, N: int, theta: float) -> tuple:
        if self.tau2_values is not None:
            return self.tau2_values
        center = tau2_predictor(N, theta)
        half = int(round(self.tau2_window / self.tau2_step))
        vals = np.round(center + self.tau2_step * np.arange(-half, half + 1), 12)
        return tuple(float(v) for v in vals if v >= 0)

    def cells(self) -> list[tuple[int, float, float, float]]:
        out = []
        for n in self.n_values:
            for th in self.theta_values:
                for t1 in self.tau1_values:
                    for t2 in self.tau2_for(n, th):
                        out.append((int(n), float(th), float(t1), float(t2)))
        return out

    def digest(self) -> str:
        doc = asdict(self)
        doc.pop("output")
        doc.pop("resume")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


@dataclass
class SweepTable:
    rows: dict = field(default_factory=dict)
    n_cells: int = 0

    @property
    def complete(self) -> bool:
        return len(self.rows) == self.n_cells

    @property
    def completion(self) -> np.ndarray:
        bitmap = np.zeros(self.n_cells, dtype=bool)
        bitmap[list(self.rows)] = True
        return bitmap

    def ordered(self) -> list[tuple]:
        return [self.rows[i] for i in sorted(self.rows)]

    def to_csv_text(self, meta: str | None = None) -> str:
        buf = io.StringIO()
        if meta:
            buf.write(f"# {meta}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for row in self.ordered():
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    tmp.replace(path)


def _checkpoint_path(output: Path) -> Path:
    return output.with_name(output.name + ".ckpt.json")


def _load_checkpoint(spec: SweepSpec, output: Path, cells) -> dict:
    ckpt = _checkpoint_path(output)
    if not (spec.resume and ckpt.exists() and output.exists()):
        return {}
    state = json.loads(ckpt.read_text())
    if state.get("spec_hash") != spec.digest():
        return {}
    done = sorted(state.get("completed", []))
    lines = [ln for ln in output.read_text().splitlines() if ln and not ln.startswith("#")]
    reader = csv.reader(lines[1:])
    rows = {}
    for idx, rec in zip(done, reader):
        rows[idx] = (int(rec[0]),) + tuple(float(v) for v in rec[1:])
        if rows[idx][:4] != cells[idx]:
            return {}
    return rows


def _cell_row(cell, banks) -> tuple:
    n, th, t1, t2 = cell
    r = optimize_tau3(n, th, t1, t2, bank=banks[n])
    total = time_budget(ProtocolParams(n, th, t1, t2, r.tau3)).total
    return (n, th, t1, t2, r.tau3, r.epsilon, total)


def run_sweep(spec: SweepSpec, jobs: int = 1, batch_size: int = 32, meta: str | None = None,
              cache_dir=None) -> SweepTable:
    """Fill the sweep table, checkpointing after every batch of cells.

    With ``spec.resume`` a matching checkpoint is loaded and only missing
    cells are computed.  Cells are pure functions of their parameters, so
    the table does not depend on ``jobs`` or on interruption points.
    """
    output = Path(spec.output)
    output.parent.mkdir(parents=True, exist_ok=True)
    cells = spec.cells()
    table = SweepTable(_load_checkpoint(spec, output, cells), len(cells))
    banks = {n: generator_bank(n, cache_dir) for n in spec.n_values}
    for n in spec.n_values:
        banks[n]["X"], banks[n]["H_TAT"]
    todo = [i for i in range(len(cells)) if i not in table.rows]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for start in range(0, len(todo), batch_size):
            chunk = todo[start:start + batch_size]
            for idx, row in zip(chunk, pool.map(lambda i: _cell_row(cells[i], banks), chunk)):
                table.rows[idx] = row
            _atomic_write(output, table.to_csv_text(meta))
            _atomic_write(_checkpoint_path(output),
                          json.dumps({"spec_hash": spec.digest(), "completed": sorted(table.rows)}))
    if not todo:
        _atomic_write(output, table.to_csv_text(meta))
    return table
