"""Fast GHZ encoding with collective spin squeezing, simulated on the Dicke manifold."""

__version__ = "0.1.0"

from .errors import CapacityError, NumericError
from .dicke import (
    DickeSpace,
    DickeVector,
    CollectiveOperators,
    SpinCoherentParams,
    HusimiGrid,
    build_collective_ops,
    dicke_state,
    spin_coherent,
    husimi,
    husimi_difference,
)
from .propagator import SpectralCache, GeneratorBank, diagonalize, evolve, generator_bank
from .protocol import (
    ProtocolParams,
    ControlledState,
    ProtocolTrace,
    FidelityReport,
    Block,
    apply_block,
    run_protocol,
    fidelity_report,
    worst_case_infidelity,
    cnot_baseline,
    rewritten_protocol,
    time_budget,
)
from .analysis import (
    DickeTailProfile,
    SqueezeScan,
    dicke_tail,
    polarization_error,
    variance,
    squeeze_scan,
    squeeze_collapse,
    tau2_predictor,
)
from .optimizer import FullOptimum, SweepSpec, SweepTable, optimize_tau3, optimize_full, run_sweep
from .fullspace import (
    DisorderedCoupling,
    FullStateVector,
    DisorderReport,
    sample_disorder,
    evolve_disordered_tat,
    dm_leakage,
    embed_dicke,
    run_disordered_protocol,
)
