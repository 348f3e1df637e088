"""Dressed-state polarization transfer between NV and P1 spins, at desk scale.

Exact density-matrix simulation of double-resonance pulse experiments on a
central NV electron spin coupled to a small sampled bath of P1 electron
spins: DEER spectroscopy, driven bath Rabi oscillations, matched spin-lock
decay and Hartmann-Hahn frequency/power sweeps, plus the fitting and CLI
tooling to reduce the traces.
"""

__version__ = "0.1.0"

from .core import (
    DensityState,
    HilbertSpace,
    NumericDomainError,
    Operator,
    SpaceMismatchError,
    embed,
    evolve,
    expectation,
    propagator,
    spin_operators,
)
from .models import (
    DIPOLAR_K_MHZ_NM3,
    DipolarLink,
    Drive,
    FrameSpec,
    NVParams,
    P1Params,
    P1Site,
    SpinSystem,
    dipolar_coefficient,
    dipolar_hamiltonian,
    hh_mismatch,
    lac_field,
    nv_lab_hamiltonian,
    nv_transition_frequency,
    p1_lab_hamiltonian,
    p1_transition_frequencies,
    secular_rotating_hamiltonian,
)
from .bath import (
    BathRealization,
    BathSite,
    BathSpec,
    SamplingError,
    ppm_to_number_density,
    sample_bath,
    t2star_to_sigma,
    to_spin_system,
    typical_coupling,
)
from .pulses import (
    Channel,
    CompileError,
    CompiledProgram,
    CompiledSegment,
    ParseError,
    Pulse,
    PulseSequence,
    Readout,
    ResetMarker,
    SemanticError,
    Tone,
    build_hahn_deer,
    build_spin_lock,
    compile_sequence,
    derive_frames,
    format_sequence,
    parse_sequence,
)
from .experiments import (
    ExperimentConfig,
    PropagatorCache,
    SignalTrace,
    SimulationError,
    cooling_budget,
    ensemble_average,
    measure_bath_polarization,
    run_deer_rabi,
    run_deer_spectrum,
    run_hh_frequency_sweep,
    run_hh_power_sweep,
    run_spin_lock,
    simulate_program,
)
from .fitting import (
    FitResult,
    fit_damped_sinusoid,
    fit_exp_decay,
    fit_gaussians,
    fwhm,
)
