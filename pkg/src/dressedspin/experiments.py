"""Experiment drivers: compile, propagate, ensemble-average, trace out.

Each experiment is an ensemble average over independently sampled bath
realizations.  Realization ``i`` of a run is a pure function of
(config, i): the bath comes from the counter-based stream (seed, i) and
optional readout noise from (seed, i, 1), so results are bit-identical for
any worker count and any sweep ordering (sweeps are processed internally
in sorted order and reported in the caller's order).
"""

from __future__ import annotations

import math
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import bath as bath_mod
from .core import (
    DensityState,
    HilbertSpace,
    Operator,
    embed,
    expectation,
    hermitian_eig,
    partial_trace_replace,
    product_state,
    propagator_from_eig,
)
from .models import (
    NVParams,
    P1Params,
    P1Site,
    SpinSystem,
    dipolar_prefactor,
    nv_transition_frequency,
    _site_xyz,
)
from .pulses import (
    CompiledProgram,
    PulseSequence,
    Readout,
    ResetMarker,
    build_hahn_deer,
    build_spin_lock,
    compile_sequence,
    five_tone_rf_channel,
    rf_channel,
)

EXPERIMENTS = (
    "deer_spectrum",
    "deer_rabi",
    "spin_lock",
    "hh_frequency_sweep",
    "hh_power_sweep",
)


class SimulationError(RuntimeError):
    """A realization failed; carries the realization index."""

    def __init__(self, message: str, index: int):
        super().__init__(f"realization {index}: {message}")
        self.index = index


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------

class PropagatorCache:
    """LRU cache of Hermitian eigendecompositions keyed by matrix bytes.

    Sequences reuse the same segment Hamiltonians heavily (both pi/2 and
    3pi/2 pulses share one H; duration sweeps share everything), so caching
    the eigensystem and recomposing per duration is the dominant saving.
    Keys are the full matrix bytes, so a hash collision cannot silently
    corrupt results.
    """

    def __init__(self, maxsize: int = 64):
        self.maxsize = maxsize
        self._eigs: OrderedDict[bytes, tuple[np.ndarray, np.ndarray]] = OrderedDict()

    def propagator(self, h: Operator, t_us: float) -> Operator:
        key = h.matrix.tobytes()
        hit = self._eigs.get(key)
        if hit is None:
            hit = hermitian_eig(h)
            self._eigs[key] = hit
            if len(self._eigs) > self.maxsize:
                self._eigs.popitem(last=False)
        else:
            self._eigs.move_to_end(key)
        return propagator_from_eig(h.space, hit[0], hit[1], t_us)


def pumped_nv_matrix() -> np.ndarray:
    """Reduced NV state after ideal optical pumping: the |0> population."""
    m = np.zeros((2, 2), dtype=complex)
    m[0, 0] = 1.0
    return m


def initial_state(sp: HilbertSpace) -> DensityState:
    """Pumped NV, thermal (maximally mixed) P1 bath."""
    return product_state(sp, {"NV": pumped_nv_matrix()})


def observable_operator(readout: Readout, sp: HilbertSpace) -> Operator:
    sx, sy, sz = _site_xyz(sp, readout.site)
    if readout.kind == "p0":
        d = sp.dim(readout.site)
        proj = np.zeros((d, d), dtype=complex)
        proj[0, 0] = 1.0
        site_sp = HilbertSpace(((readout.site, d),))
        return embed(Operator(site_sp, proj), sp, readout.site)
    return Operator(sp, {"sx": sx, "sy": sy, "sz": sz}[readout.kind])


def simulate_program(program: CompiledProgram, initial: DensityState | None = None,
                     cache: PropagatorCache | None = None) -> DensityState:
    """Run the compiled segment list, applying reset markers in place.

    Propagators come from the (cached) Hermitian eigendecomposition and are
    unitary by construction, so the inner loop works on raw arrays; the
    result is validated once as a :class:`DensityState` (the test suite
    samples the trace/positivity invariants separately).
    """
    sp = program.system.space
    state = initial if initial is not None else initial_state(sp)
    cache = cache if cache is not None else PropagatorCache()
    nv_reset = pumped_nv_matrix()
    rho = state.matrix
    for entry in program.entries:
        if isinstance(entry, ResetMarker):
            rho = partial_trace_replace(DensityState(sp, rho), entry.site, nv_reset).matrix
            continue
        u = cache.propagator(entry.hamiltonian, entry.duration_us).matrix
        rho = u @ rho @ u.conj().T
    return DensityState(sp, rho)


def readout_population(program: CompiledProgram, state: DensityState) -> float:
    return expectation(state, observable_operator(program.readout, program.system.space))


def measure_bath_polarization(state: DensityState, system: SpinSystem,
                              axis_phase_rad: float = math.pi / 2) -> float:
    """Total P1 polarization along the spin-lock axis (phase in the XY plane)."""
    sp = system.space
    total = 0.0
    for lab in system.p1_labels:
        sx, sy, _ = _site_xyz(sp, lab)
        axis = math.cos(axis_phase_rad) * sx + math.sin(axis_phase_rad) * sy
        total += expectation(state, Operator(sp, axis))
    return total


def cooling_budget(t1_p1_us: float, t_transfer_us: float, t_init_us: float) -> int:
    """How many polarization cycles fit into the bath's T1."""
    if t1_p1_us <= 0 or t_transfer_us <= 0 or t_init_us <= 0:
        raise ValueError("all durations must be > 0")
    return math.floor(t1_p1_us / (t_transfer_us + t_init_us))


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtraSpecies:
    """Optional unidentified dark-spin line: one extra two-level site."""

    frequency_mhz: float
    coupling_mhz: float


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    b0_gauss: float
    seed: int
    n_realizations: int
    sweep_values: tuple[float, ...]
    nv: NVParams = NVParams()
    p1: P1Params = P1Params()
    bath: bath_mod.BathSpec = bath_mod.BathSpec(density_ppm=40.0, n_spins=5)
    omega_nv_mhz: float = 8.0
    omega_p1_mhz: float | None = None
    rf_width_ns: float = 65.0
    rf_frequency_mhz: float | None = None
    tau_ns: float = 350.0
    lock_us: float = 50.0
    pump_us: float = 2.0
    rf_on: bool = True
    t1_rho_us: float | None = None
    readout_a: float = 0.0
    readout_b: float = 1.0
    noise_snr: float | None = None
    extra_species: ExtraSpecies | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")
        if len(self.sweep_values) == 0:
            raise ValueError("sweep_values must not be empty")
        if not all(math.isfinite(v) for v in self.sweep_values):
            raise ValueError("sweep values must be finite")

    @property
    def bath_spec(self) -> bath_mod.BathSpec:
        return replace(self.bath, seed=self.seed)

    def nv_carrier_mhz(self) -> float:
        return nv_transition_frequency(self.nv, self.b0_gauss)

    def p1_center_mhz(self) -> float:
        return self.p1.gamma_mhz_per_g * self.b0_gauss

    def rf_carrier_mhz(self) -> float:
        return self.rf_frequency_mhz if self.rf_frequency_mhz is not None else self.p1_center_mhz()

    def omega_p1_or_default(self) -> float:
        if self.omega_p1_mhz is not None:
            return self.omega_p1_mhz
        if self.experiment == "deer_spectrum":
            # pi pulse condition for the configured RF width
            return 1000.0 / (2.0 * self.rf_width_ns)
        return self.omega_nv_mhz


# ---------------------------------------------------------------------------
# Per-realization simulation
# ---------------------------------------------------------------------------

def system_for_realization(config: ExperimentConfig, index: int) -> SpinSystem:
    realization = bath_mod.sample_bath(
        config.bath_spec, index,
        prefactor_mhz_nm3=dipolar_prefactor(config.nv.gamma_mhz_per_g,
                                            config.p1.gamma_mhz_per_g),
        p1_p1_prefactor_mhz_nm3=dipolar_prefactor(config.p1.gamma_mhz_per_g,
                                                  config.p1.gamma_mhz_per_g),
    )
    system = bath_mod.to_spin_system(realization, config.nv, config.b0_gauss, config.p1)
    if config.extra_species is None:
        return system
    xs = config.extra_species
    center = config.p1_center_mhz()
    extra = P1Site(
        params=P1Params(
            gamma_mhz_per_g=config.p1.gamma_mhz_per_g,
            hyperfine_on_axis_mhz=config.p1.hyperfine_on_axis_mhz,
            hyperfine_off_axis_mhz=config.p1.hyperfine_off_axis_mhz,
            orientation=2,
            m_i=0,
        ),
        coupling_mhz=xs.coupling_mhz,
        detuning_mhz=xs.frequency_mhz - center,
    )
    sites = system.sites + (extra,)
    couplings = system.p1_couplings_mhz
    if couplings is not None:
        n = len(sites)
        padded = np.zeros((n, n))
        padded[: n - 1, : n - 1] = couplings
        couplings = padded
    return SpinSystem(
        nv=system.nv,
        b0_gauss=system.b0_gauss,
        sites=sites,
        p1_couplings_mhz=couplings,
        nv_detuning_mhz=system.nv_detuning_mhz,
    )


def build_point_sequence(config: ExperimentConfig, value: float) -> PulseSequence:
    """The pulse sequence for one sweep point of the configured experiment."""
    kind = config.experiment
    nv_carrier = config.nv_carrier_mhz()
    if kind == "deer_spectrum":
        return build_hahn_deer(
            config.omega_nv_mhz, config.tau_ns, nv_carrier,
            rf_carrier_mhz=value, rf_amp_mhz=config.omega_p1_or_default(),
            rf_width_ns=config.rf_width_ns,
        )
    if kind == "deer_rabi":
        return build_hahn_deer(
            config.omega_nv_mhz, config.tau_ns, nv_carrier,
            rf_carrier_mhz=config.rf_carrier_mhz() if value > 0 else None,
            rf_amp_mhz=config.omega_p1_or_default(),
            rf_width_ns=value,
        )
    if kind == "spin_lock":
        rf = None
        if config.rf_on:
            rf = five_tone_rf_channel(
                config.p1_center_mhz(),
                config.p1.hyperfine_on_axis_mhz,
                config.p1.hyperfine_off_axis_mhz,
                config.omega_p1_or_default(),
            )
        return build_spin_lock(config.omega_nv_mhz, value, nv_carrier, rf=rf,
                               pump_us=config.pump_us)
    if kind == "hh_frequency_sweep":
        rf = rf_channel(value, [(0.0, config.omega_p1_or_default(), math.pi / 2)])
        return build_spin_lock(config.omega_nv_mhz, config.lock_us, nv_carrier,
                               rf=rf, pump_us=config.pump_us)
    if kind == "hh_power_sweep":
        rf = None
        if value > 0:
            rf = rf_channel(config.rf_carrier_mhz(), [(0.0, value, math.pi / 2)])
        return build_spin_lock(config.omega_nv_mhz, config.lock_us, nv_carrier,
                               rf=rf, pump_us=config.pump_us)
    raise ValueError(f"unknown experiment {kind!r}")


def _lock_duration_us(config: ExperimentConfig, value: float) -> float | None:
    if config.experiment == "spin_lock":
        return value
    if config.experiment in ("hh_frequency_sweep", "hh_power_sweep"):
        return config.lock_us
    return None


def simulate_point(config: ExperimentConfig, system: SpinSystem, value: float,
                   cache: PropagatorCache | None = None) -> float:
    """|0>-population readout for one (realization, sweep value) pair."""
    seq = build_point_sequence(config, value)
    program = compile_sequence(seq, system)
    state = simulate_program(program, cache=cache)
    p0 = readout_population(program, state)
    if config.t1_rho_us is not None:
        lock = _lock_duration_us(config, value)
        if lock is not None:
            p0 = 0.5 + (p0 - 0.5) * math.exp(-lock / config.t1_rho_us)
    return p0


def realization_signals(config: ExperimentConfig, index: int) -> np.ndarray:
    """Signals over the (sorted) sweep axis for bath realization ``index``."""
    order = np.argsort(np.asarray(config.sweep_values), kind="stable")
    try:
        system = system_for_realization(config, index)
        cache = PropagatorCache()
        sorted_vals = [config.sweep_values[i] for i in order]
        row_sorted = np.empty(len(sorted_vals))
        for k, value in enumerate(sorted_vals):
            p0 = simulate_point(config, system, value, cache)
            row_sorted[k] = config.readout_a + config.readout_b * p0
        if config.noise_snr is not None:
            rng = np.random.Generator(
                np.random.Philox(
                    np.random.SeedSequence(entropy=config.seed, spawn_key=(index, 1))
                )
            )
            row_sorted = row_sorted + rng.normal(
                0.0, abs(config.readout_b) / config.noise_snr, size=row_sorted.shape
            )
    except Exception as exc:  # noqa: BLE001 - annotate with the realization index
        raise SimulationError(str(exc), index) from exc
    row = np.empty_like(row_sorted)
    row[order] = row_sorted
    return row


# ---------------------------------------------------------------------------
# Ensemble averaging
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SignalTrace:
    """Swept-signal result with per-point standard error of the mean."""

    sweep_values: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.sweep_values, dtype=float)
        m = np.asarray(self.mean, dtype=float)
        s = np.asarray(self.stderr, dtype=float)
        if not (len(v) == len(m) == len(s)):
            raise ValueError("sweep/mean/stderr lengths differ")
        if np.any(s < 0):
            raise ValueError("stderr must be >= 0")
        object.__setattr__(self, "sweep_values", v)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "stderr", s)

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write("sweep_value,mean,stderr\n")
            for v, m, s in zip(self.sweep_values, self.mean, self.stderr):
                fh.write(f"{float(v)!r},{float(m)!r},{float(s)!r}\n")

    @classmethod
    def from_csv(cls, path) -> "SignalTrace":
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "sweep_value,mean,stderr":
                raise ValueError(f"unexpected CSV header {header!r}")
            cols = ([], [], [])
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                parts = line.strip().split(",")
                if len(parts) != 3:
                    raise ValueError(f"line {lineno}: expected 3 columns")
                for c, p in zip(cols, parts):
                    c.append(float(p))
        return cls(np.array(cols[0]), np.array(cols[1]), np.array(cols[2]))


def _single_threaded_blas():
    """Pin BLAS pools to one thread inside ensemble loops.

    The segment matrices are tiny (<= 512), where BLAS threading costs more
    than it gains, and a fixed thread count keeps results bit-identical
    between serial and multi-worker runs.
    """
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1)
    except Exception:  # pragma: no cover - threadpoolctl is a soft dependency
        import contextlib

        return contextlib.nullcontext()


_WORKER_BLAS_GUARD = None


def _worker_init():
    global _WORKER_BLAS_GUARD
    _WORKER_BLAS_GUARD = _single_threaded_blas()


def _worker_row(args) -> tuple[int, np.ndarray]:
    config, index = args
    return index, realization_signals(config, index)


def ensemble_average(config: ExperimentConfig, workers: int = 1) -> SignalTrace:
    """Average the configured experiment over its bath ensemble.

    The reduction is an ordered fold over realization indices, so the
    result is bit-identical for any ``workers`` value.
    """
    n = config.n_realizations
    rows = [None] * n
    if workers <= 1:
        with _single_threaded_blas():
            for i in range(n):
                rows[i] = realization_signals(config, i)
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init) as pool:
            for index, row in pool.map(
                _worker_row, [(config, i) for i in range(n)], chunksize=4
            ):
                rows[index] = row
    stack = np.stack(rows)
    mean = stack.mean(axis=0)
    if n > 1:
        stderr = stack.std(axis=0, ddof=1) / math.sqrt(n)
    else:
        stderr = np.zeros_like(mean)
    meta = {
        "experiment": config.experiment,
        "seed": config.seed,
        "n_realizations": n,
    }
    return SignalTrace(np.asarray(config.sweep_values, dtype=float), mean, stderr, meta)


def run_deer_spectrum(config: ExperimentConfig, workers: int = 1) -> SignalTrace:
    """NV echo signal vs RF frequency: dips mark the P1 hyperfine lines."""
    if config.experiment != "deer_spectrum":
        raise ValueError("config.experiment must be 'deer_spectrum'")
    return ensemble_average(config, workers)


def run_deer_rabi(config: ExperimentConfig, workers: int = 1) -> SignalTrace:
    """NV echo signal vs RF pulse width: bath Rabi oscillations."""
    if config.experiment != "deer_rabi":
        raise ValueError("config.experiment must be 'deer_rabi'")
    return ensemble_average(config, workers)


def run_spin_lock(config: ExperimentConfig, workers: int = 1) -> SignalTrace:
    """Locked NV signal vs lock duration, with or without the matched drive."""
    if config.experiment != "spin_lock":
        raise ValueError("config.experiment must be 'spin_lock'")
    return ensemble_average(config, workers)


def run_hh_frequency_sweep(config: ExperimentConfig, workers: int = 1) -> SignalTrace:
    """Locked NV signal vs RF frequency at matched power."""
    if config.experiment != "hh_frequency_sweep":
        raise ValueError("config.experiment must be 'hh_frequency_sweep'")
    return ensemble_average(config, workers)


def run_hh_power_sweep(config: ExperimentConfig, workers: int = 1) -> SignalTrace:
    """Locked NV signal vs P1 Rabi amplitude through the matching condition."""
    if config.experiment != "hh_power_sweep":
        raise ValueError("config.experiment must be 'hh_power_sweep'")
    return ensemble_average(config, workers)
