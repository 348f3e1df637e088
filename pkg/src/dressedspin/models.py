"""Physical Hamiltonians for NV and P1 centers and their dipolar coupling.

Frequencies are ordinary-frequency MHz, magnetic fields gauss, distances nm,
angles radians.  The NV is handled either as the effective two-level
{|0>, |-1>} subsystem used by the pulsed experiments (default) or as the
full S=1 triplet for level-structure calculations.

Two-level convention: basis index 0 is the optically pumped low-energy
state, index 1 the addressed excited state, and a species with transition
frequency f has lab Hamiltonian -f*Sz, so the Sz=+1/2 state is the ground
state.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core import (
    HilbertSpace,
    Operator,
    embed,
    spin_operators,
)

# CODATA 2018 values.
MU0_SI = 1.25663706212e-6  # vacuum permeability, T m / A
PLANCK_SI = 6.62607015e-34  # J s (exact)
ELECTRON_GAMMA_MHZ_PER_G = 2.8  # free-electron-like gyromagnetic ratio used here

NV_ZFS_MHZ = 2870.0
P1_HYPERFINE_ON_AXIS_MHZ = 114.0
P1_HYPERFINE_OFF_AXIS_MHZ = 90.0

_SPIN_HALF = spin_operators(0.5)
_SPIN_ONE = spin_operators(1.0)


def dipolar_prefactor(gamma_a_mhz_per_g: float = ELECTRON_GAMMA_MHZ_PER_G,
                      gamma_b_mhz_per_g: float = ELECTRON_GAMMA_MHZ_PER_G) -> float:
    """Dipolar coupling prefactor K in MHz nm^3.

    K = (mu0 / 4 pi) * gamma_a * gamma_b * h, with the gyromagnetic ratios
    given in MHz/gauss, evaluated so that d = K (1 - 3 cos^2 theta) / r^3
    is in MHz for r in nm.
    """
    gamma_a_hz_per_t = gamma_a_mhz_per_g * 1e6 * 1e4
    gamma_b_hz_per_t = gamma_b_mhz_per_g * 1e6 * 1e4
    k_hz_m3 = (MU0_SI / (4 * math.pi)) * gamma_a_hz_per_t * gamma_b_hz_per_t * PLANCK_SI
    return k_hz_m3 * 1e27 * 1e-6  # m^3 -> nm^3, Hz -> MHz


#: Two electron-like spins (g ~ 2): about 52 MHz nm^3.
DIPOLAR_K_MHZ_NM3 = dipolar_prefactor()

MAGIC_ANGLE_RAD = math.acos(1.0 / math.sqrt(3.0))


@dataclass(frozen=True)
class NVParams:
    """NV center parameters.

    ``reduction`` selects the representation: "two-level" keeps only the
    {|0>, |-1>} subsystem addressed by the microwave drive, "full" keeps
    the S=1 triplet.
    """

    zfs_mhz: float = NV_ZFS_MHZ
    gamma_mhz_per_g: float = ELECTRON_GAMMA_MHZ_PER_G
    reduction: str = "two-level"

    def __post_init__(self):
        if self.zfs_mhz <= 0:
            raise ValueError("zero-field splitting must be positive")
        if self.gamma_mhz_per_g <= 0:
            raise ValueError("gyromagnetic ratio must be positive")
        if self.reduction not in ("two-level", "full"):
            raise ValueError(f"unknown reduction {self.reduction!r}")


@dataclass(frozen=True)
class P1Params:
    """One P1 electron spin: Jahn-Teller orientation and nuclear projection.

    Orientation 1 is the <111> axis parallel to the static field; 2..4 are
    the three symmetry-equivalent off-axis choices.  The 14N projection mI
    is a static classical label, entering only as a secular frequency shift.
    """

    gamma_mhz_per_g: float = ELECTRON_GAMMA_MHZ_PER_G
    hyperfine_on_axis_mhz: float = P1_HYPERFINE_ON_AXIS_MHZ
    hyperfine_off_axis_mhz: float = P1_HYPERFINE_OFF_AXIS_MHZ
    orientation: int = 1
    m_i: int = 0

    def __post_init__(self):
        if self.hyperfine_on_axis_mhz <= 0 or self.hyperfine_off_axis_mhz <= 0:
            raise ValueError("hyperfine splittings must be positive")
        if self.orientation not in (1, 2, 3, 4):
            raise ValueError(f"orientation must be 1..4, got {self.orientation}")
        if self.m_i not in (-1, 0, 1):
            raise ValueError(f"m_i must be -1, 0 or +1, got {self.m_i}")

    @property
    def hyperfine_mhz(self) -> float:
        """Effective secular splitting for this Jahn-Teller orientation."""
        if self.orientation == 1:
            return self.hyperfine_on_axis_mhz
        return self.hyperfine_off_axis_mhz

    def line_offset_mhz(self) -> float:
        """Offset of this spin's nominal line from the bare Zeeman frequency."""
        return self.hyperfine_mhz * self.m_i

    def transition_mhz(self, b0_gauss: float) -> float:
        return self.gamma_mhz_per_g * b0_gauss + self.line_offset_mhz()


@dataclass(frozen=True)
class DipolarLink:
    """Geometric dipolar coupling between two spins.

    ``theta`` is the angle between the inter-spin vector and the
    quantization axis; ``d_mhz`` is the secular coupling coefficient.
    """

    r_nm: float
    theta_rad: float
    d_mhz: float

    @classmethod
    def from_geometry(cls, r_nm: float, theta_rad: float,
                      prefactor_mhz_nm3: float = DIPOLAR_K_MHZ_NM3) -> "DipolarLink":
        return cls(r_nm, theta_rad, dipolar_coefficient(r_nm, theta_rad, prefactor_mhz_nm3))


@dataclass(frozen=True)
class FrameSpec:
    """Per-site rotating-frame frequencies (MHz) plus the RWA switch."""

    frequencies_mhz: dict[str, float] = field(default_factory=dict)
    rwa: bool = True

    def __post_init__(self):
        for lab, f in self.frequencies_mhz.items():
            if f < 0:
                raise ValueError(f"frame frequency for {lab!r} is negative")


@dataclass(frozen=True)
class Drive:
    """One resonant (or detuned) rotating-frame drive term on a site."""

    site: str
    omega_mhz: float
    phase_rad: float = 0.0
    detuning_mhz: float = 0.0


@dataclass(frozen=True)
class P1Site:
    """A P1 spin as it appears in a sampled bath realization."""

    params: P1Params
    coupling_mhz: float  # secular dipolar coupling to the NV
    detuning_mhz: float = 0.0  # static deviation from the nominal line


@dataclass(frozen=True)
class SpinSystem:
    """One two-level NV plus N two-level P1 electron spins.

    Site labels are "NV" and "P1_1" .. "P1_N" in construction order.
    ``p1_couplings_mhz`` is an optional symmetric matrix of intra-bath
    secular dipolar couplings.
    """

    nv: NVParams
    b0_gauss: float
    sites: tuple[P1Site, ...]
    p1_couplings_mhz: np.ndarray | None = None
    nv_detuning_mhz: float = 0.0

    def __post_init__(self):
        if self.nv.reduction != "two-level":
            raise ValueError("spin-system dynamics use the two-level NV reduction")
        n = len(self.sites)
        if self.p1_couplings_mhz is not None:
            m = np.asarray(self.p1_couplings_mhz, dtype=float)
            if m.shape != (n, n):
                raise ValueError(f"p1_couplings_mhz shape {m.shape}, expected {(n, n)}")
            if not np.allclose(m, m.T):
                raise ValueError("p1_couplings_mhz must be symmetric")
            object.__setattr__(self, "p1_couplings_mhz", m)

    @property
    def space(self) -> HilbertSpace:
        factors = [("NV", 2)] + [(f"P1_{i + 1}", 2) for i in range(len(self.sites))]
        return HilbertSpace(tuple(factors))

    @property
    def p1_labels(self) -> tuple[str, ...]:
        return tuple(f"P1_{i + 1}" for i in range(len(self.sites)))

    def site(self, label: str) -> P1Site:
        return self.sites[int(label.split("_")[1]) - 1]

    def transition_mhz(self, label: str) -> float:
        """True lab transition frequency of a site, static detuning included."""
        if label == "NV":
            return nv_transition_frequency(self.nv, self.b0_gauss) + self.nv_detuning_mhz
        s = self.site(label)
        return s.params.transition_mhz(self.b0_gauss) + s.detuning_mhz

    def line_mhz(self, label: str) -> float:
        """Nominal line frequency of a site (no static detuning)."""
        if label == "NV":
            return nv_transition_frequency(self.nv, self.b0_gauss)
        return self.site(label).params.transition_mhz(self.b0_gauss)

    def line_offset_mhz(self, label: str) -> float:
        if label == "NV":
            return 0.0
        return self.site(label).params.line_offset_mhz()


# ---------------------------------------------------------------------------
# Level-structure calculators
# ---------------------------------------------------------------------------

def nv_transition_frequency(p: NVParams, b0_gauss: float) -> float:
    """|0> <-> |-1> transition frequency, D - gamma*B0."""
    return p.zfs_mhz - p.gamma_mhz_per_g * b0_gauss


def nv_lab_hamiltonian(p: NVParams, b0_gauss: float) -> Operator:
    """Static NV Hamiltonian at field ``b0_gauss`` along the NV axis.

    Full mode: D*Sz^2 + gamma*B0*Sz on the triplet with basis (+1, 0, -1),
    so the |-1> level sits at D - gamma*B0 (gamma is the magnitude of the
    electron gyromagnetic ratio).  Two-level mode: -f*Sz on {|0>, |-1>}
    with f = D - gamma*B0.
    """
    if b0_gauss < 0:
        raise ValueError("b0_gauss must be >= 0")
    if p.reduction == "full":
        sz = _SPIN_ONE.z
        h = p.zfs_mhz * (sz @ sz).matrix + p.gamma_mhz_per_g * b0_gauss * sz.matrix
        return Operator(sz.space, h)
    f = nv_transition_frequency(p, b0_gauss)
    return Operator(_SPIN_HALF.z.space, -f * _SPIN_HALF.z.matrix)


def p1_lab_hamiltonian(p: P1Params, b0_gauss: float) -> Operator:
    """Two-level P1 electron Hamiltonian -(gamma*B0 + A*mI)*Sz."""
    f = p.transition_mhz(b0_gauss)
    return Operator(_SPIN_HALF.z.space, -f * _SPIN_HALF.z.matrix)


def p1_transition_frequencies(p_defaults: P1Params, b0_gauss: float) -> list[tuple[float, float]]:
    """The five P1 ESR lines at a <111>-aligned field, with their weights.

    Returns (frequency_mhz, weight) sorted by frequency.  Weights come from
    enumerating the 4 Jahn-Teller orientations x 3 nuclear projections
    uniformly: the central line collects all mI=0 spins (weight 1/3), the
    off-axis satellites 1/4 each and the on-axis satellites 1/12 each.
    """
    if b0_gauss <= 0:
        raise ValueError("b0_gauss must be > 0")
    center = p_defaults.gamma_mhz_per_g * b0_gauss
    acc: dict[float, float] = {}
    for orientation in (1, 2, 3, 4):
        a = (p_defaults.hyperfine_on_axis_mhz if orientation == 1
             else p_defaults.hyperfine_off_axis_mhz)
        for m_i in (-1, 0, 1):
            f = center + a * m_i
            acc[f] = acc.get(f, 0.0) + 1.0 / 12.0
    return sorted(acc.items())


def lac_field(nv: NVParams, p1: P1Params) -> float:
    """Static field (gauss) where the NV |0>-|-1> and P1 mI=0 splittings meet.

    Solves D - gamma_NV*B = gamma_P1*B.
    """
    gsum = nv.gamma_mhz_per_g + p1.gamma_mhz_per_g
    if gsum == 0:
        raise ZeroDivisionError("gamma_NV + gamma_P1 is zero")
    return nv.zfs_mhz / gsum


def hh_mismatch(omega_nv_mhz: float, omega_p1_mhz: float) -> float:
    """Rabi-frequency mismatch Omega_NV - Omega_P1 (matched when ~0)."""
    if omega_nv_mhz < 0 or omega_p1_mhz < 0:
        raise ValueError("Rabi frequencies must be >= 0")
    return omega_nv_mhz - omega_p1_mhz


# ---------------------------------------------------------------------------
# Coupling operators
# ---------------------------------------------------------------------------

def dipolar_coefficient(r_nm: float, theta_rad: float,
                        prefactor_mhz_nm3: float = DIPOLAR_K_MHZ_NM3) -> float:
    """Secular dipolar coefficient K*(1 - 3 cos^2 theta)/r^3 in MHz."""
    if r_nm <= 0:
        raise ValueError("r_nm must be > 0")
    return prefactor_mhz_nm3 * (1.0 - 3.0 * math.cos(theta_rad) ** 2) / r_nm ** 3


# Embedded elementary operators are cached per (space, site): Hamiltonians
# are rebuilt for every compiled segment, and the kron chains dominate the
# cost otherwise.  Cached arrays are read-only.

@lru_cache(maxsize=None)
def _site_xyz(sp: HilbertSpace, site: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ops = spin_operators((sp.dim(site) - 1) / 2)
    return (
        embed(ops.x, sp, site).matrix,
        embed(ops.y, sp, site).matrix,
        embed(ops.z, sp, site).matrix,
    )


@lru_cache(maxsize=None)
def _pair_zz(sp: HilbertSpace, site_a: str, site_b: str) -> np.ndarray:
    _, _, za = _site_xyz(sp, site_a)
    _, _, zb = _site_xyz(sp, site_b)
    m = za @ zb
    m.flags.writeable = False
    return m


@lru_cache(maxsize=None)
def _pair_flip_flop(sp: HilbertSpace, site_a: str, site_b: str) -> np.ndarray:
    ops_a = spin_operators((sp.dim(site_a) - 1) / 2)
    ops_b = spin_operators((sp.dim(site_b) - 1) / 2)
    pa = embed(ops_a.plus, sp, site_a).matrix
    ma = embed(ops_a.minus, sp, site_a).matrix
    pb = embed(ops_b.plus, sp, site_b).matrix
    mb = embed(ops_b.minus, sp, site_b).matrix
    m = pa @ mb + ma @ pb
    m.flags.writeable = False
    return m


def dipolar_hamiltonian(d_mhz: float, sp: HilbertSpace, site_a: str, site_b: str) -> Operator:
    """Lab-frame dipolar coupling d*[SzSz - (S+S- + S-S+)/(4 sqrt 2)]."""
    if site_a == site_b:
        raise ValueError(f"site collision: {site_a!r}")
    m = _pair_zz(sp, site_a, site_b) - _pair_flip_flop(sp, site_a, site_b) / (4.0 * math.sqrt(2.0))
    return Operator(sp, d_mhz * m)


def secular_zz(d_mhz: float, sp: HilbertSpace, site_a: str, site_b: str) -> Operator:
    """Rotating-frame coupling between dissimilar dressed species: d*SzSz."""
    if site_a == site_b:
        raise ValueError(f"site collision: {site_a!r}")
    return Operator(sp, d_mhz * _pair_zz(sp, site_a, site_b))


def homonuclear_secular(d_mhz: float, sp: HilbertSpace, site_a: str, site_b: str) -> Operator:
    """Secular coupling between same-frequency spins: d*[SzSz - (S+S- + S-S+)/4]."""
    if site_a == site_b:
        raise ValueError(f"site collision: {site_a!r}")
    m = _pair_zz(sp, site_a, site_b) - _pair_flip_flop(sp, site_a, site_b) / 4.0
    return Operator(sp, d_mhz * m)


@lru_cache(maxsize=32)
def _coupling_matrix(sp: HilbertSpace, nv_couplings: tuple,
                     p1p1_flat: tuple | None, same_line: tuple | None) -> np.ndarray:
    """Sum of all inter-site coupling terms; constant across segments."""
    p1_labels = sp.labels[1:]
    acc = np.zeros((sp.total_dim, sp.total_dim), dtype=complex)
    for lab, d in zip(p1_labels, nv_couplings):
        if d != 0.0:
            acc += d * _pair_zz(sp, "NV", lab)
    if p1p1_flat is not None:
        n = len(p1_labels)
        for i in range(n):
            for j in range(i + 1, n):
                d = p1p1_flat[i * n + j]
                if d == 0.0:
                    continue
                acc += d * _pair_zz(sp, p1_labels[i], p1_labels[j])
                if same_line[i * n + j]:
                    acc -= d / 4.0 * _pair_flip_flop(sp, p1_labels[i], p1_labels[j])
    acc.flags.writeable = False
    return acc


def coupling_hamiltonian(system: SpinSystem) -> Operator:
    """All rotating-frame inter-site couplings of the system.

    NV-P1 couplings keep only the zz part; P1 pairs on the same hyperfine
    line keep the full homonuclear secular form, pairs on different lines
    (split by at least the hyperfine scale) keep only zz.
    """
    sp = system.space
    nv_couplings = tuple(s.coupling_mhz for s in system.sites)
    p1p1_flat = None
    same_line = None
    if system.p1_couplings_mhz is not None:
        p1p1_flat = tuple(system.p1_couplings_mhz.ravel())
        offsets = [s.params.line_offset_mhz() for s in system.sites]
        n = len(offsets)
        same_line = tuple(
            abs(offsets[i] - offsets[j]) < 1e-9 for i in range(n) for j in range(n)
        )
    return Operator(sp, _coupling_matrix(sp, nv_couplings, p1p1_flat, same_line))


def secular_rotating_hamiltonian(system: SpinSystem, frames: FrameSpec,
                                 drives: list[Drive]) -> Operator:
    """Rotating-frame Hamiltonian of the system for one constant segment.

    Per-site terms are delta*Sz + omega*(cos(phi)*Sx + sin(phi)*Sy).  For a
    driven site the detuning comes from its Drive entry (carrier minus true
    transition); for an undriven site it is frame frequency minus true
    transition, defaulting to zero when no frame is given.  Couplings enter
    via :func:`coupling_hamiltonian`.
    """
    if not frames.rwa:
        raise ValueError("secular rotating Hamiltonian requires frames.rwa = True")
    sp = system.space
    labels = sp.labels
    by_site: dict[str, Drive] = {}
    for dr in drives:
        if dr.site not in labels:
            raise KeyError(f"drive on unknown site {dr.site!r}")
        if dr.site in by_site:
            raise ValueError(f"multiple drives on site {dr.site!r} in one segment")
        if dr.omega_mhz < 0:
            raise ValueError("drive amplitude must be >= 0")
        carrier = system.transition_mhz(dr.site) + dr.detuning_mhz
        if carrier > 0 and dr.omega_mhz > carrier / 10.0:
            warnings.warn(
                f"drive on {dr.site}: Omega = {dr.omega_mhz:g} MHz exceeds a tenth of "
                f"the {carrier:g} MHz carrier; rotating-wave error may be visible",
                stacklevel=2,
            )
        by_site[dr.site] = dr

    acc = coupling_hamiltonian(system).matrix.copy()
    for lab in labels:
        sx, sy, sz = _site_xyz(sp, lab)
        if lab in by_site:
            dr = by_site[lab]
            delta = dr.detuning_mhz
            if dr.omega_mhz != 0.0:
                acc += dr.omega_mhz * (
                    math.cos(dr.phase_rad) * sx + math.sin(dr.phase_rad) * sy
                )
        else:
            frame = frames.frequencies_mhz.get(lab)
            delta = 0.0 if frame is None else frame - system.transition_mhz(lab)
        if delta != 0.0:
            acc += delta * sz
    return Operator(sp, acc)
