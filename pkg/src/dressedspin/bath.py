"""Monte-Carlo sampling of P1 spin-bath realizations around a central NV.

Positions are drawn uniformly in a spherical shell around the NV (continuum
sampling; at ppm densities lattice discreteness is irrelevant), Jahn-Teller
orientations uniformly over the four <111> axes and the 14N projection
uniformly over {-1, 0, +1} (thermal nuclear bath).  Inhomogeneous dephasing
is injected as static Gaussian detuning disorder so that propagation stays
unitary and exact.

Every realization is a pure function of (spec, index): realization ``index``
uses the counter-based Philox stream spawned from (spec.seed, index), so
ensembles can be generated in parallel in any order and still reproduce
bit-for-bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .models import (
    DIPOLAR_K_MHZ_NM3,
    NVParams,
    P1Params,
    P1Site,
    SpinSystem,
    dipolar_coefficient,
)

# Diamond: mass density 3.515 g/cm^3, molar mass 12.011 g/mol.
DIAMOND_CARBON_DENSITY_CM3 = 3.515 / 12.011 * 6.02214076e23


class SamplingError(RuntimeError):
    """Shell geometry cannot accommodate the requested sites."""


def ppm_to_number_density(ppm: float) -> float:
    """Defect number density in cm^-3 for a concentration in ppm of carbon."""
    return ppm * 1e-6 * DIAMOND_CARBON_DENSITY_CM3


def ppm_to_number_density_nm3(ppm: float) -> float:
    return ppm_to_number_density(ppm) * 1e-21


def t2star_to_sigma(t2_star_ns: float) -> float:
    """Gaussian static-detuning width (MHz) that reproduces a Ramsey T2*.

    The width is defined so that averaging cos(2 pi delta t) over
    delta ~ Normal(0, sigma_f) gives the envelope exp(-(t/T2*)^2), i.e.
    sigma_f = sqrt(2) / (2 pi T2*).
    """
    if t2_star_ns <= 0:
        raise ValueError("t2_star_ns must be > 0")
    t2_star_us = t2_star_ns * 1e-3
    return math.sqrt(2.0) / (2.0 * math.pi * t2_star_us)


@dataclass(frozen=True)
class BathSpec:
    """Parameters of the P1 bath ensemble.

    ``max_radius_nm=None`` derives the shell radius from the density so the
    shell holds ``n_spins`` on average; the desk-scale cap of 8 spins keeps
    the Hilbert dimension at or below 512.
    """

    density_ppm: float
    n_spins: int
    exclusion_nm: float = 1.0
    max_radius_nm: float | None = None
    seed: int = 0
    t2_star_ns: float = 110.0
    detuning_model: str = "gaussian-static"
    include_p1_p1: bool = True

    def __post_init__(self):
        if self.density_ppm <= 0:
            raise ValueError("density_ppm must be > 0")
        if not 1 <= self.n_spins <= 8:
            raise ValueError("n_spins must be between 1 and 8")
        if self.exclusion_nm <= 0:
            raise ValueError("exclusion_nm must be > 0")
        if self.max_radius_nm is not None and self.exclusion_nm >= self.max_radius_nm:
            raise ValueError("exclusion_nm must be smaller than max_radius_nm")
        if self.detuning_model not in ("gaussian-static", "none"):
            raise ValueError(f"unknown detuning model {self.detuning_model!r}")

    def shell_radius_nm(self) -> float:
        """Outer shell radius, derived from the density when not given."""
        if self.max_radius_nm is not None:
            return self.max_radius_nm
        n_v = ppm_to_number_density_nm3(self.density_ppm)
        r3 = self.n_spins / (4.0 * math.pi / 3.0 * n_v) + self.exclusion_nm ** 3
        return r3 ** (1.0 / 3.0)

    def sigma_detuning_mhz(self) -> float:
        if self.detuning_model == "none":
            return 0.0
        return t2star_to_sigma(self.t2_star_ns)


@dataclass(frozen=True)
class BathSite:
    """One sampled P1: geometry, internal labels and derived couplings."""

    position_nm: tuple[float, float, float]
    orientation: int
    m_i: int
    coupling_mhz: float
    detuning_mhz: float

    @property
    def radius_nm(self) -> float:
        return float(np.linalg.norm(self.position_nm))

    @property
    def theta_rad(self) -> float:
        r = self.radius_nm
        return math.acos(self.position_nm[2] / r)


@dataclass(frozen=True)
class BathRealization:
    """A concrete sampled bath; reproducible from (spec, index)."""

    sites: tuple[BathSite, ...]
    nv_detuning_mhz: float
    p1_p1_mhz: np.ndarray | None
    spec_seed: int
    index: int

    def couplings_mhz(self) -> np.ndarray:
        return np.array([s.coupling_mhz for s in self.sites])

    # -- JSON schema (documented in the README) ----------------------------
    def to_json_dict(self) -> dict:
        return {
            "schema": "bath-realization@1",
            "seed": self.spec_seed,
            "index": self.index,
            "nv_detuning_mhz": self.nv_detuning_mhz,
            "sites": [
                {
                    "position_nm": list(s.position_nm),
                    "orientation": s.orientation,
                    "m_i": s.m_i,
                    "coupling_mhz": s.coupling_mhz,
                    "detuning_mhz": s.detuning_mhz,
                }
                for s in self.sites
            ],
            "p1_p1_mhz": None if self.p1_p1_mhz is None else self.p1_p1_mhz.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    @classmethod
    def from_json_dict(cls, d: dict) -> "BathRealization":
        if d.get("schema") != "bath-realization@1":
            raise ValueError(f"unsupported schema {d.get('schema')!r}")
        sites = tuple(
            BathSite(
                position_nm=tuple(s["position_nm"]),
                orientation=int(s["orientation"]),
                m_i=int(s["m_i"]),
                coupling_mhz=float(s["coupling_mhz"]),
                detuning_mhz=float(s["detuning_mhz"]),
            )
            for s in d["sites"]
        )
        p1p1 = d.get("p1_p1_mhz")
        return cls(
            sites=sites,
            nv_detuning_mhz=float(d.get("nv_detuning_mhz", 0.0)),
            p1_p1_mhz=None if p1p1 is None else np.array(p1p1, dtype=float),
            spec_seed=int(d.get("seed", 0)),
            index=int(d.get("index", 0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "BathRealization":
        return cls.from_json_dict(json.loads(text))


def _rng_for(spec: BathSpec, index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=spec.seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(seq))


_MAX_ATTEMPTS = 10_000


def sample_bath(spec: BathSpec, index: int = 0,
                prefactor_mhz_nm3: float = DIPOLAR_K_MHZ_NM3,
                p1_p1_prefactor_mhz_nm3: float | None = None) -> BathRealization:
    """Draw one bath realization from the stream (spec.seed, index).

    ``prefactor_mhz_nm3`` scales the NV-P1 couplings, the optional
    ``p1_p1_prefactor_mhz_nm3`` the intra-bath ones (they differ when the
    two species' gyromagnetic ratios differ).
    """
    if p1_p1_prefactor_mhz_nm3 is None:
        p1_p1_prefactor_mhz_nm3 = prefactor_mhz_nm3
    rng = _rng_for(spec, index)
    r_in = spec.exclusion_nm
    r_out = spec.shell_radius_nm()
    if r_out <= r_in:
        raise SamplingError(
            f"shell radius {r_out:.3f} nm does not exceed exclusion {r_in:.3f} nm"
        )
    positions: list[np.ndarray] = []
    for _ in range(spec.n_spins):
        for attempt in range(_MAX_ATTEMPTS):
            u = rng.random()
            r = (u * (r_out ** 3 - r_in ** 3) + r_in ** 3) ** (1.0 / 3.0)
            cos_t = rng.uniform(-1.0, 1.0)
            phi = rng.uniform(0.0, 2.0 * math.pi)
            sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
            pos = np.array(
                [r * sin_t * math.cos(phi), r * sin_t * math.sin(phi), r * cos_t]
            )
            if all(np.linalg.norm(pos - q) >= r_in for q in positions):
                positions.append(pos)
                break
        else:
            raise SamplingError(
                f"could not place site {len(positions) + 1} of {spec.n_spins} "
                f"after {_MAX_ATTEMPTS} attempts (shell too crowded)"
            )

    orientations = rng.integers(1, 5, size=spec.n_spins)
    m_is = rng.integers(-1, 2, size=spec.n_spins)
    sigma = spec.sigma_detuning_mhz()
    if sigma > 0:
        deltas = rng.normal(0.0, sigma, size=spec.n_spins)
    else:
        deltas = np.zeros(spec.n_spins)
    # the NV carries no sampled static detuning: the pulsed experiments
    # either refocus it (echo) or are only quadratically sensitive (lock),
    # and the bath's zz coupling already acts as an effective NV offset
    nv_delta = 0.0

    sites = []
    for k in range(spec.n_spins):
        pos = positions[k]
        r = float(np.linalg.norm(pos))
        theta = math.acos(pos[2] / r)
        d = dipolar_coefficient(r, theta, prefactor_mhz_nm3)
        sites.append(
            BathSite(
                position_nm=(float(pos[0]), float(pos[1]), float(pos[2])),
                orientation=int(orientations[k]),
                m_i=int(m_is[k]),
                coupling_mhz=d,
                detuning_mhz=float(deltas[k]),
            )
        )

    p1p1 = None
    if spec.include_p1_p1 and spec.n_spins > 1:
        p1p1 = np.zeros((spec.n_spins, spec.n_spins))
        for i in range(spec.n_spins):
            for j in range(i + 1, spec.n_spins):
                dv = positions[i] - positions[j]
                rij = float(np.linalg.norm(dv))
                theta_ij = math.acos(dv[2] / rij)
                p1p1[i, j] = p1p1[j, i] = dipolar_coefficient(
                    rij, theta_ij, p1_p1_prefactor_mhz_nm3
                )

    return BathRealization(
        sites=tuple(sites),
        nv_detuning_mhz=nv_delta,
        p1_p1_mhz=p1p1,
        spec_seed=spec.seed,
        index=index,
    )


def typical_coupling(spec: BathSpec, n_realizations: int = 1000) -> float:
    """Median |d_NV| over sampled realizations (diagnostic)."""
    mags = []
    for i in range(n_realizations):
        real = sample_bath(replace(spec, include_p1_p1=False), index=i)
        mags.extend(abs(s.coupling_mhz) for s in real.sites)
    return float(np.median(mags))


def to_spin_system(realization: BathRealization, nv: NVParams, b0_gauss: float,
                   p1_defaults: P1Params) -> SpinSystem:
    """Assemble the dynamical spin system for one bath realization."""
    sites = tuple(
        P1Site(
            params=P1Params(
                gamma_mhz_per_g=p1_defaults.gamma_mhz_per_g,
                hyperfine_on_axis_mhz=p1_defaults.hyperfine_on_axis_mhz,
                hyperfine_off_axis_mhz=p1_defaults.hyperfine_off_axis_mhz,
                orientation=s.orientation,
                m_i=s.m_i,
            ),
            coupling_mhz=s.coupling_mhz,
            detuning_mhz=s.detuning_mhz,
        )
        for s in realization.sites
    )
    return SpinSystem(
        nv=nv,
        b0_gauss=b0_gauss,
        sites=sites,
        p1_couplings_mhz=realization.p1_p1_mhz,
        nv_detuning_mhz=realization.nv_detuning_mhz,
    )
