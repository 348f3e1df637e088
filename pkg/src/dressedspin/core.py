"""Operator algebra on labeled tensor-product spin spaces and exact propagation.

Conventions used throughout the package:

* Hamiltonians are in ordinary-frequency units (MHz), durations in
  microseconds.  Time evolution carries the explicit 2*pi:
  ``U = expm(-1j * 2*pi * H * t)``.
* All matrices are dense complex128.  Target dimensions are <= ~512
  (one NV plus a handful of P1 electron spins), so exactness wins over
  scale and the matrix exponential is done by Hermitian eigendecomposition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HERMITICITY_RTOL = 1e-12
UNITARITY_ATOL = 1e-10
TRACE_ATOL = 1e-10
EXPECTATION_IMAG_ATOL = 1e-8


class SpaceMismatchError(ValueError):
    """Operands live on different Hilbert spaces."""


class NumericDomainError(ArithmeticError):
    """A numerical tolerance contract was violated (non-Hermitian input, ...)."""


@dataclass(frozen=True)
class HilbertSpace:
    """Ordered tensor product of labeled finite-dimensional factors."""

    factors: tuple[tuple[str, int], ...]

    def __post_init__(self):
        labels = [lab for lab, _ in self.factors]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate site labels: {labels}")
        for lab, dim in self.factors:
            if dim < 2:
                raise ValueError(f"factor {lab!r} has dimension {dim} < 2")

    @property
    def total_dim(self) -> int:
        n = 1
        for _, d in self.factors:
            n *= d
        return n

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self.factors)

    def dim(self, label: str) -> int:
        for lab, d in self.factors:
            if lab == label:
                return d
        raise KeyError(f"unknown site label {label!r}")

    def index(self, label: str) -> int:
        for i, (lab, _) in enumerate(self.factors):
            if lab == label:
                return i
        raise KeyError(f"unknown site label {label!r}")


def space(*factors: tuple[str, int]) -> HilbertSpace:
    """Convenience constructor: ``space(("NV", 2), ("P1_1", 2))``."""
    return HilbertSpace(tuple((str(l), int(d)) for l, d in factors))


@dataclass(frozen=True)
class Operator:
    """Dense operator on a :class:`HilbertSpace`.

    The matrix is copied and frozen at construction; instances are
    immutable and safe to share across parallel workers.
    """

    space: HilbertSpace
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        n = self.space.total_dim
        if m.shape != (n, n):
            raise ValueError(f"matrix shape {m.shape} does not match space dim {n}")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    # -- algebra -----------------------------------------------------------
    def _check_space(self, other: "Operator"):
        if self.space != other.space:
            raise SpaceMismatchError("operators on different spaces")

    def __add__(self, other: "Operator") -> "Operator":
        self._check_space(other)
        return Operator(self.space, self.matrix + other.matrix)

    def __sub__(self, other: "Operator") -> "Operator":
        self._check_space(other)
        return Operator(self.space, self.matrix - other.matrix)

    def __mul__(self, c) -> "Operator":
        return Operator(self.space, self.matrix * complex(c))

    __rmul__ = __mul__

    def __neg__(self) -> "Operator":
        return Operator(self.space, -self.matrix)

    def __matmul__(self, other: "Operator") -> "Operator":
        self._check_space(other)
        return Operator(self.space, self.matrix @ other.matrix)

    def dagger(self) -> "Operator":
        return Operator(self.space, self.matrix.conj().T)

    def commutator(self, other: "Operator") -> "Operator":
        self._check_space(other)
        a, b = self.matrix, other.matrix
        return Operator(self.space, a @ b - b @ a)

    # -- diagnostics ---------------------------------------------------------
    def hermiticity_defect(self) -> float:
        """Relative Frobenius norm of the anti-Hermitian part."""
        a = self.matrix
        num = np.linalg.norm(a - a.conj().T)
        den = max(np.linalg.norm(a), 1.0)
        return float(num / den)

    def is_hermitian(self, rtol: float = HERMITICITY_RTOL) -> bool:
        return self.hermiticity_defect() <= rtol

    def unitarity_defect(self) -> float:
        """Max-norm of U^dag U - 1."""
        u = self.matrix
        n = u.shape[0]
        return float(np.max(np.abs(u.conj().T @ u - np.eye(n))))

    def is_unitary(self, atol: float = UNITARITY_ATOL) -> bool:
        return self.unitarity_defect() <= atol


def identity(sp: HilbertSpace) -> Operator:
    return Operator(sp, np.eye(sp.total_dim, dtype=complex))


@dataclass(frozen=True)
class SpinOperators:
    """Standard angular-momentum matrices for one spin."""

    s: float
    x: Operator
    y: Operator
    z: Operator
    plus: Operator
    minus: Operator


def spin_operators(s) -> SpinOperators:
    """Build Sx, Sy, Sz, S+, S- for spin quantum number ``s``.

    ``s`` must be a positive half-integer (1/2, 1, 3/2, ...).  The matrices
    act on a (2s+1)-dimensional space with basis ordered m = s .. -s and
    satisfy [Sx, Sy] = i Sz and S+- = Sx +- i Sy.
    """
    two_s = float(s) * 2
    if abs(two_s - round(two_s)) > 1e-12 or round(two_s) < 1:
        raise ValueError(f"spin quantum number must be a positive half-integer, got {s}")
    s = round(two_s) / 2
    dim = int(round(two_s)) + 1
    m = s - np.arange(dim)  # s, s-1, ..., -s
    sz = np.diag(m).astype(complex)
    # <m+1| S+ |m> = sqrt(s(s+1) - m(m+1))
    ladder = np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1))
    sp_ = np.zeros((dim, dim), dtype=complex)
    sp_[np.arange(dim - 1), np.arange(1, dim)] = ladder
    sm = sp_.conj().T
    sx = (sp_ + sm) / 2
    sy = (sp_ - sm) / (2j)
    hs = HilbertSpace((("spin", dim),))
    return SpinOperators(
        s=s,
        x=Operator(hs, sx),
        y=Operator(hs, sy),
        z=Operator(hs, sz),
        plus=Operator(hs, sp_),
        minus=Operator(hs, sm),
    )


def embed(op: Operator, sp: HilbertSpace, site: str) -> Operator:
    """Embed a single-factor operator into ``sp``, identity elsewhere."""
    pos = sp.index(site)
    d_site = sp.factors[pos][1]
    if op.matrix.shape != (d_site, d_site):
        raise ValueError(
            f"operator dim {op.matrix.shape[0]} does not match factor {site!r} dim {d_site}"
        )
    out = np.array([[1.0 + 0j]])
    for i, (_, d) in enumerate(sp.factors):
        out = np.kron(out, op.matrix if i == pos else np.eye(d))
    return Operator(sp, out)


def embed_pair(op_a: Operator, op_b: Operator, sp: HilbertSpace, site_a: str, site_b: str) -> Operator:
    """Embed a product of two single-site operators (op_a on a, op_b on b)."""
    if site_a == site_b:
        raise ValueError(f"site collision: {site_a!r}")
    return Operator(sp, embed(op_a, sp, site_a).matrix @ embed(op_b, sp, site_b).matrix)


def hermitian_eig(h: Operator, rtol: float = HERMITICITY_RTOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a (tolerably) Hermitian operator.

    Symmetrizes H <- (H + H^dag)/2 first to absorb accumulation error from
    long operator sums, then raises if the defect exceeded ``rtol``.
    """
    defect = h.hermiticity_defect()
    if defect > rtol:
        raise NumericDomainError(
            f"operator is not Hermitian: relative defect {defect:.3e} > {rtol:.1e}"
        )
    sym = (h.matrix + h.matrix.conj().T) / 2
    w, v = np.linalg.eigh(sym)
    return w, v


def propagator_from_eig(sp: HilbertSpace, w: np.ndarray, v: np.ndarray, t: float) -> Operator:
    """U = V exp(-i 2 pi w t) V^dag from a precomputed eigendecomposition."""
    phases = np.exp(-2j * np.pi * w * t)
    return Operator(sp, (v * phases) @ v.conj().T)


def propagator(h: Operator, t: float) -> Operator:
    """Unitary U = exp(-i 2 pi H t) for H in MHz and t in microseconds."""
    w, v = hermitian_eig(h)
    return propagator_from_eig(h.space, w, v, float(t))


@dataclass(frozen=True)
class DensityState:
    """Density matrix on a :class:`HilbertSpace` (Hermitian, unit trace)."""

    space: HilbertSpace
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        n = self.space.total_dim
        if m.shape != (n, n):
            raise ValueError(f"matrix shape {m.shape} does not match space dim {n}")
        herm = np.linalg.norm(m - m.conj().T) / max(np.linalg.norm(m), 1.0)
        if herm > 1e-10:
            raise NumericDomainError(f"density matrix not Hermitian: defect {herm:.3e}")
        tr = m.trace()
        if abs(tr - 1.0) > TRACE_ATOL:
            raise NumericDomainError(f"density matrix trace {tr} != 1")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def purity(self) -> float:
        return float(np.real(np.einsum("ij,ji->", self.matrix, self.matrix)))


def basis_state(sp: HilbertSpace, index: int) -> DensityState:
    """Pure state |index><index| in the computational (tensor) basis."""
    m = np.zeros((sp.total_dim, sp.total_dim), dtype=complex)
    m[index, index] = 1.0
    return DensityState(sp, m)


def maximally_mixed(sp: HilbertSpace) -> DensityState:
    n = sp.total_dim
    return DensityState(sp, np.eye(n, dtype=complex) / n)


def product_state(sp: HilbertSpace, site_states: dict[str, np.ndarray]) -> DensityState:
    """Tensor product of per-site density matrices.

    Sites not listed get the maximally mixed state of their dimension.
    """
    out = np.array([[1.0 + 0j]])
    for lab, d in sp.factors:
        if lab in site_states:
            rho = np.asarray(site_states[lab], dtype=complex)
            if rho.shape != (d, d):
                raise ValueError(f"state for {lab!r} has shape {rho.shape}, expected {(d, d)}")
        else:
            rho = np.eye(d, dtype=complex) / d
        out = np.kron(out, rho)
    return DensityState(sp, out)


def evolve(state: DensityState, u: Operator) -> DensityState:
    """rho -> U rho U^dag."""
    if state.space != u.space:
        raise SpaceMismatchError("state and propagator on different spaces")
    if not u.is_unitary():
        raise NumericDomainError(
            f"propagator not unitary: defect {u.unitarity_defect():.3e}"
        )
    m = u.matrix @ state.matrix @ u.matrix.conj().T
    return DensityState(state.space, m)


def expectation(state: DensityState, obs: Operator) -> float:
    """Tr(rho * obs) for a Hermitian observable, returned as a real number."""
    if state.space != obs.space:
        raise SpaceMismatchError("state and observable on different spaces")
    if not obs.is_hermitian(1e-10):
        raise NumericDomainError("observable is not Hermitian")
    val = complex(np.einsum("ij,ji->", state.matrix, obs.matrix))
    if abs(val.imag) > EXPECTATION_IMAG_ATOL:
        raise NumericDomainError(f"expectation has imaginary part {val.imag:.3e}")
    return float(val.real)


def total_hamiltonian(sp: HilbertSpace, terms) -> Operator:
    """Sum a list of Operators on ``sp`` (empty sum is the zero operator)."""
    acc = np.zeros((sp.total_dim, sp.total_dim), dtype=complex)
    for term in terms:
        if term.space != sp:
            raise SpaceMismatchError("term on a different space")
        acc = acc + term.matrix
    return Operator(sp, acc)


def partial_trace_replace(state: DensityState, site: str, replacement: np.ndarray) -> DensityState:
    """Trace out one site and re-tensor it in a fixed state.

    Used for ideal optical re-initialization: the site's reduced state is
    discarded and replaced, all other correlations are kept.
    """
    sp = state.space
    pos = sp.index(site)
    dims = [d for _, d in sp.factors]
    d_site = dims[pos]
    repl = np.asarray(replacement, dtype=complex)
    if repl.shape != (d_site, d_site):
        raise ValueError(f"replacement shape {repl.shape}, expected {(d_site, d_site)}")
    n = len(dims)
    left = int(np.prod(dims[:pos], dtype=int)) if pos > 0 else 1
    right = int(np.prod(dims[pos + 1 :], dtype=int)) if pos + 1 < n else 1
    t = state.matrix.reshape(left, d_site, right, left, d_site, right)
    reduced = np.einsum("iajkal->ijkl", t)  # trace over the site's ket/bra axes
    full = np.zeros((sp.total_dim, sp.total_dim), dtype=complex)
    for i in range(left):
        for j in range(left):
            full[
                i * d_site * right : (i + 1) * d_site * right,
                j * d_site * right : (j + 1) * d_site * right,
            ] = np.kron(repl, reduced[i, :, j, :])
    return DensityState(sp, full)
