"""Nonlinear least squares for the experiment traces.

Three model families, each with an analytic Jacobian (validated against
finite differences in the tests):

* dips on a constant background:  y = c - sum_i A_i exp(-(x-mu_i)^2 / 2 s_i^2)
* exponential decay:              y = A exp(-t/T) + C
* damped sinusoid:                y = A exp(-t/tau) cos(2 pi f t + phi) + C

The optimizer is a plain Levenberg-Marquardt iteration: multiplicative
damping with up/down factors 10 and 0.1, at most 200 iterations, declared
converged when the largest relative parameter change of an accepted step
drops below 1e-8.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LM_LAMBDA_UP = 10.0
LM_LAMBDA_DOWN = 0.1
LM_MAX_ITERATIONS = 200
LM_PARAM_TOL = 1e-8


class UndersampledError(ValueError):
    """Trace is too sparse for the requested model."""


@dataclass(frozen=True)
class FitResult:
    """Converged fit parameters with 1-sigma uncertainties.

    ``parameters`` is None when the fit did not converge (the partial
    result is withheld); ``degenerate`` marks fits whose amplitude is
    indistinguishable from zero.
    """

    model: str
    parameter_names: tuple[str, ...]
    parameters: np.ndarray | None
    uncertainties: np.ndarray | None
    covariance: np.ndarray | None
    reduced_chi_square: float
    converged: bool
    iterations: int
    degenerate: bool = False
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        if self.parameters is None:
            raise KeyError("fit did not converge; parameters withheld")
        return float(self.parameters[self.parameter_names.index(name)])

    def uncertainty(self, name: str) -> float:
        if self.uncertainties is None:
            raise KeyError("fit did not converge; parameters withheld")
        return float(self.uncertainties[self.parameter_names.index(name)])

    def to_dict(self) -> dict:
        if not self.converged:
            return {"model": self.model, "converged": False,
                    "iterations": self.iterations}
        return {
            "model": self.model,
            "converged": True,
            "degenerate": self.degenerate,
            "iterations": self.iterations,
            "reduced_chi_square": self.reduced_chi_square,
            "parameters": {
                n: {"value": float(v), "uncertainty": float(u)}
                for n, v, u in zip(self.parameter_names, self.parameters,
                                   self.uncertainties)
            },
        }


def levenberg_marquardt(model_fn, jacobian_fn, x, y, p0,
                        max_iterations: int = LM_MAX_ITERATIONS):
    """Minimize sum((model(x, p) - y)^2) over p.

    Returns (p, covariance, chi2, converged, iterations).  ``jacobian_fn``
    must return d(model)/d(p) with shape (len(x), len(p)).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = np.array(p0, dtype=float)
    lam = 1e-3
    residual = model_fn(x, p) - y
    chi2 = float(residual @ residual)
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        jac = jacobian_fn(x, p)
        grad = jac.T @ residual
        jtj = jac.T @ jac
        stepped = False
        for _ in range(30):  # grow lambda until a step is accepted
            damped = jtj + lam * np.diag(np.clip(np.diag(jtj), 1e-30, None))
            try:
                delta = np.linalg.solve(damped, -grad)
            except np.linalg.LinAlgError:
                lam *= LM_LAMBDA_UP
                continue
            p_try = p + delta
            r_try = model_fn(x, p_try) - y
            chi2_try = float(r_try @ r_try)
            if chi2_try <= chi2 and np.all(np.isfinite(p_try)):
                rel = np.max(np.abs(delta) / np.maximum(np.abs(p), 1e-12))
                p, residual, chi2 = p_try, r_try, chi2_try
                lam = max(lam * LM_LAMBDA_DOWN, 1e-14)
                stepped = True
                if rel < LM_PARAM_TOL:
                    converged = True
                break
            lam *= LM_LAMBDA_UP
        if converged:
            break
        if not stepped:
            # no downhill step even at strong damping: either the residual
            # is already at machine floor (converged) or the fit is stuck
            y_scale = max(1.0, float(y @ y))
            converged = chi2 <= 1e-24 * y_scale or float(np.max(np.abs(grad))) <= 1e-12 * math.sqrt(chi2 * y_scale)
            break
    dof = max(len(x) - len(p), 1)
    jac = jacobian_fn(x, p)
    jtj = jac.T @ jac
    try:
        cov = np.linalg.inv(jtj) * (chi2 / dof)
    except np.linalg.LinAlgError:
        cov = np.full((len(p), len(p)), np.nan)
    return p, cov, chi2, converged, iterations


def _amplitude_scale(y) -> float:
    """Reference scale for judging a fitted amplitude negligible."""
    y = np.asarray(y, dtype=float)
    return float(max(np.max(y) - np.min(y), np.max(np.abs(y)), 1e-12))


def _finish(model: str, names, p, cov, chi2, converged, iterations, npoints,
            degenerate=False, meta=None) -> FitResult:
    dof = max(npoints - len(p), 1)
    converged = bool(converged)
    degenerate = bool(degenerate)
    if not converged:
        return FitResult(model, tuple(names), None, None, None,
                         float(chi2 / dof), False, iterations, degenerate,
                         meta or {})
    unc = np.sqrt(np.abs(np.diag(cov)))
    return FitResult(model, tuple(names), p, unc, cov, float(chi2 / dof),
                     True, iterations, degenerate, meta or {})


# ---------------------------------------------------------------------------
# Gaussian dips
# ---------------------------------------------------------------------------

def gaussian_dips_model(x, p):
    """y = c - sum_i A_i exp(-(x - mu_i)^2 / (2 sigma_i^2))."""
    y = np.full_like(np.asarray(x, dtype=float), p[0])
    for i in range((len(p) - 1) // 3):
        a, mu, sig = p[1 + 3 * i : 4 + 3 * i]
        y = y - a * np.exp(-((x - mu) ** 2) / (2.0 * sig ** 2))
    return y


def gaussian_dips_jacobian(x, p):
    x = np.asarray(x, dtype=float)
    n = (len(p) - 1) // 3
    jac = np.empty((len(x), len(p)))
    jac[:, 0] = 1.0
    for i in range(n):
        a, mu, sig = p[1 + 3 * i : 4 + 3 * i]
        g = np.exp(-((x - mu) ** 2) / (2.0 * sig ** 2))
        jac[:, 1 + 3 * i] = -g
        jac[:, 2 + 3 * i] = -a * g * (x - mu) / sig ** 2
        jac[:, 3 + 3 * i] = -a * g * (x - mu) ** 2 / sig ** 3
    return jac


def _mad(values: np.ndarray) -> float:
    med = np.median(values)
    return float(np.median(np.abs(values - med)))


def _smooth(y: np.ndarray, window: int) -> np.ndarray:
    if window < 2:
        return y.copy()
    kernel = np.ones(window) / window
    pad = window // 2
    padded = np.concatenate([np.full(pad, y[0]), y, np.full(pad, y[-1])])
    return np.convolve(padded, kernel, mode="same")[pad : pad + len(y)]


def find_dips(x, y, n_components: int, min_prominence: float | None = None):
    """Initial dip guesses: smoothed local minima ranked by prominence.

    The default prominence floor is 3x the noise level estimated from the
    median absolute first difference.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    window = max(3, len(y) // 50)
    ys = _smooth(y, window)
    noise = _mad(np.diff(y)) / math.sqrt(2.0)
    if min_prominence is None:
        min_prominence = 3.0 * noise
    candidates = []
    for i in range(1, len(ys) - 1):
        if ys[i] <= ys[i - 1] and ys[i] < ys[i + 1]:
            left_max = np.max(ys[: i + 1])
            right_max = np.max(ys[i:])
            prominence = min(left_max, right_max) - ys[i]
            if prominence >= min_prominence:
                candidates.append((prominence, i))
    candidates.sort(reverse=True)
    # greedily keep peaks separated by at least a few samples
    picked = []
    min_sep = max(2, len(y) // (8 * max(n_components, 1)))
    for prom, i in candidates:
        if all(abs(i - j) >= min_sep for _, j in picked):
            picked.append((prom, i))
        if len(picked) == n_components:
            break
    baseline = float(np.percentile(y, 90))
    guesses = []
    span = (x[-1] - x[0]) if len(x) > 1 else 1.0
    for prom, i in picked:
        # half-prominence width estimate around the minimum
        half = ys[i] + prom / 2
        lo = i
        while lo > 0 and ys[lo] < half:
            lo -= 1
        hi = i
        while hi < len(ys) - 1 and ys[hi] < half:
            hi += 1
        fwhm = abs(x[hi] - x[lo])
        sigma = max(fwhm / 2.3548, abs(span) / (20.0 * max(n_components, 1)))
        guesses.append((prom, float(x[i]), sigma))
    # pad with evenly spaced shallow dips if detection fell short
    k = len(guesses)
    while len(guesses) < n_components:
        frac = (len(guesses) + 0.5) / n_components
        guesses.append((abs(baseline) * 0.01 + noise, float(x[0] + frac * span),
                        abs(span) / (6.0 * n_components)))
        k += 1
    guesses.sort(key=lambda g: g[1])
    return baseline, guesses


def fit_gaussians(x, y, n_components: int, init: np.ndarray | None = None) -> FitResult:
    """Fit ``n_components`` Gaussian dips on a constant background."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    if len(x) <= 3 * n_components + 1:
        raise UndersampledError(
            f"need more than {3 * n_components + 1} points for {n_components} Gaussians"
        )
    names = ["c"]
    for i in range(n_components):
        names += [f"A{i + 1}", f"mu{i + 1}", f"sigma{i + 1}"]
    if init is None:
        baseline, guesses = find_dips(x, y, n_components)
        p0 = [baseline]
        for prom, mu, sigma in guesses:
            p0 += [max(prom, 1e-12), mu, sigma]
        p0 = np.array(p0)
    else:
        p0 = np.asarray(init, dtype=float)
        if len(p0) != 1 + 3 * n_components:
            raise ValueError(f"init must have length {1 + 3 * n_components}")
    p, cov, chi2, ok, iters = levenberg_marquardt(
        gaussian_dips_model, gaussian_dips_jacobian, x, y, p0
    )
    if ok:
        # canonicalize: positive widths, components sorted by center
        comps = sorted(
            ((p[1 + 3 * i], p[2 + 3 * i], abs(p[3 + 3 * i])) for i in range(n_components)),
            key=lambda c: c[1],
        )
        reorder = [p[0]]
        for a, mu, sig in comps:
            reorder += [a, mu, sig]
        p = np.array(reorder)
        # sorting permutes the covariance; refresh it at the solution
        jac = gaussian_dips_jacobian(x, p)
        try:
            cov = np.linalg.inv(jac.T @ jac) * (chi2 / max(len(x) - len(p), 1))
        except np.linalg.LinAlgError:
            cov = np.full((len(p), len(p)), np.nan)
    scale = _amplitude_scale(y)
    degenerate = ok and all(
        abs(p[1 + 3 * i]) < 1e-6 * scale for i in range(n_components)
    )
    return _finish("gaussian-dips", names, p, cov, chi2, ok, iters, len(x),
                   degenerate, {"n_components": n_components})


def gaussian_area(fit: FitResult, component: int) -> float:
    """Integrated area A * sigma * sqrt(2 pi) of one dip."""
    a = fit[f"A{component + 1}"]
    sig = fit[f"sigma{component + 1}"]
    return a * abs(sig) * math.sqrt(2.0 * math.pi)


def fwhm(fit: FitResult, component: int = 0) -> tuple[float, float]:
    """Full width at half maximum of a Gaussian component, with uncertainty."""
    factor = 2.0 * math.sqrt(2.0 * math.log(2.0))
    name = f"sigma{component + 1}"
    if name not in fit.parameter_names:
        raise KeyError(f"fit has no component {component}")
    return factor * abs(fit[name]), factor * fit.uncertainty(name)


# ---------------------------------------------------------------------------
# Exponential decay
# ---------------------------------------------------------------------------

def exp_decay_model(t, p):
    a, tau, c = p
    return a * np.exp(-np.asarray(t, dtype=float) / tau) + c


def exp_decay_jacobian(t, p):
    t = np.asarray(t, dtype=float)
    a, tau, c = p
    e = np.exp(-t / tau)
    jac = np.empty((len(t), 3))
    jac[:, 0] = e
    jac[:, 1] = a * e * t / tau ** 2
    jac[:, 2] = 1.0
    return jac


def fit_exp_decay(t, y) -> FitResult:
    """Fit y = A exp(-t/T) + C; T is the decay constant."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) < 4:
        raise UndersampledError("need at least 4 points for an exponential fit")
    c0 = float(y[-1])
    a0 = float(y[0] - c0)
    span = float(t[-1] - t[0]) or 1.0
    # log-linear slope estimate where the signal is clear of the tail
    tau0 = span / 3.0
    clear = y - c0
    if a0 != 0:
        pos = clear / a0 > 0.05
        if np.count_nonzero(pos) >= 2:
            tt, ll = t[pos], np.log(np.abs(clear[pos] / a0))
            slope = np.polyfit(tt, ll, 1)[0]
            if slope < 0:
                tau0 = min(max(-1.0 / slope, span / 100.0), span * 100.0)
    p0 = np.array([a0 if a0 != 0 else 1e-12, tau0, c0])
    p, cov, chi2, ok, iters = levenberg_marquardt(
        exp_decay_model, exp_decay_jacobian, t, y, p0
    )
    degenerate = ok and abs(p[0]) < 1e-6 * _amplitude_scale(y)
    return _finish("exp-decay", ("A", "T", "C"), p, cov, chi2, ok, iters,
                   len(t), degenerate)


# ---------------------------------------------------------------------------
# Damped sinusoid
# ---------------------------------------------------------------------------

def damped_sinusoid_model(t, p):
    a, tau, f, phi, c = p
    t = np.asarray(t, dtype=float)
    return a * np.exp(-t / tau) * np.cos(2.0 * math.pi * f * t + phi) + c


def damped_sinusoid_jacobian(t, p):
    t = np.asarray(t, dtype=float)
    a, tau, f, phi, c = p
    e = np.exp(-t / tau)
    arg = 2.0 * math.pi * f * t + phi
    cos, sin = np.cos(arg), np.sin(arg)
    jac = np.empty((len(t), 5))
    jac[:, 0] = e * cos
    jac[:, 1] = a * e * cos * t / tau ** 2
    jac[:, 2] = -a * e * sin * 2.0 * math.pi * t
    jac[:, 3] = -a * e * sin
    jac[:, 4] = 1.0
    return jac


def dominant_frequency(t, y) -> float:
    """Strongest non-DC Fourier component of a uniformly sampled trace."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    dt = float(np.mean(np.diff(t)))
    spec = np.fft.rfft(y - np.mean(y))
    freqs = np.fft.rfftfreq(len(y), dt)
    if len(spec) < 2:
        return 0.0
    k = 1 + int(np.argmax(np.abs(spec[1:])))
    return float(freqs[k])


def fit_damped_sinusoid(t, y) -> FitResult:
    """Fit y = A exp(-t/tau) cos(2 pi f t + phi) + C.

    The frequency is seeded from the discrete Fourier peak; the sampling
    must be above Nyquist for the dominant frequency.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) < 8:
        raise UndersampledError("need at least 8 points for a damped sinusoid")
    f0 = dominant_frequency(t, y)
    dt = float(np.mean(np.diff(t)))
    # a dominant component near the sampling limit is indistinguishable from
    # an alias; genuine aliasing that folds deep into the band cannot be
    # detected from the samples alone
    if f0 > 0 and f0 >= 0.45 / dt:
        raise UndersampledError(
            f"dominant frequency {f0:g} sits too close to the sampling limit "
            f"{0.5 / dt:g}; increase the sampling density"
        )
    c0 = float(np.mean(y))
    spec = np.fft.rfft(y - c0)
    freqs = np.fft.rfftfreq(len(y), dt)
    k = 1 + int(np.argmax(np.abs(spec[1:]))) if len(spec) > 1 else 0
    phi0 = float(np.angle(spec[k])) - 2.0 * math.pi * f0 * t[0]
    a0 = 2.0 * np.abs(spec[k]) / len(y)
    span = float(t[-1] - t[0]) or 1.0
    p0 = np.array([a0 if a0 > 0 else 1e-12, span, f0 if f0 > 0 else 1.0 / span, phi0, c0])
    p, cov, chi2, ok, iters = levenberg_marquardt(
        damped_sinusoid_model, damped_sinusoid_jacobian, t, y, p0
    )
    if ok:
        # canonical form: positive amplitude and frequency, phase in (-pi, pi]
        a, tau, f, phi, c = p
        if f < 0:
            f, phi = -f, -phi
        if a < 0:
            a, phi = -a, phi + math.pi
        phi = math.remainder(phi, 2.0 * math.pi)
        p = np.array([a, tau, f, phi, c])
    degenerate = ok and abs(p[0]) < 1e-6 * _amplitude_scale(y)
    return _finish("damped-sinusoid", ("A", "tau", "f", "phi", "C"), p, cov,
                   chi2, ok, iters, len(t), degenerate)
