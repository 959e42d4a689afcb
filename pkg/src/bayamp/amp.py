"""Finite-size AMP solvers, the mean-field baseline, and error metrics.

The measurement update carries the Onsager correction
-Theta (y - w) / (delta + Theta); dropping it gives the naive mean-field
(iterative thresholding) baseline.  Damping with 0 <= damping < 1 acts on
(w, Theta) only; damping = 0 reproduces the plain algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .priors import ComplexBernoulliGauss, MixturePrior, SectionPrior


class AmpNumericsError(RuntimeError):
    """Raised when the solver state leaves the floating-point range."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass
class AmpConfig:
    damping: float = 0.0
    tol: float = 1e-8
    t_max: int = 3000
    delta: float = 0.0  # noise variance, 1/snr with unit signal power
    variance_floor: float = 1e-20

    def __post_init__(self):
        if not (0.0 <= self.damping < 1.0):
            raise ValueError("damping must be in [0, 1)")
        if self.delta < 0:
            raise ValueError("noise variance must be >= 0")

    @classmethod
    def from_snr(cls, snr, power=1.0, **kwargs):
        return cls(delta=power / snr, **kwargs)


@dataclass
class AmpState:
    a: np.ndarray
    v: np.ndarray
    w: np.ndarray
    theta: np.ndarray
    R: np.ndarray
    Sigma2: np.ndarray
    t: int = 0
    delta_update: float = np.inf


@dataclass
class AmpResult:
    a: np.ndarray
    v: np.ndarray
    converged: bool
    diverged: bool
    iterations: int
    trace: dict
    state: AmpState
    free_energy: float | None = None


def mse(a, s):
    """Mean squared error; for complex estimates, per real/imag part."""
    a = np.asarray(a)
    s = np.asarray(s)
    if a.shape != s.shape:
        raise ValueError("estimate and truth must have the same length")
    if np.iscomplexobj(a) or np.iscomplexobj(s):
        return float(np.mean(np.abs(a - s) ** 2) / 2.0)
    return float(np.mean((a - s) ** 2))


def hard_decision(a, B):
    """Per-section argmax of the posterior means (ties to the lowest index)."""
    return np.argmax(np.asarray(a).reshape(-1, B), axis=1) + 1


def ser(a, s, B):
    """Fraction of wrongly decoded sections under the argmax decision."""
    a = np.asarray(a)
    s = np.asarray(s)
    if a.shape != s.shape:
        raise ValueError("estimate and truth must have the same length")
    return float(np.mean(hard_decision(a, B) != hard_decision(s, B)))


def _prior_init(prior, N):
    if isinstance(prior, SectionPrior):
        L = N // prior.B
        return prior.mean(L).copy(), prior.variance(L).copy()
    if isinstance(prior, ComplexBernoulliGauss):
        a0 = np.full(N, prior.mean_value(), dtype=complex)
        return a0, np.full(N, prior.variance_per_part())
    return (np.full(N, prior.mean()), np.full(N, prior.variance()))


class _FullTapSq:
    """Squared-operator applications with |F|^2 replaced by J_rc / L.

    Valid for block operators in the large-signal limit: Theta and Sigma^2
    then depend on the block indices only.
    """

    def __init__(self, op):
        self.op = op
        self.J = op.variances * op.rescale**2
        self.row_sizes = op.row_sizes
        self.col_sizes = op.col_sizes

    def _col_sums(self, v):
        out = np.empty(len(self.col_sizes))
        for c, (lo, hi) in enumerate(zip(self.op.col_offsets[:-1], self.op.col_offsets[1:])):
            out[c] = v[lo:hi].sum()
        return out

    def _row_sums(self, u):
        out = np.empty(len(self.row_sizes))
        for r, (lo, hi) in enumerate(zip(self.op.row_offsets[:-1], self.op.row_offsets[1:])):
            out[r] = u[lo:hi].sum()
        return out

    def forward_sq(self, v):
        per_row = self.J @ self._col_sums(v)
        return np.repeat(per_row, self.row_sizes)

    def backward_sq(self, u):
        per_col = self.J.T @ self._row_sums(u)
        return np.repeat(per_col, self.col_sizes)


def _per_block_mse(op, a, truth):
    out = np.empty(len(op.col_sizes))
    for c, (lo, hi) in enumerate(zip(op.col_offsets[:-1], op.col_offsets[1:])):
        d = a[lo:hi] - truth[lo:hi]
        out[c] = np.mean(np.abs(d) ** 2)
    return out


def run_amp(op, y, prior, config: AmpConfig, truth=None, full_tap=False,
            em_callback=None, init=None):
    """Iterate AMP to convergence.

    Records per-iteration update size, and MSE / SER when the truth is
    given (plus per-block MSE for block operators).  ``init=(a0, v0)``
    overrides the canonical prior-mean initialization (e.g. an informed
    start on the signal itself).  ``em_callback(state, t)``, if given, is
    invoked after each iteration and may return an updated noise variance
    (supports expectation-maximization wrappers).
    Returns a partial result flagged ``diverged`` if the update norm grows
    a millionfold over its initial value.
    """
    N = op.cols
    M = op.rows
    if len(y) != M:
        raise ValueError(f"measurement length {len(y)} does not match operator rows {M}")
    sq = _FullTapSq(op) if full_tap else op
    delta = config.delta
    ad = config.damping

    if init is not None:
        a = np.array(init[0], dtype=float if not np.iscomplexobj(init[0]) else complex)
        v = np.maximum(np.array(init[1], dtype=float), config.variance_floor)
    else:
        a, v = _prior_init(prior, N)
    w = np.array(y, copy=True)
    theta = sq.forward_sq(v)
    R = np.zeros_like(a)
    Sigma2 = np.ones(N)

    trace = {"t": [], "delta": [], "mse": [], "ser": [], "delta_noise": [],
             "per_block_mse": []}
    is_sections = isinstance(prior, SectionPrior)
    has_blocks = hasattr(op, "col_offsets") and truth is not None

    def record(t, diff):
        trace["t"].append(t)
        trace["delta"].append(diff)
        trace["delta_noise"].append(delta)
        if truth is not None:
            trace["mse"].append(mse(a, truth))
            if is_sections:
                trace["ser"].append(ser(a, truth, prior.B))
            if has_blocks:
                trace["per_block_mse"].append(_per_block_mse(op, a, truth))

    converged = False
    diverged = False
    first_diff = None
    diff = np.inf
    t = 0
    record(0, np.nan)
    while t < config.t_max:
        theta_tilde = sq.forward_sq(v)
        resid = (y - w) / (delta + theta)
        w = ad * w + (1.0 - ad) * (op.forward(a) - theta_tilde * resid)
        theta = ad * theta + (1.0 - ad) * theta_tilde
        gain = 1.0 / (delta + theta)
        Sigma2 = 1.0 / sq.backward_sq(gain)
        R = a + Sigma2 * op.backward((y - w) * gain)
        a_new, v = prior.denoise(Sigma2, R)
        diff = float(np.mean(np.abs(a_new - a) ** 2))
        a = a_new
        t += 1
        if not np.all(np.isfinite(a)):
            raise AmpNumericsError(
                "non-finite estimate at iteration %d" % t,
                state=AmpState(a, v, w, theta, R, Sigma2, t, diff))
        record(t, diff)
        if em_callback is not None:
            new_delta = em_callback(AmpState(a, v, w, theta, R, Sigma2, t, diff), t)
            if new_delta is not None:
                delta = new_delta
        if first_diff is None and diff > 0:
            first_diff = diff
        if diff < config.tol:
            converged = True
            break
        if first_diff is not None and diff > 1e6 * first_diff:
            diverged = True
            break

    state = AmpState(a, v, w, theta, R, Sigma2, t, diff)
    trace = {k: np.array(val) for k, val in trace.items() if len(val)}
    free_energy = None
    if delta > 0 and not np.iscomplexobj(a):
        try:
            free_energy = instance_free_energy(state, op, y, prior, delta)
        except (ValueError, NotImplementedError):
            free_energy = None
    return AmpResult(a, v, converged, diverged, t, trace, state, free_energy)


def run_complex_amp(op, y, prior: ComplexBernoulliGauss, config: AmpConfig,
                    truth=None):
    """AMP for complex signals: same loop with the conjugate backward pass."""
    if not isinstance(prior, ComplexBernoulliGauss):
        raise TypeError("complex AMP expects a ComplexBernoulliGauss prior")
    y = np.asarray(y, dtype=complex)
    return run_amp(op, y, prior, config, truth=truth)


def run_iterative_thresholding(op, y, prior, config: AmpConfig, truth=None,
                               rescale_columns=False):
    """Naive mean-field baseline: no Onsager term, fixed Sigma^2 = delta/sum F^2."""
    delta = config.delta
    if delta <= 0:
        raise ValueError("the mean-field baseline needs a positive noise variance")
    col_norms = op.backward_sq(np.ones(op.rows))
    if rescale_columns:
        col_norms = np.ones_like(col_norms)
        # interpret the operator as already column-normalized
    Sigma2 = delta / col_norms
    N = op.cols
    a, v = _prior_init(prior, N)
    trace = {"t": [0], "delta": [np.nan], "mse": [], "ser": []}
    is_sections = isinstance(prior, SectionPrior)
    if truth is not None:
        trace["mse"].append(mse(a, truth))
        if is_sections:
            trace["ser"].append(ser(a, truth, prior.B))
    converged = False
    t = 0
    diff = np.inf
    while t < config.t_max:
        R = a + (Sigma2 / delta) * op.backward(y - op.forward(a))
        a_new, v = prior.denoise(Sigma2, R)
        diff = float(np.mean(np.abs(a_new - a) ** 2))
        a = a_new
        t += 1
        trace["t"].append(t)
        trace["delta"].append(diff)
        if truth is not None:
            trace["mse"].append(mse(a, truth))
            if is_sections:
                trace["ser"].append(ser(a, truth, prior.B))
        if diff < config.tol:
            converged = True
            break
    state = AmpState(a, v, op.forward(a), np.zeros(op.rows), R, Sigma2, t, diff)
    trace = {k: np.array(val) for k, val in trace.items() if len(val)}
    return AmpResult(a, v, converged, False, t, trace, state, None)


def amp_step(state: AmpState, op, y, prior, config: AmpConfig):
    """One AMP update (the loop body of run_amp), returning the new state."""
    delta = config.delta
    ad = config.damping
    theta_tilde = op.forward_sq(state.v)
    resid = (y - state.w) / (delta + state.theta)
    w = ad * state.w + (1.0 - ad) * (op.forward(state.a) - theta_tilde * resid)
    theta = ad * state.theta + (1.0 - ad) * theta_tilde
    gain = 1.0 / (delta + theta)
    Sigma2 = 1.0 / op.backward_sq(gain)
    R = state.a + Sigma2 * op.backward((y - w) * gain)
    a, v = prior.denoise(Sigma2, R)
    if not np.all(np.isfinite(a)):
        raise AmpNumericsError("non-finite estimate",
                               state=AmpState(a, v, w, theta, R, Sigma2, state.t + 1))
    diff = float(np.mean(np.abs(a - state.a) ** 2))
    return AmpState(a, v, w, theta, R, Sigma2, state.t + 1, diff)


def initial_state(op, y, prior, config: AmpConfig | None = None):
    """Canonical initialization: prior mean/variance, w = y."""
    a, v = _prior_init(prior, op.cols)
    theta = op.forward_sq(v)
    return AmpState(a, v, np.array(y, copy=True), theta,
                    np.zeros_like(a), np.ones(op.cols), 0, np.inf)


def instance_free_energy(state: AmpState, op, y, prior, delta):
    """Bethe free energy of the instance at an AMP fixed point.

    Valid only at a fixed point of the iteration; lower is better.
    """
    if delta <= 0:
        raise ValueError("free energy needs delta > 0 (use a small floor)")
    a, v, R, Sigma2 = state.a, state.v, state.R, state.Sigma2
    resid = y - op.forward(a)
    theta_tilde = op.forward_sq(v)
    factor_term = 0.5 * float(np.sum(resid**2 / delta + np.log1p(theta_tilde / delta)))
    M = op.rows
    const = 0.5 * M * np.log(2.0 * np.pi * delta)
    if isinstance(prior, SectionPrior):
        log_z = prior.log_partition_kernel(Sigma2, R)
        quad = ((R - a) ** 2 + v) / (2.0 * Sigma2)
        kl = -float(np.sum(log_z) + np.sum(quad))
    elif isinstance(prior, MixturePrior):
        log_z = prior.log_partition_kernel(Sigma2, R)
        kl = -float(np.sum(log_z + ((R - a) ** 2 + v) / (2.0 * Sigma2)))
    else:
        raise NotImplementedError("free energy implemented for scalar and section priors")
    return factor_term + const + kl
