"""Replica (Bethe) free-entropy curves and phase-transition finders.

Phi(E) is evaluated up to E-independent constants; its local maxima are
exactly the state-evolution fixed points, via the identity

    dPhi/dE = (alpha B / 2) (SE(E) - E) / (1/(B snr) + E)^2.

Maxima are therefore located as downward sign crossings of the residual
SE(E) - E (cheap and deterministic), and their heights by direct
evaluation of Phi.  The three transitions of a family swept over a
control parameter (measurement rate alpha, or code rate R):

* BP / spinodal: largest control value at which two local maxima coexist
  (the high-error one blocks message passing from a cold start),
* optimal: the two maxima have exactly the same height,
* static: smallest control value at which two local maxima coexist.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfc, logsumexp

from .state_evolution import (SeConfig, _bigaussian_fc_average, _gl_nodes,
                              initial_mse_bigaussian, rate_to_alpha, se_sigma)


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

def _phi_first_term(E, alpha, B, snr, bm2):
    noise = 0.0 if np.isinf(snr) else 1.0 / snr
    tot = noise + B * E
    return -(alpha * B / 2.0) * (np.log(tot) + (bm2 - B * E) / tot)


def phi_bigaussian(E, rho, eps, alpha, delta=0.0, sigma1_sq=1.0, quad_order=48):
    """Free entropy (per component) for the two-Gaussian sparsity prior.

    The inner 1-D integral is evaluated on Gauss-Legendre panels placed
    around the analytic component-swap radius, where the log-partition
    integrand kinks.
    """
    E = np.atleast_1d(np.asarray(E, dtype=float))
    w = np.array([rho, 1.0 - rho])
    s2 = np.array([sigma1_sq, eps])
    m2 = float(w @ s2)
    tot = delta + E
    first = -(alpha / 2.0) * (np.log(tot) + (m2 - E) / tot)
    Sigma2 = tot / alpha
    nE = E.shape[0]
    # swap radius of the posterior component weights (see state_evolution)
    t1, t2 = Sigma2 + sigma1_sq, Sigma2 + eps
    gap = sigma1_sq - eps
    with np.errstate(divide="ignore", invalid="ignore"):
        num = np.log(np.maximum((1.0 - rho) ** 2 * t1 / (rho**2 * t2), 1e-300))
        Rstar2 = np.where(gap > 0, num * t1 * t2 / np.maximum(gap, 1e-300), 0.0)
    Rstar = np.sqrt(np.maximum(Rstar2, 0.0))
    width_R = np.where(Rstar > 0, t1 * t2 / (np.maximum(Rstar, 1e-300) * max(gap, 1e-300)),
                       np.sqrt(np.maximum(t2, 1e-300)))
    x_gl, w_gl = _gl_nodes(quad_order)
    z_cov = 42.0
    integral = np.zeros(nE)
    for w_i, s_i in zip(w, s2):
        if w_i == 0.0:
            continue
        scale = np.sqrt(s_i + Sigma2)
        z_star = Rstar / scale
        z_w = np.minimum(width_R / scale, z_cov)
        b1 = np.clip(z_star - 8.0 * z_w, 0.0, z_cov)
        b2 = np.clip(z_star + 8.0 * z_w, 0.0, z_cov)
        bounds = np.stack([np.zeros(nE), b1, b2, np.full(nE, z_cov)], axis=1)
        for k in range(3):
            lo, hi = bounds[:, k], bounds[:, k + 1]
            half = 0.5 * (hi - lo)
            mid = 0.5 * (hi + lo)
            z = mid[:, None] + half[:, None] * x_gl[None, :]
            # log sum_j w_j (1 + s_j/Sigma2)^(-1/2) exp(q_ij z^2)
            S2 = Sigma2[:, None]
            zz = z**2
            terms = []
            for w_j, s_j in zip(w, s2):
                if w_j == 0.0:
                    continue
                coef = np.log(w_j) - 0.5 * np.log1p(s_j / S2)
                q = (1.0 + s_i / S2) * s_j / (2.0 * (s_j + S2))
                terms.append(coef + q * zz)
            inner = logsumexp(np.stack(terms), axis=0)
            phi_z = np.exp(-0.5 * zz) / np.sqrt(2.0 * np.pi)
            integral += w_i * 2.0 * (half[:, None] * w_gl[None, :] * phi_z * inner).sum(axis=1)
    out = first + integral
    return out if out.shape != (1,) else float(out[0])


def _sections_b2_kernels(g, quad_order=48):
    """Deterministic B=2 section integrals at inverse field width g.

    Returns (E-kernel, SER, I-term of the potential); the integrands kink
    at |delta| = g (delta = z_2 - z_1 of variance 2), so Gauss-Legendre
    panels are placed around both crossings.
    """
    g = float(g)
    if g * g > 600.0:
        return 0.0, 0.0, 0.5 * g * g
    x_gl, w_gl = _gl_nodes(quad_order)
    cov = 60.0
    win = 9.0 / max(g, 0.2)
    cuts = np.unique(np.clip(np.array(
        [-cov, -g - win, -g + win, -win, win, g - win, g + win, cov]), -cov, cov))
    e_val = 0.0
    i_val = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi <= lo:
            continue
        half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
        d = mid + half * x_gl
        wq = half * w_gl * np.exp(-d**2 / 4.0) / np.sqrt(4.0 * np.pi)  # N(0, 2)
        f11 = 1.0 / (1.0 + np.exp(np.minimum(-g * g + g * d, 700.0)))
        f21 = 1.0 / (1.0 + np.exp(np.minimum(g * g + g * d, 700.0)))
        e_val += float(wq @ (((f11 - 1.0) ** 2 + f21**2) / 2.0))
        i_val += float(wq @ np.log1p(np.exp(np.minimum(-g * g + g * d, 700.0))))
    ser = 0.5 * erfc(g / 2.0)
    return e_val, ser, 0.5 * g * g + i_val


def se_step_sections_b2(E, R, snr, quad_order=48):
    """Deterministic (E', SER') for B = 2 section codes."""
    Sigma2 = se_sigma(E, rate_to_alpha(R, 2), snr, 2)
    e, s, _ = _sections_b2_kernels(1.0 / np.sqrt(Sigma2), quad_order)
    return e, s


def phi_sections(E, B, R, snr, cfg: SeConfig = None, z_batch=None):
    """Free entropy (per section) of a constant-power section code.

    Deterministic panel quadrature for B = 2; Monte Carlo with a
    log-sum-exp inner evaluation otherwise (pass ``z_batch`` to share the
    draws across E values and bisection steps: common random numbers).
    """
    cfg = cfg or SeConfig()
    E = np.atleast_1d(np.asarray(E, dtype=float))
    lB = np.log(B)
    alpha = rate_to_alpha(R, B)
    first = _phi_first_term(E, alpha, B, snr, 1.0)
    Sigma2 = se_sigma(E, alpha, snr, B)
    g = 1.0 / np.sqrt(Sigma2)
    if B == 2:
        integral = np.array([_sections_b2_kernels(gn, cfg.quad_order)[2] for gn in g])
    else:
        if z_batch is None:
            rng = np.random.default_rng(cfg.seed)
            z_batch = rng.standard_normal((cfg.mc_samples, B), dtype=np.float32)
        integral = np.empty(E.shape)
        zb = z_batch.astype(np.float64, copy=False)
        for n, gn in enumerate(g):
            u = gn * zb
            u[:, 0] += 0.5 * gn**2
            u[:, 1:] -= 0.5 * gn**2
            integral[n] = float(np.mean(logsumexp(u, axis=1)))
            u[:, 0] -= 0.5 * gn**2
            u[:, 1:] += 0.5 * gn**2
            u /= gn
    out = first + integral
    return out if out.shape != (1,) else float(out[0])


def phi_generic(E, prior, alpha, snr, cfg: SeConfig = None, samples=None):
    """Sampled free entropy for any prior exposing log_partition_kernel.

    samples, if given, is (s, z) with s drawn from the prior and z standard
    normal of the same shape (common random numbers across E values).
    """
    from .priors import MixturePrior, SectionPrior

    cfg = cfg or SeConfig()
    E = np.atleast_1d(np.asarray(E, dtype=float))
    if isinstance(prior, SectionPrior):
        B = prior.B
        powers = np.atleast_1d(np.asarray(prior.power, dtype=float))
        bm2 = float(np.mean(powers**2))
    elif isinstance(prior, MixturePrior):
        B = 1
        bm2 = prior.second_moment()
    else:
        raise TypeError("phi_generic expects a mixture or section prior")
    first = _phi_first_term(E, alpha, B, snr, bm2)
    noise = 0.0 if np.isinf(snr) else 1.0 / (B * snr)
    if samples is None:
        rng = np.random.default_rng(cfg.seed)
        n = cfg.mc_samples
        if isinstance(prior, SectionPrior):
            s, _ = prior.sample(n, rng)
            s = s.reshape(n, B)
        else:
            s = prior.sample(n, rng)
        z = rng.standard_normal(s.shape)
        samples = (s, z)
    s, z = samples
    out = np.empty(E.shape)
    for i, e in enumerate(E):
        Sigma2 = (noise + e) / alpha
        R = (s + np.sqrt(Sigma2) * z).reshape(-1)
        log_zk = prior.log_partition_kernel(Sigma2, R)
        quad = (R**2).reshape(s.shape).sum(axis=-1) if s.ndim > 1 else R**2
        if s.ndim > 1:
            quad = quad
        out[i] = first[i] + float(np.mean(log_zk + quad.reshape(log_zk.shape)
                                          / (2.0 * Sigma2)))
    return out if out.shape != (1,) else float(out[0])


# ---------------------------------------------------------------------------
# curve analysis: maxima from the state-evolution residual
# ---------------------------------------------------------------------------

@dataclass
class PotentialCurve:
    E: np.ndarray
    phi: np.ndarray | None
    maxima: list          # [(E*, phi*)] sorted by E
    classification: str   # 'single-max' or 'two-max'

    @property
    def low_max(self):
        return self.maxima[0]

    @property
    def high_max(self):
        return self.maxima[-1]


def log_grid(lo, hi, n=400):
    return np.geomspace(lo, hi, n)


def build_potential_curve(phi_fn, E_grid, refine=True):
    """Locate/refine maxima of a sampled potential (generic fallback).

    A rising left edge counts as a boundary maximum (the strictly-sparse
    noiseless limit pushes the low-error maximum to E -> 0).
    """
    from scipy.optimize import minimize_scalar

    E_grid = np.asarray(E_grid, dtype=float)
    phi = np.asarray(phi_fn(E_grid), dtype=float)
    maxima = []
    if phi[0] > phi[1]:
        maxima.append((float(E_grid[0]), float(phi[0])))
    d = np.diff(phi)
    for i in range(1, len(phi) - 1):
        if d[i - 1] > 0 and d[i] <= 0:
            if refine:
                res = minimize_scalar(
                    lambda e: -float(np.atleast_1d(phi_fn(e))[0]),
                    bounds=(E_grid[i - 1], E_grid[i + 1]), method="bounded",
                    options={"xatol": 1e-6 * E_grid[i]})
                maxima.append((float(res.x), -float(res.fun)))
            else:
                maxima.append((float(E_grid[i]), float(phi[i])))
    if phi[-1] > phi[-2]:
        maxima.append((float(E_grid[-1]), float(phi[-1])))
    classification = "two-max" if len(maxima) >= 2 else "single-max"
    return PotentialCurve(E_grid, phi, maxima, classification)


def curve_from_se_residual(residual_fn, phi_fn, E_grid, refine=True):
    """Maxima as downward sign crossings of g(E) = SE(E) - E.

    ``residual_fn`` must accept the whole grid (vectorized); heights come
    from ``phi_fn`` only at the located maxima.  A negative residual at the
    left grid edge marks a boundary maximum there.  Near a coalescence of
    fixed points the crossing pair can hide between grid points, so grid
    dips (local minima of positive g) and humps (local maxima of negative
    g) are refined before being dismissed.
    """
    from scipy.optimize import minimize_scalar

    E_grid = np.asarray(E_grid, dtype=float)
    g = np.asarray(residual_fn(E_grid), dtype=float)

    def g_scalar(e):
        return float(np.atleast_1d(residual_fn(e))[0])

    maxima_E = []
    if g[0] < 0:
        maxima_E.append(float(E_grid[0]))
    sign = np.sign(g)
    crossings_down = []
    for i in range(len(E_grid) - 1):
        if sign[i] > 0 and sign[i + 1] <= 0:
            if refine:
                e_star = brentq(g_scalar, E_grid[i], E_grid[i + 1],
                                xtol=1e-300, rtol=1e-12)
            else:
                e_star = float(E_grid[i + 1])
            crossings_down.append(float(e_star))
    maxima_E.extend(crossings_down)
    if refine:
        # hidden crossing pairs: refine shallow grid extrema of g
        for i in range(1, len(E_grid) - 1):
            lo, hi = E_grid[i - 1], E_grid[i + 1]
            if g[i] > 0 and g[i] < g[i - 1] and g[i] <= g[i + 1] \
                    and g[i] < 0.05 * max(g[i - 1], g[i + 1]):
                res = minimize_scalar(g_scalar, bounds=(lo, hi), method="bounded",
                                      options={"xatol": 1e-9 * E_grid[i]})
                if res.fun < 0:  # a dip below zero: down- then up-crossing
                    maxima_E.append(float(brentq(g_scalar, lo, res.x,
                                                 xtol=1e-300, rtol=1e-12)))
            elif g[i] < 0 and g[i] > g[i - 1] and g[i] >= g[i + 1] \
                    and g[i] > 0.05 * min(g[i - 1], g[i + 1]):
                res = minimize_scalar(lambda e: -g_scalar(e), bounds=(lo, hi),
                                      method="bounded",
                                      options={"xatol": 1e-9 * E_grid[i]})
                if -res.fun > 0:  # a hump above zero: the downward exit is a max
                    maxima_E.append(float(brentq(g_scalar, res.x, hi,
                                                 xtol=1e-300, rtol=1e-12)))
    heights = [float(np.atleast_1d(phi_fn(e))[0]) for e in maxima_E]
    maxima = sorted(zip(maxima_E, heights))
    classification = "two-max" if len(maxima) >= 2 else "single-max"
    return PotentialCurve(E_grid, None, maxima, classification)


@dataclass
class TransitionSet:
    bp: float | None
    opt: float | None
    static: float | None
    bp_bracket: tuple = None
    opt_bracket: tuple = None
    static_bracket: tuple = None

    def ordered(self):
        vals = [v for v in (self.static, self.opt, self.bp) if v is not None]
        return all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))


def find_transitions(curve_at, lo, hi, tol=5e-4, scan=48):
    """Locate the BP, optimal and static transitions of a potential family.

    ``curve_at(control)`` must return a PotentialCurve; the family must be
    monotone in the control parameter (larger control favors low error).
    Returns None entries when no two-maximum region exists in [lo, hi].
    """
    controls = np.linspace(lo, hi, scan)
    cache = {}

    def curve(c):
        if c not in cache:
            cache[c] = curve_at(c)
        return cache[c]

    def is_two(c):
        return curve(c).classification == "two-max"

    two = [c for c in controls if is_two(c)]
    if not two:
        return TransitionSet(None, None, None)

    def bisect(pred, a, b):
        # pred(a) is True, pred(b) is False
        while abs(b - a) > tol:
            m = 0.5 * (a + b)
            if pred(m):
                a = m
            else:
                b = m
        return 0.5 * (a + b), (min(a, b), max(a, b))

    hi_two = max(two)
    above = [c for c in controls if c > hi_two]
    bp, bp_br = (hi, (hi_two, hi)) if not above else bisect(is_two, hi_two, min(above))
    lo_two = min(two)
    below = [c for c in controls if c < lo_two]
    if not below:
        static, st_br = lo, (lo, lo_two)
    else:
        static, st_br = bisect(is_two, lo_two, max(below))
    mid_region = 0.5 * (static + bp)

    def height_gap(c):
        cv = curve(c)
        if cv.classification != "two-max":
            return 1.0 if c > mid_region else -1.0
        return cv.low_max[1] - cv.high_max[1]

    a, b = static + tol, bp - tol
    if a >= b or height_gap(a) > 0 or height_gap(b) < 0:
        opt, opt_br = None, None
    else:
        while b - a > tol:
            m = 0.5 * (a + b)
            if height_gap(m) < 0:
                a = m
            else:
                b = m
        opt, opt_br = 0.5 * (a + b), (a, b)
    return TransitionSet(bp, opt, static, bp_br, opt_br, st_br)


def _bigaussian_curve(rho, eps, alpha, delta, sigma1_sq, grid, quad_order=48):
    def residual(E):
        E = np.atleast_1d(np.asarray(E, dtype=float))
        Sigma2 = (delta + E) / alpha
        return _bigaussian_fc_average(Sigma2, rho, eps, sigma1_sq, quad_order) - E

    def phi(e):
        return phi_bigaussian(e, rho, eps, alpha, delta, sigma1_sq, quad_order)

    return curve_from_se_residual(residual, phi, grid)


def transitions_bigaussian(rho, eps, delta=0.0, sigma1_sq=1.0, lo=None, hi=None,
                           tol=5e-4, n_grid=600, quad_order=48):
    """BP / optimal / static measurement rates for the sparsity prior."""
    E0 = initial_mse_bigaussian(rho, eps, sigma1_sq)
    grid = log_grid(max(1e-9, 1e-2 * eps), 2.0 * E0, n_grid)
    lo = lo if lo is not None else max(0.02, 0.5 * rho)
    hi = hi if hi is not None else min(1.0, 6.0 * rho)
    return find_transitions(
        lambda a: _bigaussian_curve(rho, eps, a, delta, sigma1_sq, grid, quad_order),
        lo, hi, tol=tol)


def transitions_sections(B, snr, lo, hi, cfg: SeConfig = None, tol=2e-3,
                         n_grid=400):
    """BP / optimal code rates of a section code via the potential.

    Deterministic for B = 2; for larger sections the sampled potential
    with common random numbers is classified on the grid.
    """
    cfg = cfg or SeConfig()
    E0 = (B - 1) / B**2
    grid = log_grid(1e-9, 2.0 * E0, n_grid)
    if B == 2:
        def curve_at(negR):
            R = -negR
            alpha = rate_to_alpha(R, 2)

            def residual(E):
                E = np.atleast_1d(np.asarray(E, dtype=float))
                out = np.empty(E.shape)
                for i, e in enumerate(E):
                    g = 1.0 / np.sqrt(se_sigma(e, alpha, snr, 2))
                    out[i] = _sections_b2_kernels(g, cfg.quad_order)[0] - e
                return out

            return curve_from_se_residual(
                residual, lambda e: phi_sections(e, 2, R, snr, cfg), grid)
    else:
        rng = np.random.default_rng(cfg.seed)
        z_batch = rng.standard_normal((cfg.mc_samples, B), dtype=np.float32)

        def curve_at(negR):
            return build_potential_curve(
                lambda E: phi_sections(E, B, -negR, snr, cfg, z_batch=z_batch),
                grid, refine=False)

    # the family favors low error at small R: run the finder on -R
    ts = find_transitions(curve_at, -hi, -lo, tol=tol)
    flip = lambda v: None if v is None else -v
    fbr = lambda br: None if br is None else (-br[1], -br[0])
    return TransitionSet(flip(ts.bp), flip(ts.opt), flip(ts.static),
                         fbr(ts.bp_bracket), fbr(ts.opt_bracket), fbr(ts.static_bracket))


def tricritical_epsilon(rho, eps_bracket=(1e-6, 0.05), alpha_bracket=None,
                        rtol=0.02, quad_order=48, n_grid=600):
    """Largest small-component variance with a first-order coexistence region.

    For each measurement rate, the largest eps with a two-maximum potential
    is found by bisection; the tri-critical eps_c is the maximum of that
    curve over alpha (golden-section search).
    """
    alpha_bracket = alpha_bracket or (1.02 * rho, min(0.9, 5.0 * rho))

    def is_two(alpha, eps):
        E0 = initial_mse_bigaussian(rho, eps)
        grid = log_grid(1e-2 * eps, 2.0 * E0, n_grid)
        curve = _bigaussian_curve(rho, eps, alpha, 0.0, 1.0, grid, quad_order)
        return curve.classification == "two-max"

    def find_window(eps, center, span):
        """Coexistence window in alpha near the last known center.

        The window drifts upward and shrinks as eps grows, so the search
        follows it; returns (alpha_lo, alpha_hi) or None.
        """
        for widen in (1.0, 3.0, 9.0):
            lo = max(alpha_bracket[0], center - widen * span)
            hi = min(alpha_bracket[1], center + widen * span)
            pts = np.linspace(lo, hi, 61)
            inside = [a for a in pts if is_two(a, eps)]
            if inside:
                return min(inside), max(inside)
        return None

    # seed the window at the smallest eps with a coarse full-bracket scan
    scan = np.linspace(*alpha_bracket, 48)
    inside = [a for a in scan if is_two(a, eps_bracket[0])]
    if not inside:
        return 0.0
    center = 0.5 * (min(inside) + max(inside))
    span = max(max(inside) - min(inside), 4.0 * (scan[1] - scan[0]))
    lo, hi = eps_bracket
    while hi / lo > 1.0 + rtol:
        mid = np.sqrt(lo * hi)
        win = find_window(mid, center, span)
        if win is not None:
            lo = mid
            center = 0.5 * (win[0] + win[1])
            span = max(3.0 * (win[1] - win[0]), 3e-3)
        else:
            hi = mid
    return np.sqrt(lo * hi)


# ---------------------------------------------------------------------------
# capacity and the large-section limit
# ---------------------------------------------------------------------------

def capacity(snr):
    """AWGN channel capacity in bits per channel use."""
    if snr < 0:
        raise ValueError("snr must be >= 0")
    return 0.5 * np.log2(1.0 + snr)


def r_bp_infinity(snr):
    """Large-section limit of the BP rate threshold."""
    if snr <= 0:
        raise ValueError("snr must be > 0")
    return 1.0 / ((1.0 / snr + 1.0) * 2.0 * np.log(2.0))


def phi_large_B(Etilde, R, snr):
    """Rescaled large-B potential: max of the two condensation branches.

    Returns (phi, branch) with branch 0 the high-error regime and 1 the
    condensed low-error regime; extrema sit at Etilde in {0, 1}.
    """
    Etilde = np.asarray(Etilde, dtype=float)
    noise = 1.0 / snr
    log2 = np.log(2.0)
    g = -(np.log(noise + Etilde) + (1.0 - Etilde) / (noise + Etilde)) / (2.0 * R * log2)
    phi0 = g + 1.0
    phi1 = g + 1.0 / (2.0 * log2 * R * (noise + Etilde))
    phi = np.maximum(phi0, phi1)
    branch = (phi1 >= phi0).astype(int)
    if phi.ndim == 0:
        return float(phi), int(branch)
    return phi, branch


def large_b_branch_switch(R, snr):
    """E-tilde at which the two branches of the large-B potential cross."""
    return 1.0 / (2.0 * R * np.log(2.0)) - 1.0 / snr


def large_b_equal_height_rate(snr, tol=1e-8):
    """Rate at which the two large-B extrema have equal height (= capacity)."""
    def gap(R):
        return phi_large_B(0.0, R, snr)[0] - phi_large_B(1.0, R, snr)[0]

    lo, hi = 1e-3, 40.0
    if gap(lo) < 0 or gap(hi) > 0:
        raise ValueError("bracket does not contain the equal-height rate")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
