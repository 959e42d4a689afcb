"""Asymptotic state evolution of the AMP solvers.

Scalar recursions closed under Gaussians use Gauss-Hermite quadrature and
are deterministic; section and complex recursions use Monte Carlo with
antithetic variates and fixed per-step seeds, and report a standard error
alongside every estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .priors import ComplexBernoulliGauss, MixturePrior, SectionPrior, denoise_bigaussian


@dataclass
class SeConfig:
    mc_samples: int = 1_000_000
    seed: int = 0
    tol: float = 1e-10
    t_max: int = 200
    quad_order: int = 61
    batch: int = 1 << 17
    stall_window: int = 25
    stall_rtol: float = 0.01


@dataclass
class SeResult:
    E: object
    iterations: int
    converged: bool
    stalled: bool
    trajectory: list
    last_two: tuple = None


@lru_cache(maxsize=8)
def _gh_nodes(order):
    x, w = np.polynomial.hermite.hermgauss(order)
    # for integrals against the standard Gaussian measure Dz
    return x * np.sqrt(2.0), w / np.sqrt(np.pi)


def se_sigma(E, alpha, snr=np.inf, B=1):
    """Effective field variance Sigma^2(E) = (1/(B snr) + E) / alpha."""
    if alpha <= 0:
        raise ValueError("measurement rate must be > 0")
    noise = 0.0 if np.isinf(snr) else 1.0 / (B * snr)
    return (noise + E) / alpha


def se_sigma_coupled(E_blocks, variances, row_rates, snr=np.inf, B=1):
    """Per-block Sigma_c^2 for a coupled ensemble (variances = J_rc grid)."""
    E_blocks = np.asarray(E_blocks, dtype=float)
    L_c = variances.shape[1]
    noise = 0.0 if np.isinf(snr) else L_c / snr
    denom = noise + B * variances @ E_blocks          # per block-row
    inv = B * (row_rates / denom) @ variances         # per block-column
    return 1.0 / inv


def rate_to_alpha(R, B):
    """Measurement rate alpha = log2(B) / (R B) of a rate-R section code."""
    return np.log2(B) / (R * B)


def initial_mse_bigaussian(rho, eps, sigma1_sq=1.0):
    return rho * sigma1_sq + (1.0 - rho) * eps


def initial_mse_sections(B, power=1.0):
    return power**2 * (B - 1) / B**2


# ---------------------------------------------------------------------------
# scalar bi-Gaussian recursion (deterministic quadrature)
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _gl_nodes(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def _bigaussian_fc_average(Sigma2, rho, eps, sigma1_sq, order=48):
    """int Dz f_c(Sigma2, z sqrt(s_a + Sigma2)) for both components, vectorized.

    The variance denoiser has a narrow transition where the two posterior
    component weights swap; fixed Gauss-Hermite nodes miss it, so panels of
    Gauss-Legendre nodes are placed around the analytic swap radius.
    """
    Sigma2 = np.atleast_1d(np.asarray(Sigma2, dtype=float))
    nE = Sigma2.shape[0]
    s_comp = np.array([sigma1_sq, eps])
    w_comp = np.array([rho, 1.0 - rho])
    # swap radius R*: equal posterior log-weights of the two components
    t1, t2 = Sigma2 + sigma1_sq, Sigma2 + eps
    gap = sigma1_sq - eps
    with np.errstate(divide="ignore", invalid="ignore"):
        num = np.log(np.maximum((1.0 - rho) ** 2 * t1 / (rho**2 * t2), 1e-300))
        Rstar2 = np.where(gap > 0, num * t1 * t2 / np.maximum(gap, 1e-300), 0.0)
    Rstar = np.sqrt(np.maximum(Rstar2, 0.0))
    width_R = np.where(Rstar > 0, t1 * t2 / (np.maximum(Rstar, 1e-300) * max(gap, 1e-300)),
                       np.sqrt(np.maximum(t2, 1e-300)))
    x_gl, w_gl = _gl_nodes(order)
    out = np.zeros(nE)
    z_cov = 42.0
    for w_a, s_a in zip(w_comp, s_comp):
        if w_a == 0.0:
            continue
        scale = np.sqrt(s_a + Sigma2)
        z_star = Rstar / scale
        z_w = np.minimum(width_R / scale, z_cov)
        b1 = np.clip(z_star - 8.0 * z_w, 0.0, z_cov)
        b2 = np.clip(z_star + 8.0 * z_w, 0.0, z_cov)
        bounds = np.stack([np.zeros(nE), b1, b2, np.full(nE, z_cov)], axis=1)
        acc = np.zeros(nE)
        for k in range(3):
            lo, hi = bounds[:, k], bounds[:, k + 1]
            half = 0.5 * (hi - lo)
            mid = 0.5 * (hi + lo)
            z = mid[:, None] + half[:, None] * x_gl[None, :]
            R = z * scale[:, None]
            _, fc = denoise_bigaussian(rho, sigma1_sq, eps,
                                       np.repeat(Sigma2, order), R.ravel())
            fc = fc.reshape(nE, order)
            phi_z = np.exp(-0.5 * z**2) / np.sqrt(2.0 * np.pi)
            acc += (half[:, None] * w_gl[None, :] * phi_z * fc).sum(axis=1)
        out += w_a * 2.0 * acc
    return out


def se_step_bigaussian(E, rho, eps, alpha, snr=np.inf, sigma1_sq=1.0, quad_order=48):
    """One noisy-or-noiseless step for the approximate-sparsity prior."""
    Sigma2 = se_sigma(E, alpha, snr, 1)
    if Sigma2 <= 0:
        return 0.0
    out = _bigaussian_fc_average(Sigma2, rho, eps, sigma1_sq, order=quad_order)
    return float(out[0])


def se_step_generic(E, prior, alpha, snr, cfg: SeConfig, rng, form="var"):
    """Monte-Carlo step for any scalar mixture prior.

    ``form`` selects one of the three equivalent (under prior matching)
    expressions: 'mse', 'overlap' or 'var'.  Returns (E', standard error).
    """
    if not isinstance(prior, MixturePrior):
        raise TypeError("generic SE step expects a scalar mixture prior")
    Sigma2 = se_sigma(E, alpha, snr, 1)
    n_pairs = max(1, cfg.mc_samples // 2)
    tot = 0.0
    tot2 = 0.0
    done = 0
    second_moment = prior.second_moment()
    while done < n_pairs:
        k = min(cfg.batch, n_pairs - done)
        s = prior.sample(k, rng)
        z = rng.standard_normal(k)
        vals = 0.0
        for sgn in (1.0, -1.0):
            R = s + sgn * np.sqrt(Sigma2) * z
            a, c = prior.denoise(Sigma2, R)
            if form == "mse":
                vals = vals + (a - s) ** 2
            elif form == "overlap":
                vals = vals + (second_moment - s * a)
            elif form == "var":
                vals = vals + c
            else:
                raise ValueError(f"unknown SE form {form!r}")
        vals = vals / 2.0
        tot += vals.sum()
        tot2 += (vals**2).sum()
        done += k
    mean = tot / done
    var = max(tot2 / done - mean**2, 0.0)
    return float(mean), float(np.sqrt(var / done))


def nishimori_check(prior, E, alpha, snr, cfg: SeConfig, rng=None):
    """Evaluate the MSE form and variance form of the same step.

    Under prior matching the two agree; a mismatch beyond 3 standard
    errors flags a broken Nishimori line (e.g. a mismatched denoiser).
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    Sigma2 = se_sigma(E, alpha, snr, 1)
    n = cfg.mc_samples
    s = prior.sample(n, rng)
    R = s + np.sqrt(Sigma2) * rng.standard_normal(n)
    a, c = prior.denoise(Sigma2, R)
    diff = (a - s) ** 2 - c
    se = float(np.std(diff) / np.sqrt(n))
    e_form = float(np.mean((a - s) ** 2))
    v_form = float(np.mean(c))
    return e_form, v_form, abs(e_form - v_form) <= 3.0 * se, se


# ---------------------------------------------------------------------------
# section recursion (superposition codes)
# ---------------------------------------------------------------------------

def _section_kernel(g, B, n_pairs, rng, batch):
    """MC estimate of (E-kernel, SER) at inverse field width g = 1/Sigma.

    The E-kernel is E_z[(f_{1|1}-1)^2 + (B-1) f_{2|1}^2] / B; the SER is
    P(max_{j>1} z_j > z_1 + g), i.e. a wrong component beating the true one.
    Antithetic pairs (z, -z) share one exponential table via reciprocals.
    """
    if g * g > 600.0:  # posterior saturated: kernel underflows to zero
        return 0.0, 0.0, 0.0, 0.0
    em = np.exp(-g * g)
    ep = np.exp(g * g)
    tot_e = tot_e2 = 0.0
    tot_s = tot_s2 = 0.0
    done = 0
    g32 = np.float32(g)
    while done < n_pairs:
        k = min(batch, n_pairs - done)
        z = rng.standard_normal((k, B), dtype=np.float32)
        d = z[:, 1:] - z[:, :1]
        e = np.exp(g32 * d)
        er = 1.0 / e
        vals = None
        for tab in (e, er):
            S = tab.sum(axis=1, dtype=np.float64)
            first = tab[:, 0].astype(np.float64)
            f11 = 1.0 / (1.0 + em * S)
            f21 = 1.0 / (1.0 + ep * first + (S - first))
            v = ((f11 - 1.0) ** 2 + (B - 1) * f21**2) / B
            vals = v if vals is None else 0.5 * (vals + v)
        dmax = d.max(axis=1)
        dmin = d.min(axis=1)
        errs = 0.5 * ((dmax > g32).astype(np.float64) + (-dmin > g32))
        tot_e += vals.sum()
        tot_e2 += (vals**2).sum()
        tot_s += errs.sum()
        tot_s2 += (errs**2).sum()
        done += k
    m_e = tot_e / done
    m_s = tot_s / done
    se_e = np.sqrt(max(tot_e2 / done - m_e**2, 0.0) / done)
    se_s = np.sqrt(max(tot_s2 / done - m_s**2, 0.0) / done)
    return float(m_e), float(m_s), float(se_e), float(se_s)


def se_step_sections(E, B, R=None, snr=np.inf, cfg: SeConfig = None, rng=None,
                     alpha=None):
    """One section-code step: returns (E', SER', se_E, se_SER)."""
    cfg = cfg or SeConfig()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    if alpha is None:
        if R is None:
            raise ValueError("give either the code rate R or alpha")
        alpha = rate_to_alpha(R, B)
    Sigma2 = se_sigma(E, alpha, snr, B)
    g = 1.0 / np.sqrt(Sigma2)
    n_pairs = max(1, cfg.mc_samples // 2)
    return _section_kernel(g, B, n_pairs, rng, cfg.batch)


def se_step_coupled_bigaussian(E_blocks, variances, row_rates, rho, eps,
                               snr=np.inf, sigma1_sq=1.0, quad_order=61):
    """Coupled approximate-sparsity recursion: per-block MSE vector."""
    Sig2 = se_sigma_coupled(E_blocks, variances, row_rates, snr, 1)
    z, wq = _gh_nodes(quad_order)
    out = np.empty_like(np.asarray(E_blocks, dtype=float))
    for c, S2 in enumerate(Sig2):
        acc = 0.0
        for w_a, s_a in ((rho, sigma1_sq), (1.0 - rho, eps)):
            if w_a == 0.0:
                continue
            Rv = z * np.sqrt(s_a + S2)
            _, fc = denoise_bigaussian(rho, sigma1_sq, eps, S2, Rv)
            acc += w_a * float(wq @ fc)
        out[c] = acc
    return out


def se_step_coupled_sections(E_blocks, variances, row_rates, B, snr,
                             cfg: SeConfig, rng):
    """Coupled section recursion: per-block (E', SER') with shared samples."""
    Sig2 = se_sigma_coupled(E_blocks, variances, row_rates, snr, B)
    Es, sers, ses = [], [], []
    n_pairs = max(1, cfg.mc_samples // 2)
    for S2 in Sig2:
        g = 1.0 / np.sqrt(S2)
        e, s, se_e, _ = _section_kernel(g, B, n_pairs, rng, cfg.batch)
        Es.append(e)
        sers.append(s)
        ses.append(se_e)
    return np.array(Es), np.array(sers), np.array(ses)


def se_step_power_allocated(E_groups, powers, B, R, snr, cfg: SeConfig, rng,
                            alpha=None):
    """Per-group recursion for a power-allocated section code."""
    powers = np.asarray(powers, dtype=float)
    G = len(powers)
    if abs(np.mean(powers**2) - 1.0) > 1e-8:
        raise ValueError("power allocation must satisfy sum c_g^2 / G = 1")
    if alpha is None:
        alpha = rate_to_alpha(R, B)
    E_groups = np.asarray(E_groups, dtype=float)
    noise = 0.0 if np.isinf(snr) else 1.0 / snr
    eff = noise + (B / G) * float(powers**2 @ E_groups)
    Sig2 = eff / (B * alpha * powers**2)   # = Sigma_g^2 (un-tilded)
    n_pairs = max(1, cfg.mc_samples // 2)
    Es, sers, ses = [], [], []
    for S2 in Sig2:
        g = 1.0 / np.sqrt(S2)
        e, s, se_e, _ = _section_kernel(g, B, n_pairs, rng, cfg.batch)
        Es.append(e)
        sers.append(s)
        ses.append(se_e)
    return np.array(Es), np.array(sers), np.array(ses)


# ---------------------------------------------------------------------------
# complex recursion
# ---------------------------------------------------------------------------

def se_step_complex(E, rho, sigma2, alpha, delta, cfg: SeConfig, rng):
    """Complex Bernoulli-Gauss step (per-part MSE); returns (E', se)."""
    Sigma2 = (delta + E) / alpha
    prior = ComplexBernoulliGauss(rho, 0.0, sigma2)
    n_pairs = max(1, cfg.mc_samples // 2)
    tot = tot2 = 0.0
    done = 0
    while done < n_pairs:
        k = min(cfg.batch, n_pairs - done)
        z = rng.standard_normal(k) + 1j * rng.standard_normal(k)
        vals = 0.0
        for sgn in (1.0, -1.0):
            zz = sgn * z
            _, c_off = prior.denoise(Sigma2, zz * np.sqrt(Sigma2))
            _, c_on = prior.denoise(Sigma2, zz * np.sqrt(sigma2 + Sigma2))
            vals = vals + (1.0 - rho) * c_off + rho * c_on
        vals = vals / 2.0
        tot += vals.sum()
        tot2 += (vals**2).sum()
        done += k
    mean = tot / done
    return float(mean), float(np.sqrt(max(tot2 / done - mean**2, 0.0) / done))


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def se_run(step, E0, cfg: SeConfig, record=None):
    """Iterate a state-evolution step to its fixed point.

    ``step(E, rng)`` returns either E' or a tuple (E', info_dict); a dict
    entry {'se': value} marks a Monte-Carlo step.  Deterministic steps
    stop at |dE| <= tol.  MC steps stop when the drift over the trailing
    window is within the random-walk band 3 sqrt(2) se: a single-step
    3 se rule would halt on the slow transient near a transition, where
    the per-step motion hides below the sampling noise.
    Per-step RNGs are seeded by (cfg.seed, t) so runs are reproducible.
    """
    E = np.array(E0, dtype=float) if np.ndim(E0) else float(E0)
    trajectory = [{"t": 0, "E": np.copy(E)}]
    converged = False
    prev = None
    history = [np.copy(E)]
    for t in range(1, cfg.t_max + 1):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, t)))
        out = step(E, rng)
        info = {}
        if isinstance(out, tuple):
            E_new, info = out[0], (out[1] if len(out) > 1 and isinstance(out[1], dict) else {})
            if len(out) > 1 and not isinstance(out[1], dict):
                info = {"extra": out[1:]}
        else:
            E_new = out
        entry = {"t": t, "E": np.copy(E_new)}
        entry.update(info)
        if record is not None:
            record(entry)
        trajectory.append(entry)
        diff = float(np.max(np.abs(np.asarray(E_new) - np.asarray(E))))
        prev = E
        E = E_new
        history.append(np.copy(E) if np.ndim(E) else float(E))
        if diff <= cfg.tol:
            converged = True
            break
        if "se" in info and len(history) > cfg.stall_window:
            se_now = float(np.max(np.atleast_1d(info["se"])))
            ref = history[-1 - cfg.stall_window]
            drift = float(np.max(np.abs(np.asarray(E) - np.asarray(ref))))
            if drift <= 3.0 * np.sqrt(2.0) * se_now:
                converged = True
                break
    return SeResult(E, len(trajectory) - 1, converged, False, trajectory,
                    last_two=(prev, E))


def se_trajectory_bigaussian(rho, eps, alpha, snr=np.inf, sigma1_sq=1.0,
                             E0=None, cfg: SeConfig = None):
    """Convenience driver: full trajectory of the scalar recursion."""
    cfg = cfg or SeConfig()
    if E0 is None:
        E0 = initial_mse_bigaussian(rho, eps, sigma1_sq)

    def step(E, rng):
        return se_step_bigaussian(E, rho, eps, alpha, snr, sigma1_sq, cfg.quad_order)

    return se_run(step, E0, cfg)


def se_trajectory_sections(B, R, snr, E0=None, cfg: SeConfig = None,
                           success_ser=None):
    """Trajectory of (E, SER) for a constant-power section code."""
    cfg = cfg or SeConfig()
    if E0 is None:
        E0 = initial_mse_sections(B)

    def step(E, rng):
        e, s, se_e, se_s = se_step_sections(E, B, R=R, snr=snr, cfg=cfg, rng=rng)
        return e, {"ser": s, "se": se_e, "se_ser": se_s}

    return se_run(step, E0, cfg)


def se_bp_threshold_sections(B, snr, bracket, cfg: SeConfig = None,
                             tol=0.01, success_ser=0.05):
    """Largest rate at which the uninformed section recursion still decodes.

    Bisection on the decoding indicator: a run counts as a success when
    its final SER falls below ``success_ser`` (stalls near the uninformed
    fixed point count as failures).
    """
    cfg = cfg or SeConfig()

    def succeeds(R):
        res = se_trajectory_sections(B, R, snr, cfg=cfg)
        final_ser = res.trajectory[-1].get("ser", 1.0)
        return final_ser < success_ser

    lo, hi = bracket
    if not succeeds(lo):
        raise ValueError(f"bracket low edge R={lo} already fails")
    if succeeds(hi):
        raise ValueError(f"bracket high edge R={hi} still succeeds")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if succeeds(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), (lo, hi)
