"""Priors and their AMP denoisers.

A denoiser pair (f_a, f_c) gives the posterior mean and variance of a
signal component under the prior and a Gaussian field N(x | R, Sigma2).
Everything is evaluated in the log domain (log-sum-exp over mixture
components, scaled complementary error functions for the truncated
components) so fields with |R|/Sigma far in the tails never overflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import erfcx, logsumexp

VARIANCE_FLOOR = 1e-20

_LOG_2PI = np.log(2.0 * np.pi)


class AmpField(NamedTuple):
    """Gaussian mean-field (R, Sigma2) produced by the linear AMP step."""

    R: np.ndarray
    Sigma2: np.ndarray


def _log_erfcx(t):
    # erfcx(t) = exp(t^2) erfc(t) overflows for t << 0; there
    # erfcx(t) = 2 exp(t^2) - erfcx(-t) with erfcx(-t) negligible
    t = np.asarray(t, dtype=float)
    safe = np.maximum(t, -25.0)
    return np.where(t < -25.0, t * t + np.log(2.0), np.log(erfcx(safe)))


def _trunc_positive_moments(b, sigma):
    """Mean and variance of N(b, sigma^2) truncated to x > 0."""
    b = np.asarray(b, dtype=float)
    alpha = -b / sigma
    t = alpha / np.sqrt(2.0)
    with np.errstate(over="ignore"):
        lam = np.sqrt(2.0 / np.pi) / erfcx(t)  # hazard; -> 0 when erfcx overflows
    a_dir = np.where(alpha >= 40.0, 1.0, alpha)
    mean_dir = b + sigma * lam
    var_dir = sigma**2 * (1.0 + a_dir * lam - lam**2)
    # deep truncation: direct formula cancels catastrophically
    a_ser = np.where(alpha >= 40.0, alpha, 40.0)
    u = 1.0 / a_ser**2
    mean_ser = (sigma / a_ser) * (1.0 - 2.0 * u + 10.0 * u**2)
    var_ser = sigma**2 * u * (1.0 - 6.0 * u + 50.0 * u**2)
    deep = alpha >= 40.0
    return np.where(deep, mean_ser, mean_dir), np.where(deep, var_ser, var_dir)


# ---------------------------------------------------------------------------
# mixture priors over scalar components
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixtureComponent:
    """One term w_u p_u(x) of a scalar mixture prior.

    kind is 'dirac' (params m), 'gauss' (m, v), 'exponential' (lam,
    truncated to x > 0) or 'laplace' (beta).  Weights need not be
    normalized; the normalization is absorbed in the posterior z.
    """

    kind: str
    params: tuple
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in ("dirac", "gauss", "exponential", "laplace"):
            raise ValueError(f"unknown component kind {self.kind!r}")
        if self.weight < 0:
            raise ValueError("component weight must be >= 0")
        if self.kind == "gauss" and self.params[1] < 0:
            raise ValueError("gaussian variance must be >= 0")
        if self.kind in ("exponential", "laplace") and self.params[0] <= 0:
            raise ValueError("rate parameter must be > 0")


def dirac(m, weight=1.0):
    return MixtureComponent("dirac", (float(m),), weight)


def gauss(m, v, weight=1.0):
    return MixtureComponent("gauss", (float(m), float(v)), weight)


def exponential(lam, weight=1.0):
    return MixtureComponent("exponential", (float(lam),), weight)


def laplace(beta, weight=1.0):
    return MixtureComponent("laplace", (float(beta),), weight)


def _component_posterior(comp, Sigma2, R):
    """(log z_u, posterior mean, posterior second moment), vectorized in R."""
    k, p = comp.kind, comp.params
    if k == "dirac":
        m = p[0]
        log_z = -0.5 * (_LOG_2PI + np.log(Sigma2)) - (R - m) ** 2 / (2.0 * Sigma2)
        return log_z, np.broadcast_to(m, np.shape(log_z)), np.broadcast_to(m**2, np.shape(log_z))
    if k == "gauss":
        m, v = p
        s2 = Sigma2 + v
        log_z = -0.5 * (_LOG_2PI + np.log(s2)) - (R - m) ** 2 / (2.0 * s2)
        mu = (m * Sigma2 + R * v) / s2
        vp = v * Sigma2 / s2
        return log_z, mu, mu**2 + vp
    sigma = np.sqrt(Sigma2)
    if k == "exponential":
        lam = p[0]
        t = (lam * Sigma2 - R) / (np.sqrt(2.0) * sigma)
        log_z = np.log(lam / 2.0) - R**2 / (2.0 * Sigma2) + _log_erfcx(t)
        mean, var = _trunc_positive_moments(R - lam * Sigma2, sigma)
        return log_z, mean, mean**2 + var
    # laplace: two truncated-Gaussian branches around +-beta
    beta = p[0]
    t_p = (beta * Sigma2 - R) / (np.sqrt(2.0) * sigma)
    t_m = (beta * Sigma2 + R) / (np.sqrt(2.0) * sigma)
    log_z_p = np.log(beta / 4.0) - R**2 / (2.0 * Sigma2) + _log_erfcx(t_p)
    log_z_m = np.log(beta / 4.0) - R**2 / (2.0 * Sigma2) + _log_erfcx(t_m)
    m_p, v_p = _trunc_positive_moments(R - beta * Sigma2, sigma)
    m_neg, v_m = _trunc_positive_moments(-(R + beta * Sigma2), sigma)
    m_m = -m_neg
    log_z = np.logaddexp(log_z_p, log_z_m)
    pi_p = np.exp(log_z_p - log_z)
    mean = pi_p * m_p + (1.0 - pi_p) * m_m
    second = pi_p * (m_p**2 + v_p) + (1.0 - pi_p) * (m_m**2 + v_m)
    return log_z, mean, second


_PRIOR_MOMENTS = {
    # kind -> (mean, second moment) of the component distribution
    "dirac": lambda p: (p[0], p[0] ** 2),
    "gauss": lambda p: (p[0], p[0] ** 2 + p[1]),
    "exponential": lambda p: (1.0 / p[0], 2.0 / p[0] ** 2),
    "laplace": lambda p: (0.0, 2.0 / p[0] ** 2),
}


@dataclass(frozen=True)
class MixturePrior:
    """Scalar prior P_0(x) proportional to sum_u w_u p_u(x)."""

    components: tuple

    def __init__(self, components):
        comps = tuple(components)
        if not comps or not any(c.weight > 0 for c in comps):
            raise ValueError("need at least one component with positive weight")
        object.__setattr__(self, "components", comps)

    @property
    def weights(self):
        w = np.array([c.weight for c in self.components])
        return w / w.sum()

    def mean(self):
        return float(sum(w * _PRIOR_MOMENTS[c.kind](c.params)[0]
                         for w, c in zip(self.weights, self.components)))

    def second_moment(self):
        return float(sum(w * _PRIOR_MOMENTS[c.kind](c.params)[1]
                         for w, c in zip(self.weights, self.components)))

    def variance(self):
        return self.second_moment() - self.mean() ** 2

    def _stats(self, Sigma2, R):
        R = np.asarray(R, dtype=float)
        Sigma2 = np.broadcast_to(np.asarray(Sigma2, dtype=float), R.shape)
        logs, means, seconds = [], [], []
        for comp in self.components:
            if comp.weight == 0.0:
                continue
            lz, mu, sq = _component_posterior(comp, Sigma2, R)
            logs.append(np.log(comp.weight) + lz)
            means.append(np.broadcast_to(mu, R.shape))
            seconds.append(np.broadcast_to(sq, R.shape))
        return np.stack(logs), np.stack(means), np.stack(seconds)

    def posterior_weights(self, Sigma2, R):
        """Posterior probability of each (positive-weight) component."""
        logs, _, _ = self._stats(Sigma2, R)
        return np.exp(logs - logsumexp(logs, axis=0, keepdims=True))

    def denoise(self, Sigma2, R):
        """Posterior mean f_a and variance f_c of x given the field."""
        logs, means, seconds = self._stats(Sigma2, R)
        pis = np.exp(logs - logsumexp(logs, axis=0, keepdims=True))
        a = np.sum(pis * means, axis=0)
        c = np.sum(pis * seconds, axis=0) - a**2
        return a, np.maximum(c, VARIANCE_FLOOR)

    def log_partition_kernel(self, Sigma2, R):
        """log of int P_0(x) exp(-(x-R)^2 / (2 Sigma2)) dx, P_0 normalized."""
        logs, _, _ = self._stats(Sigma2, R)
        total_w = sum(c.weight for c in self.components)
        S2 = np.broadcast_to(np.asarray(Sigma2, dtype=float), np.shape(np.asarray(R)))
        return (logsumexp(logs, axis=0) - np.log(total_w)
                + 0.5 * (_LOG_2PI + np.log(S2)))

    def sample(self, n, rng):
        """n i.i.d draws from the (normalized) prior."""
        idx = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty(n)
        for u, comp in enumerate(self.components):
            sel = idx == u
            k = int(sel.sum())
            if k == 0:
                continue
            if comp.kind == "dirac":
                out[sel] = comp.params[0]
            elif comp.kind == "gauss":
                m, v = comp.params
                out[sel] = m + np.sqrt(v) * rng.standard_normal(k)
            elif comp.kind == "exponential":
                out[sel] = rng.exponential(1.0 / comp.params[0], size=k)
            else:
                out[sel] = rng.laplace(0.0, 1.0 / comp.params[0], size=k)
        return out


def bigaussian_prior(rho, sigma1_sq=1.0, sigma2_sq=0.0):
    """Approximate-sparsity prior rho N(0, sigma1^2) + (1-rho) N(0, sigma2^2)."""
    return MixturePrior([gauss(0.0, sigma1_sq, rho), gauss(0.0, sigma2_sq, 1.0 - rho)])


def denoise_bigaussian(rho, sigma1_sq, sigma2_sq, Sigma2, R):
    """Closed-form two-Gaussian denoiser (independent of the generic path)."""
    R1 = np.atleast_1d(np.asarray(R, dtype=float))[None, :]
    S2 = np.atleast_1d(np.broadcast_to(np.asarray(Sigma2, dtype=float),
                                       np.shape(np.atleast_1d(R))))[None, :]
    w = np.array([rho, 1.0 - rho])[:, None]
    s2 = np.array([sigma1_sq, sigma2_sq])[:, None]
    tot = S2 + s2
    log_terms = np.log(np.maximum(w, 1e-300)) - 0.5 * np.log(tot) - R1**2 / (2.0 * tot)
    pis = np.exp(log_terms - logsumexp(log_terms, axis=0, keepdims=True))
    mu = R1 * s2 / tot
    vp = s2 * S2 / tot
    a = np.sum(pis * mu, axis=0)
    c = np.maximum(np.sum(pis * (mu**2 + vp), axis=0) - a**2, VARIANCE_FLOOR)
    if np.ndim(R) == 0:
        return float(a[0]), float(c[0])
    return a, c


def support_posterior(prior: MixturePrior, Sigma2, R, noise_components):
    """Posterior probability that x came from the listed 'noise' components."""
    pis = prior.posterior_weights(Sigma2, R)
    live = [u for u, c in enumerate(prior.components) if c.weight > 0]
    sel = [live.index(u) for u in noise_components]
    return np.clip(pis[sel].sum(axis=0), 0.0, 1.0)


# ---------------------------------------------------------------------------
# section prior (sparse superposition codes)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SectionPrior:
    """B-dim sections with exactly one nonzero of known positive amplitude.

    ``power`` is either a scalar (constant allocation) or a per-section
    array of amplitudes c_l.
    """

    B: int
    power: object = 1.0

    def __post_init__(self):
        if self.B < 2:
            raise ValueError("section size must be >= 2")
        if np.any(np.asarray(self.power) <= 0):
            raise ValueError("section powers must be > 0")

    @classmethod
    def with_groups(cls, B, L, group_powers):
        """Per-group allocation: L sections split evenly over the groups."""
        G = len(group_powers)
        if L % G:
            raise ValueError("number of groups must divide the number of sections")
        power = np.repeat(np.asarray(group_powers, dtype=float), L // G)
        return cls(B, power)

    def section_powers(self, L):
        c = np.asarray(self.power, dtype=float)
        if c.ndim == 0:
            return np.full(L, float(c))
        if len(c) != L:
            raise ValueError(f"power allocation has {len(c)} entries for {L} sections")
        return c

    def denoise(self, Sigma2, R):
        """Section softmax posterior: sum_i a_i = c_l exactly per section."""
        R = np.asarray(R, dtype=float)
        N = R.shape[0]
        if N % self.B:
            raise ValueError("field length must be a multiple of the section size")
        L = N // self.B
        c = self.section_powers(L)[:, None]
        Rl = R.reshape(L, self.B)
        S2 = np.broadcast_to(np.asarray(Sigma2, dtype=float), R.shape).reshape(L, self.B)
        scores = c * (2.0 * Rl - c) / (2.0 * S2)
        scores -= scores.max(axis=1, keepdims=True)
        expo = np.exp(scores)
        a = c * expo / expo.sum(axis=1, keepdims=True)
        v = a * (c - a)
        return a.reshape(N), np.maximum(v.reshape(N), VARIANCE_FLOOR)

    def log_partition_kernel(self, Sigma2, R):
        """Per-section log of int P_0(x_l) exp(-|x_l - R_l|^2/(2 Sigma2)) dx_l."""
        R = np.asarray(R, dtype=float)
        L = R.shape[0] // self.B
        c = self.section_powers(L)[:, None]
        Rl = R.reshape(L, self.B)
        S2 = np.broadcast_to(np.asarray(Sigma2, dtype=float), R.shape).reshape(L, self.B)
        base = -(Rl**2 / (2.0 * S2)).sum(axis=1)
        scores = c * (2.0 * Rl - c) / (2.0 * S2)
        return base - np.log(self.B) + logsumexp(scores, axis=1)

    def mean(self, L):
        c = self.section_powers(L)
        return np.repeat(c / self.B, self.B)

    def variance(self, L):
        c = self.section_powers(L)
        return np.repeat(c**2 * (self.B - 1) / self.B**2, self.B)

    def sample(self, L, rng):
        """(signal, symbols): one uniformly placed nonzero per section."""
        symbols = rng.integers(0, self.B, size=L)
        x = np.zeros(L * self.B)
        x[np.arange(L) * self.B + symbols] = self.section_powers(L)
        return x, symbols + 1


def denoise_section(prior: SectionPrior, Sigma2, R):
    return prior.denoise(Sigma2, R)


# ---------------------------------------------------------------------------
# complex jointly-sparse Bernoulli-Gauss prior
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComplexBernoulliGauss:
    """(1-rho) delta(x) + rho CN(x | mean, sigma2), jointly sparse parts.

    CN(x|m, s2) has independent real and imaginary parts of variance s2
    each.  The variance denoiser f_c returns the per-part posterior
    variance, half of E|x - <x>|^2.
    """

    rho: float
    mean: complex = 0.0
    sigma2: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.rho <= 1.0):
            raise ValueError("rho must be in [0, 1]")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be > 0")

    def denoise(self, Sigma2, R):
        R = np.asarray(R, dtype=complex)
        s2 = self.sigma2
        M = (s2 * R + Sigma2 * self.mean) / (Sigma2 + s2)
        chi2 = Sigma2 * s2 / (Sigma2 + s2)
        log_g = 0.5 * (np.abs(M) ** 2 / chi2 - abs(self.mean) ** 2 / s2)
        if self.rho >= 1.0:
            pi = np.ones_like(log_g)
        elif self.rho == 0.0:
            pi = np.zeros_like(log_g)
        else:
            gap = np.log(self.rho) + np.log(chi2) + log_g \
                - np.log(1.0 - self.rho) - np.log(s2)
            pi = 1.0 / (1.0 + np.exp(-np.clip(gap, -700, 700)))
        a = pi * M
        c = (pi * (np.abs(M) ** 2 + 2.0 * chi2) - np.abs(a) ** 2) / 2.0
        return a, np.maximum(c, VARIANCE_FLOOR)

    def mean_value(self):
        return self.rho * self.mean

    def variance_per_part(self):
        m2 = abs(self.mean) ** 2
        return (self.rho * (m2 + 2.0 * self.sigma2) - self.rho**2 * m2) / 2.0

    def sample(self, n, rng):
        mask = rng.random(n) < self.rho
        vals = self.mean + np.sqrt(self.sigma2) * (
            rng.standard_normal(n) + 1j * rng.standard_normal(n))
        return np.where(mask, vals, 0.0 + 0.0j)


def denoise_complex(prior: ComplexBernoulliGauss, Sigma2, R):
    return prior.denoise(Sigma2, R)


def denoise(prior, field: AmpField):
    """Generic entry point: apply the prior's denoiser to an AMP field."""
    return prior.denoise(field.Sigma2, field.R)
