"""Expectation-maximization wrappers around the AMP loop.

The noise variance and the mixture-prior parameters (sparsity, support
rate, noise-component mean) are learned from fixed-point identities of
the Bethe free energy, damped and delayed so the early unreliable fields
do not destabilize the run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .amp import AmpConfig, run_amp
from .priors import MixtureComponent, MixturePrior, support_posterior


@dataclass
class LearnSchedule:
    learn_delta: bool = False
    learn_rho: bool = False
    learn_lambda: bool = False
    learn_mean: bool = False
    noise_components: tuple = (1,)
    damping: float = 0.5
    start_iteration: int = 10
    delta_bounds: tuple = (1e-12, 1e3)
    rho_bounds: tuple = (1e-6, 1.0 - 1e-6)
    noise_form: int = 1

    def __post_init__(self):
        if not (0.0 <= self.damping < 1.0):
            raise ValueError("EM damping must be in [0, 1)")
        for lo, hi in (self.delta_bounds, self.rho_bounds):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError("parameter bounds must be finite and ordered")

    @property
    def empty(self):
        return not (self.learn_delta or self.learn_rho
                    or self.learn_lambda or self.learn_mean)


def learn_noise(y, w, theta, delta, form=1, bounds=(1e-12, 1e3)):
    """Fixed-point update of the noise variance from the AMP residuals.

    Two algebraically equivalent (at a fixed point) forms are exposed;
    form 1 is the default.  The result is clamped to ``bounds``.
    """
    resid2 = (y - w) ** 2
    if form == 1:
        ratio = 1.0 + theta / delta
        new = float(np.sum(resid2 / ratio**2) / np.sum(1.0 / ratio))
    elif form == 2:
        tot = delta + theta
        new = float(1.0 / np.mean(resid2 / tot**2 + theta / (delta * tot)))
    else:
        raise ValueError("noise update form must be 1 or 2")
    return float(np.clip(new, *bounds))


def learn_mixture(prior: MixturePrior, Sigma2, R, a, schedule: LearnSchedule):
    """One EM update of (rho, lambda, m) from the support posteriors.

    The support/noise split counts components with posterior noise
    probability below 0.5; the exponential rate is the inverse mean of the
    support estimates and the noise-component mean is the mean of the
    rest.  Gaussian variances are kept fixed.  An empty support set keeps
    the previous parameters.
    """
    noise_idx = tuple(schedule.noise_components)
    p_noise = support_posterior(prior, Sigma2, R, noise_idx)
    on_support = p_noise < 0.5
    comps = list(prior.components)
    total_w = sum(c.weight for c in comps)
    if schedule.learn_rho:
        rho_new = float(np.clip(np.mean(on_support), *schedule.rho_bounds))
        w_noise = sum(comps[u].weight for u in noise_idx)
        w_supp = total_w - w_noise
        for u, c in enumerate(comps):
            if u in noise_idx:
                comps[u] = replace(c, weight=c.weight / w_noise * (1.0 - rho_new) * total_w)
            else:
                comps[u] = replace(c, weight=c.weight / w_supp * rho_new * total_w)
    if schedule.learn_lambda and np.any(on_support):
        mean_supp = float(np.mean(a[on_support]))
        if mean_supp > 0:
            for u, c in enumerate(comps):
                if u not in noise_idx and c.kind == "exponential":
                    comps[u] = MixtureComponent("exponential", (1.0 / mean_supp,), c.weight)
    if schedule.learn_mean and np.any(~on_support):
        m_new = float(np.mean(a[~on_support]))
        for u, c in enumerate(comps):
            if u in noise_idx and c.kind == "gauss":
                comps[u] = MixtureComponent("gauss", (m_new, c.params[1]), c.weight)
    return MixturePrior(comps)


def run_amp_em(op, y, prior0: MixturePrior, config: AmpConfig,
               schedule: LearnSchedule, truth=None):
    """AMP with one damped EM update per iteration after the start delay.

    Returns (AmpResult, learned) where learned holds the final parameters
    and their per-iteration traces.  An empty schedule reproduces run_amp.
    """
    if schedule.empty:
        result = run_amp(op, y, prior0, config, truth=truth)
        return result, {"delta": config.delta, "prior": prior0, "trace": {}}

    live = {"prior": prior0, "delta": config.delta}
    trace = {"t": [], "delta": [], "rho": [], "lambda": [], "mean": []}
    d = schedule.damping

    def snapshot(t):
        trace["t"].append(t)
        trace["delta"].append(live["delta"])
        prior = live["prior"]
        w = np.array([c.weight for c in prior.components])
        noise_w = sum(w[u] for u in schedule.noise_components)
        trace["rho"].append(1.0 - noise_w / w.sum())
        lam = [c.params[0] for c in prior.components if c.kind == "exponential"]
        trace["lambda"].append(lam[0] if lam else np.nan)
        means = [c.params[0] for u, c in enumerate(prior.components)
                 if u in schedule.noise_components and c.kind == "gauss"]
        trace["mean"].append(means[0] if means else np.nan)

    def em_callback(state, t):
        if t < schedule.start_iteration:
            return None
        new_delta = None
        if schedule.learn_delta and live["delta"] > 0:
            prop = learn_noise(y, state.w, state.theta, live["delta"],
                               form=schedule.noise_form, bounds=schedule.delta_bounds)
            live["delta"] = float(np.clip(d * live["delta"] + (1.0 - d) * prop,
                                          *schedule.delta_bounds))
            new_delta = live["delta"]
        if schedule.learn_rho or schedule.learn_lambda or schedule.learn_mean:
            prop = learn_mixture(live["prior"], state.Sigma2, state.R, state.a, schedule)
            blended = []
            for old, new in zip(live["prior"].components, prop.components):
                wgt = d * old.weight + (1.0 - d) * new.weight
                params = tuple(d * po + (1.0 - d) * pn
                               for po, pn in zip(old.params, new.params))
                blended.append(MixtureComponent(old.kind, params, wgt))
            live["prior"] = MixturePrior(blended)
        snapshot(t)
        return new_delta

    # the prior must be re-read each iteration: wrap it
    class _LivePrior:
        def denoise(self, Sigma2, R):
            return live["prior"].denoise(Sigma2, R)

        def mean(self):
            return live["prior"].mean()

        def variance(self):
            return live["prior"].variance()

        def log_partition_kernel(self, Sigma2, R):
            return live["prior"].log_partition_kernel(Sigma2, R)

    result = run_amp(op, y, _LivePrior(), config, truth=truth,
                     em_callback=em_callback)
    learned = {"delta": live["delta"], "prior": live["prior"],
               "trace": {k: np.array(v) for k, v in trace.items()}}
    return result, learned
