"""End-to-end coding pipelines.

Sparse superposition codes over the AWGN channel: encode a symbol stream
into a one-sparse-per-section signal, transmit F x through the channel,
decode with AMP and the section denoiser.  Robust error correction of
real-valued signals: encode with the nullspace of a parity operator,
estimate the gross-error vector by AMP with a two-Gaussian prior, and
subtract it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import operators
from .amp import AmpConfig, hard_decision, run_amp, ser
from .potential import transitions_bigaussian
from .priors import SectionPrior, bigaussian_prior


@dataclass
class CodeSpec:
    """Sparse superposition code: L sections of size B at rate R over AWGN."""

    L: int
    B: int
    R: float
    snr: float
    group_powers: np.ndarray = None  # per-group amplitudes, default constant

    def __post_init__(self):
        if self.group_powers is None:
            self.group_powers = np.array([1.0])
        self.group_powers = np.asarray(self.group_powers, dtype=float)
        if self.L % len(self.group_powers):
            raise ValueError("the number of power groups must divide L")
        if abs(np.mean(self.group_powers**2) - 1.0) > 1e-9:
            raise ValueError("power allocation must satisfy sum c_g^2 / G = 1")

    @property
    def N(self):
        return self.L * self.B

    @property
    def alpha(self):
        return np.log2(self.B) / (self.R * self.B)

    @property
    def M(self):
        return int(round(self.alpha * self.N))

    def prior(self):
        if len(self.group_powers) == 1:
            return SectionPrior(self.B, float(self.group_powers[0]))
        return SectionPrior.with_groups(self.B, self.L, self.group_powers)

    def section_powers(self):
        return self.prior().section_powers(self.L)


def encode_message(symbols, spec: CodeSpec):
    """Signal with value c_l at position symbols[l] (1-based) of section l."""
    symbols = np.asarray(symbols, dtype=int)
    if len(symbols) != spec.L:
        raise ValueError(f"need {spec.L} symbols, got {len(symbols)}")
    if symbols.min() < 1 or symbols.max() > spec.B:
        raise ValueError("symbols must lie in 1..B")
    x = np.zeros(spec.N)
    x[np.arange(spec.L) * spec.B + symbols - 1] = spec.section_powers()
    return x


def awgn(codeword, snr, seed):
    """Add white Gaussian noise calibrated to the measured codeword power."""
    if snr <= 0:
        raise ValueError("snr must be > 0")
    rng = np.random.default_rng(seed)
    power = float(np.mean(np.abs(codeword) ** 2))
    noise_var = power / snr
    return codeword + np.sqrt(noise_var) * rng.standard_normal(len(codeword)), noise_var


def build_code_operator(spec: CodeSpec, kind, seed, ensemble=None):
    """Coding operator for the spec: homogeneous dense/Hadamard or coupled."""
    if ensemble is None:
        ensemble = operators.homogeneous_ensemble(spec.alpha)
    else:
        if abs(ensemble.alpha - spec.alpha) > 1e-12:
            ensemble = operators.CouplingEnsemble(
                ensemble.L_c, ensemble.L_r, ensemble.w, ensemble.J,
                spec.alpha, ensemble.beta_seed)
    if kind == "dense" and ensemble.L_c == 1:
        return operators.gen_iid_gaussian(spec.M, spec.N, 1.0 / spec.L, seed)
    block_kind = {"dense": "gaussian", "gaussian": "gaussian",
                  "hadamard": "hadamard"}[kind]
    return operators.gen_spatially_coupled(ensemble, block_kind, seed,
                                           spec.N, B=spec.B)


def decode(y, op, spec: CodeSpec, config: AmpConfig = None, truth=None):
    """AMP decoding with per-section argmax hard decision.

    Returns (symbols, section error rate or None, AmpResult); a divergence
    is flagged on the result but symbols are still emitted.
    """
    config = config or AmpConfig(delta=1.0 / spec.snr)
    result = run_amp(op, y, spec.prior(), config, truth=truth)
    symbols = hard_decision(result.a, spec.B)
    code_ser = None
    if truth is not None:
        code_ser = ser(result.a, truth, spec.B)
    return symbols, code_ser, result


def transmit_and_decode(spec: CodeSpec, kind, seed, ensemble=None,
                        config: AmpConfig = None):
    """One full round trip; returns a record dict for benchmarking."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 1)))
    symbols = rng.integers(1, spec.B + 1, size=spec.L)
    x = encode_message(symbols, spec)
    op = build_code_operator(spec, kind, seed, ensemble)
    codeword = op.forward(x)
    y, noise_var = awgn(codeword, spec.snr, np.random.SeedSequence(entropy=(seed, 2)))
    config = config or AmpConfig(delta=noise_var)
    t0 = time.perf_counter()
    decoded, code_ser, result = decode(y, op, spec, config, truth=x)
    return {
        "R": spec.R, "seed": seed, "ser": ser(result.a, x, spec.B),
        "iterations": result.iterations, "converged": result.converged,
        "wallclock": time.perf_counter() - t0,
        "exact": bool(np.array_equal(decoded, symbols)),
        "result": result,
    }


# ---------------------------------------------------------------------------
# power allocation
# ---------------------------------------------------------------------------

def exponential_power_allocation(G, snr):
    """Geometric allocation c_g = 2^{-C g / G} / Z with unit mean square.

    Removes the BP transition in the large-section limit: every group sees
    an effective field just below the local decoding threshold once the
    previous groups are decoded.
    """
    if G < 1:
        raise ValueError("need at least one group")
    C = 0.5 * np.log2(1.0 + snr)
    g = np.arange(1, G + 1)
    Z2 = 2.0 ** (-2.0 * C / G) * (1.0 - 2.0 ** (-2.0 * C)) \
        / (G * (1.0 - 2.0 ** (-2.0 * C / G))) if G > 1 else 2.0 ** (-2.0 * C)
    c = 2.0 ** (-C * g / G) / np.sqrt(Z2)
    return c


def powalloc_partial_power(powers, upto):
    """(1/G) sum_{g<=upto} c_g^2 (decoded-power bookkeeping identity)."""
    powers = np.asarray(powers, dtype=float)
    return float(np.sum(powers[:upto] ** 2) / len(powers))


def powalloc_to_block_operator(op, powers, B=1):
    """Absorb a per-group power allocation into block-column scalings.

    Decoding the scaled operator with a constant-power prior reproduces,
    with shared randomness, the trajectory of the original system with the
    allocated prior (estimates scale by c_g per group).
    """
    powers = np.asarray(powers, dtype=float)
    G = len(powers)
    N = op.cols
    if N % G:
        raise ValueError("the number of groups must divide the signal length")
    if not isinstance(op, operators.DenseOperator):
        raise TypeError("the block-column scaling path is implemented for dense operators")
    width = N // G
    L = N / B
    # one block-row, G block-columns, variances c_g^2 (un-rescaled by design)
    blocks = [[operators._DenseBlock(
        op.entries[:, c * width:(c + 1) * width] * powers[c] * np.sqrt(L))
        for c in range(G)]]
    variances = (powers**2)[None, :]
    return operators.BlockOperator(None, variances, blocks,
                                   np.array([op.rows]), np.full(G, width),
                                   1.0 / np.sqrt(L))


# ---------------------------------------------------------------------------
# robust error correction of real-valued signals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrossErrorChannel:
    """Fraction rho of gross unit-variance errors over an eps background."""

    rho: float
    eps: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.rho < 1.0):
            raise ValueError("rho must be in [0, 1)")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")

    def sample(self, n, rng):
        """Returns (noise, background-only noise) for the same instance."""
        background = np.sqrt(self.eps) * rng.standard_normal(n) if self.eps > 0 \
            else np.zeros(n)
        gross = rng.standard_normal(n) * (rng.random(n) < self.rho)
        return gross + background, background

    def prior(self):
        return bigaussian_prior(self.rho, 1.0 + self.eps, self.eps)


@dataclass(frozen=True)
class RobustEcSpec:
    N: int
    gamma: float
    channel: GrossErrorChannel

    def __post_init__(self):
        if self.gamma <= 1.0:
            raise ValueError("encoding rate gamma = M/N must exceed 1")
        if self.M - self.N < 1:
            raise ValueError("need at least one parity row")

    @property
    def M(self):
        return int(round(self.gamma * self.N))

    @property
    def parity_rows(self):
        return self.M - self.N


def robust_ec_roundtrip(spec: RobustEcSpec, seed, config: AmpConfig = None):
    """Encode, corrupt, decode the gross errors, and reconstruct.

    Returns (s_hat, rho_ideal_hat, info).  rho_ideal_hat compares the
    reconstruction error with that of an oracle facing only the background
    noise; 1.0 means gross errors were removed perfectly.
    """
    M, N = spec.M, spec.N
    ss = np.random.SeedSequence(entropy=(seed,))
    seeds = ss.spawn(3)
    F = operators.gen_iid_gaussian(M - N, M, 1.0 / M, seeds[0])
    A = operators.nullspace_encoder(F)
    rng = np.random.default_rng(seeds[1])
    s = rng.standard_normal(N)
    codeword = A.forward(s)
    noise, background = spec.channel.sample(M, np.random.default_rng(seeds[2]))
    y_corrupted = codeword + noise
    h = F.forward(y_corrupted)           # = F e: gross errors seen alone
    config = config or AmpConfig(delta=0.0, t_max=1000)
    result = run_amp(F, h, spec.channel.prior(), config, truth=noise)
    e_hat = result.a
    s_hat = A.backward(y_corrupted - e_hat)          # pinv(A) = A^T
    s_ideal = A.backward(codeword + background)
    err = float(np.linalg.norm(s_hat - s))
    err_ideal = float(np.linalg.norm(s_ideal - s))
    rho_ideal_hat = 1.0 if err_ideal == 0.0 and err == 0.0 else err / max(err_ideal, 1e-300)
    if spec.channel.rho == 0.0 and spec.channel.eps == 0.0:
        rho_ideal_hat = 1.0
    info = {"iterations": result.iterations, "converged": result.converged,
            "error_mse": float(np.mean((e_hat - noise) ** 2)),
            "signal_mse": float(np.mean((s_hat - s) ** 2))}
    return s_hat, float(rho_ideal_hat), info


#: Donoho-Tanner reference rate for rho = 0.1, quoted for comparison only.
GAMMA_DT_RHO_01 = 1.490


def gamma_thresholds(rho, eps, tol=5e-4):
    """(gamma_opt, gamma_bp) encoding rates of the robust EC scheme.

    gamma_opt = 1/(1-rho) is exact; gamma_bp comes from the BP transition
    of the gross-error estimation problem at measurement rate 1 - 1/gamma.
    Returns gamma_bp = None in the continuous regime.
    """
    gamma_opt = 1.0 / (1.0 - rho)
    ts = transitions_bigaussian(rho, eps, sigma1_sq=1.0 + eps, tol=tol)
    gamma_bp = None if ts.bp is None else 1.0 / (1.0 - ts.bp)
    return gamma_opt, gamma_bp
