"""Sensing and coding operators.

All operators expose four applications used by the AMP solvers:

* ``forward(x)``      -- y = F x
* ``backward(r)``     -- F^T r (conjugate transpose in the complex case)
* ``forward_sq(v)``   -- multiplication by the entrywise |F|^2
* ``backward_sq(u)``  -- multiplication by the entrywise |F|^2, transposed

Spatially-coupled operators are stored as a grid of blocks with
*un-rescaled* variances (0, J or 1); a single global factor 1/sqrt(L)
(L = number of signal sections, i.e. 1/sqrt(N) for scalar problems) is
applied at application time so the codeword power stays O(1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space


class OperatorError(ValueError):
    pass


# ---------------------------------------------------------------------------
# fast Walsh-Hadamard transform
# ---------------------------------------------------------------------------

def fwht(v, counter=None):
    """Unnormalized Walsh-Hadamard transform along the last axis.

    Length must be a power of two.  Satisfies fwht(fwht(v)) = n * v.
    ``counter``, if given, is a dict whose 'ops' entry is incremented by
    the number of butterfly operations performed (n log2 n per vector).
    """
    a = np.array(v, copy=True)
    n = a.shape[-1]
    if n <= 0 or (n & (n - 1)) != 0:
        raise OperatorError(f"fwht length must be a power of two, got {n}")
    lead = a.shape[:-1]
    a = a.reshape(-1, n)
    h = 1
    while h < n:
        a = a.reshape(-1, 2, h)
        top = a[:, 0, :] + a[:, 1, :]
        bot = a[:, 0, :] - a[:, 1, :]
        a = np.stack((top, bot), axis=1)
        if counter is not None:
            counter["ops"] = counter.get("ops", 0) + top.size
        h *= 2
    return a.reshape(lead + (n,))


def _block_rng(seed, r, c):
    # substream depends only on (seed, r, c): block layout is reproducible
    # independent of the order in which blocks are generated
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), int(r), int(c))))


# ---------------------------------------------------------------------------
# dense operators
# ---------------------------------------------------------------------------

@dataclass
class DenseOperator:
    """Dense matrix operator with i.i.d entries of a known variance."""

    entries: np.ndarray
    entry_variance: float
    spec: dict | None = None
    _sq: np.ndarray | None = field(default=None, repr=False)

    @property
    def rows(self):
        return self.entries.shape[0]

    @property
    def cols(self):
        return self.entries.shape[1]

    @property
    def shape(self):
        return self.entries.shape

    @property
    def is_complex(self):
        return np.iscomplexobj(self.entries)

    def _squared(self):
        if self._sq is None:
            self._sq = np.abs(self.entries) ** 2 if self.is_complex else self.entries**2
        return self._sq

    def forward(self, x):
        return self.entries @ x

    def backward(self, r):
        if self.is_complex:
            return self.entries.conj().T @ r
        return self.entries.T @ r

    def forward_sq(self, v):
        return self._squared() @ v

    def backward_sq(self, u):
        return self._squared().T @ u

    def to_dense(self):
        return self.entries


def gen_iid_gaussian(M, N, variance, seed):
    """Dense operator with i.i.d N(0, variance) entries, deterministic in seed."""
    if M < 1 or N < 1:
        raise OperatorError(f"operator dimensions must be >= 1, got {M}x{N}")
    if variance < 0:
        raise OperatorError("variance must be >= 0")
    rng = np.random.default_rng(seed)
    entries = rng.standard_normal((M, N)) * np.sqrt(variance)
    spec = {"kind": "iid_gaussian", "dims": [int(M), int(N)],
            "variance": float(variance), "seed": int(seed)}
    return DenseOperator(entries, float(variance), spec=spec)


def mean_center(op: DenseOperator, y):
    """Remove column means from F and the mean from y.

    For a noiseless linear system y = F s this preserves the solution set
    exactly; AMP has strong convergence issues on non-zero-mean matrices.
    """
    F = op.entries
    col_means = F.mean(axis=0, keepdims=True)
    Fc = F - col_means
    yc = y - np.mean(y)
    return DenseOperator(Fc, op.entry_variance, spec=None), yc


def nullspace_encoder(F: DenseOperator):
    """Orthonormal basis A of the nullspace of F, as an encoder: F A = 0.

    F must be a dense R x M matrix of full row rank with R < M; the
    returned operator is M x (M - R) with orthonormal columns, so its
    pseudoinverse is its transpose.  Dense path only (M <= 4096).
    """
    mat = F.entries
    R, M = mat.shape
    if R >= M:
        raise OperatorError("nullspace encoder needs fewer rows than columns")
    if M > 4096:
        raise OperatorError("dense nullspace path supports M <= 4096")
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv[-1] < max(R, M) * np.finfo(float).eps * sv[0] or sv[-1] == 0.0:
        raise OperatorError("matrix is rank deficient; cannot build encoder")
    A = null_space(mat)
    if A.shape[1] != M - R:
        raise OperatorError("unexpected nullspace dimension (rank-deficient input?)")
    return DenseOperator(A, 1.0 / M, spec=None)


# ---------------------------------------------------------------------------
# spatially-coupled ensembles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CouplingEnsemble:
    """Parameters of the seeded block ensemble.

    The first block-row is over-sampled (rate alpha_seed = alpha * beta_seed)
    to nucleate the reconstruction wave; the remaining rows share
    alpha_rest = alpha (L_c - beta_seed) / (L_r - 1).
    """

    L_c: int
    L_r: int
    w: int
    J: float
    alpha: float
    beta_seed: float = 1.0

    def __post_init__(self):
        if self.L_r < self.L_c:
            raise OperatorError("need L_r >= L_c")
        if not (0 <= self.J <= 1):
            raise OperatorError("forward-coupling variance J must be in [0, 1]")
        if self.alpha_rest <= 0:
            raise OperatorError(
                f"alpha_rest = {self.alpha_rest:.4g} <= 0: beta_seed too large for L_c")

    @property
    def alpha_seed(self):
        return self.alpha * self.beta_seed

    @property
    def alpha_rest(self):
        if self.L_r == 1:
            return self.alpha_seed
        return self.alpha * (self.L_c - self.beta_seed) / (self.L_r - 1)

    def row_rates(self):
        """Per-block-row measurement rates (alpha_seed, alpha_rest, ...)."""
        rates = np.full(self.L_r, self.alpha_rest)
        rates[0] = self.alpha_seed
        return rates

    @classmethod
    def from_rates(cls, L_c, L_r, w, J, alpha_seed, alpha_rest):
        alpha = (alpha_seed + (L_r - 1) * alpha_rest) / L_c
        return cls(L_c, L_r, w, J, alpha, alpha_seed / alpha)

    def to_json(self):
        return {"L_c": self.L_c, "L_r": self.L_r, "w": self.w, "J": self.J,
                "alpha": self.alpha, "beta_seed": self.beta_seed}


def homogeneous_ensemble(alpha):
    """Degenerate 1x1 ensemble: reproduces the homogeneous operator."""
    return CouplingEnsemble(1, 1, 0, 1.0, alpha, 1.0)


def build_coupling_variances(ensemble: CouplingEnsemble):
    """Un-rescaled block variances of the seeded ensemble.

    Row-block r couples with unit variance to columns r-w..r (the diagonal
    plus w lower diagonals), with variance J to column r+1, zero elsewhere,
    clipped to the L_r x L_c grid.
    """
    L_r, L_c, w, J = ensemble.L_r, ensemble.L_c, ensemble.w, ensemble.J
    V = np.zeros((L_r, L_c))
    for r in range(L_r):
        lo = max(0, r - w)
        hi = min(r, L_c - 1)
        if lo <= hi:
            V[r, lo:hi + 1] = 1.0
        if r + 1 <= L_c - 1:
            V[r, r + 1] = J
    if np.any(V.sum(axis=0) == 0):
        raise OperatorError("coupling band leaves a signal block unmeasured")
    return V


# ---------------------------------------------------------------------------
# randomized fast-transform blocks
# ---------------------------------------------------------------------------

@dataclass
class StructuredBlock:
    """One randomized sub-sampled Hadamard (or Fourier) block.

    The block matrix is  scale * S H D P  where H is the order-n transform,
    P a column permutation, D random column signs and S selects the
    (randomly ordered) rows listed in ``mode_indices``.  Every entry has
    squared modulus scale^2 exactly, so the squared-operator applications
    reduce to scaled partial sums.
    """

    n: int
    mode_indices: np.ndarray
    column_permutation: np.ndarray
    column_signs: np.ndarray
    scale: float
    kind: str = "hadamard"  # or "fourier"

    def __post_init__(self):
        if self.n & (self.n - 1):
            raise OperatorError(f"block width must be a power of two, got {self.n}")
        if len(np.unique(self.mode_indices)) != len(self.mode_indices):
            raise OperatorError("mode indices must be distinct")
        if len(self.mode_indices) > self.n:
            raise OperatorError("cannot select more modes than the block width")

    @property
    def rows(self):
        return len(self.mode_indices)

    @property
    def cols(self):
        return self.n

    @property
    def is_complex(self):
        return self.kind == "fourier"

    def _transform(self, u):
        if self.kind == "hadamard":
            return fwht(u)
        return np.fft.fft(u)

    def _transform_adj(self, u):
        # H is symmetric for the Hadamard case; for Fourier F^H u = n ifft(u)
        if self.kind == "hadamard":
            return fwht(u)
        return self.n * np.fft.ifft(u)

    def forward(self, x):
        u = self.column_signs * x[self.column_permutation]
        return self.scale * self._transform(u)[..., self.mode_indices]

    def backward(self, r):
        buf = np.zeros(self.n, dtype=complex if self.is_complex else float)
        buf[self.mode_indices] = r
        t = self.column_signs * self._transform_adj(buf)
        out = np.empty_like(t)
        out[self.column_permutation] = t
        return self.scale * out

    def forward_sq(self, v):
        return np.full(self.rows, self.scale**2 * np.sum(v))

    def backward_sq(self, u):
        return np.full(self.n, self.scale**2 * np.sum(u))

    def to_dense(self):
        eye = np.eye(self.n, dtype=complex if self.is_complex else float)
        cols = [self.forward(eye[:, j]) for j in range(self.n)]
        return np.stack(cols, axis=1)


def gen_structured_block(n, rows, scale, rng, kind="hadamard", include_mode0=False):
    """Randomized block: random distinct modes, column permutation and signs.

    Mode 0 (the all-ones row) is excluded by default so the block has zero
    mean, matching the mean-centering requirement of the solvers.
    """
    pool = np.arange(0 if include_mode0 else 1, n)
    if rows > len(pool):
        raise OperatorError(f"cannot select {rows} modes from {len(pool)} available")
    modes = rng.choice(pool, size=rows, replace=False)
    perm = rng.permutation(n)
    signs = rng.integers(0, 2, size=n) * 2.0 - 1.0
    return StructuredBlock(n, modes, perm, signs, float(scale), kind=kind)


# ---------------------------------------------------------------------------
# block (spatially-coupled) operators
# ---------------------------------------------------------------------------

class _DenseBlock:
    """Dense Gaussian block inside a BlockOperator (un-rescaled entries)."""

    def __init__(self, entries):
        self.entries = entries
        self._sq = None

    @property
    def rows(self):
        return self.entries.shape[0]

    @property
    def cols(self):
        return self.entries.shape[1]

    is_complex = False

    def _squared(self):
        if self._sq is None:
            self._sq = self.entries**2
        return self._sq

    def forward(self, x):
        return self.entries @ x

    def backward(self, r):
        return self.entries.T @ r

    def forward_sq(self, v):
        return self._squared() @ v

    def backward_sq(self, u):
        return self._squared().T @ u

    def to_dense(self):
        return self.entries


@dataclass
class BlockOperator:
    """Spatially-coupled composite operator (grid of blocks).

    ``variances`` holds the un-rescaled block variances J_rc; the global
    ``rescale`` = 1/sqrt(L) is applied once per application.
    """

    ensemble: CouplingEnsemble | None
    variances: np.ndarray
    blocks: list  # blocks[r][c] is a block or None
    row_sizes: np.ndarray
    col_sizes: np.ndarray
    rescale: float
    spec: dict | None = None

    def __post_init__(self):
        self.row_offsets = np.concatenate(([0], np.cumsum(self.row_sizes)))
        self.col_offsets = np.concatenate(([0], np.cumsum(self.col_sizes)))
        self.L_r = len(self.blocks)
        self.L_c = len(self.blocks[0])

    @property
    def rows(self):
        return int(self.row_offsets[-1])

    @property
    def cols(self):
        return int(self.col_offsets[-1])

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def is_complex(self):
        return any(b.is_complex for row in self.blocks for b in row if b is not None)

    def _zeros(self, n):
        return np.zeros(n, dtype=complex if self.is_complex else float)

    def forward(self, x):
        y = self._zeros(self.rows)
        for r in range(self.L_r):
            seg = slice(self.row_offsets[r], self.row_offsets[r + 1])
            for c in range(self.L_c):
                blk = self.blocks[r][c]
                if blk is not None:
                    y[seg] += blk.forward(x[self.col_offsets[c]:self.col_offsets[c + 1]])
        return self.rescale * y

    def backward(self, r_vec):
        x = self._zeros(self.cols)
        for r in range(self.L_r):
            seg = r_vec[self.row_offsets[r]:self.row_offsets[r + 1]]
            for c in range(self.L_c):
                blk = self.blocks[r][c]
                if blk is not None:
                    x[self.col_offsets[c]:self.col_offsets[c + 1]] += blk.backward(seg)
        return self.rescale * x

    def forward_sq(self, v):
        y = np.zeros(self.rows)
        for r in range(self.L_r):
            seg = slice(self.row_offsets[r], self.row_offsets[r + 1])
            for c in range(self.L_c):
                blk = self.blocks[r][c]
                if blk is not None:
                    y[seg] += blk.forward_sq(v[self.col_offsets[c]:self.col_offsets[c + 1]])
        return self.rescale**2 * y

    def backward_sq(self, u):
        x = np.zeros(self.cols)
        for r in range(self.L_r):
            seg = u[self.row_offsets[r]:self.row_offsets[r + 1]]
            for c in range(self.L_c):
                blk = self.blocks[r][c]
                if blk is not None:
                    x[self.col_offsets[c]:self.col_offsets[c + 1]] += blk.backward_sq(seg)
        return self.rescale**2 * x

    def block_of_row(self, mu):
        """Block-row index of measurement mu."""
        return int(np.searchsorted(self.row_offsets, mu, side="right") - 1)

    def to_dense(self):
        F = np.zeros(self.shape, dtype=complex if self.is_complex else float)
        for r in range(self.L_r):
            for c in range(self.L_c):
                blk = self.blocks[r][c]
                if blk is not None:
                    F[self.row_offsets[r]:self.row_offsets[r + 1],
                      self.col_offsets[c]:self.col_offsets[c + 1]] = blk.to_dense()
        return self.rescale * F


def gen_spatially_coupled(ensemble, block_kind, seed, N, B=1, include_mode0=False):
    """Spatially-coupled operator over a length-N signal of B-dim sections.

    ``block_kind`` is 'gaussian', 'hadamard' or 'fourier'.  Each nonzero
    block (r, c) gets an independent randomization from a substream keyed
    by (seed, r, c); its un-rescaled variance is J_rc and the whole
    operator carries the global 1/sqrt(L) factor with L = N / B.
    """
    if block_kind not in ("gaussian", "hadamard", "fourier"):
        raise OperatorError(f"unknown block kind {block_kind!r}")
    if N % ensemble.L_c:
        raise OperatorError("L_c must divide the signal length")
    n_block = N // ensemble.L_c
    if block_kind in ("hadamard", "fourier") and (n_block & (n_block - 1)):
        raise OperatorError(f"N/L_c = {n_block} must be a power of two for fast blocks")
    variances = build_coupling_variances(ensemble)
    rates = ensemble.row_rates()
    row_sizes = np.array([max(1, round(rates[r] * n_block)) for r in range(ensemble.L_r)])
    col_sizes = np.full(ensemble.L_c, n_block)
    L = N / B
    blocks = []
    for r in range(ensemble.L_r):
        row = []
        for c in range(ensemble.L_c):
            J_rc = variances[r, c]
            if J_rc == 0.0:
                row.append(None)
                continue
            rng = _block_rng(seed, r, c)
            if block_kind == "gaussian":
                entries = rng.standard_normal((row_sizes[r], n_block)) * np.sqrt(J_rc)
                row.append(_DenseBlock(entries))
            else:
                row.append(gen_structured_block(
                    n_block, row_sizes[r], np.sqrt(J_rc), rng,
                    kind=block_kind, include_mode0=include_mode0))
        blocks.append(row)
    spec = {"kind": f"spatially_coupled_{block_kind}", "dims": [int(row_sizes.sum()), int(N)],
            "ensemble": ensemble.to_json(), "seed": int(seed), "B": int(B)}
    return BlockOperator(ensemble, variances, blocks, row_sizes, col_sizes,
                         1.0 / np.sqrt(L), spec=spec)


# ---------------------------------------------------------------------------
# functional aliases and serialization helpers
# ---------------------------------------------------------------------------

def apply_forward(op, x):
    return op.forward(x)


def apply_backward(op, r):
    return op.backward(r)


def apply_forward_sq(op, v):
    return op.forward_sq(v)


def apply_backward_sq(op, u):
    return op.backward_sq(u)


def operator_spec_json(op):
    """JSON document {kind, dims, ensemble, seed} describing the generator."""
    if op.spec is None:
        raise OperatorError("operator was not built from a serializable recipe")
    return json.dumps(op.spec)


def operator_from_spec(spec):
    """Rebuild an operator from its JSON recipe (dict or JSON string)."""
    if isinstance(spec, str):
        spec = json.loads(spec)
    kind = spec["kind"]
    if kind == "iid_gaussian":
        M, N = spec["dims"]
        return gen_iid_gaussian(M, N, spec["variance"], spec["seed"])
    if kind.startswith("spatially_coupled_"):
        ens = CouplingEnsemble(**spec["ensemble"])
        return gen_spatially_coupled(ens, kind.removeprefix("spatially_coupled_"),
                                     spec["seed"], spec["dims"][1], B=spec.get("B", 1))
    raise OperatorError(f"unknown operator spec kind {kind!r}")


def save_dense_csv(op, path):
    """Export the materialized matrix as CSV for cross-checking."""
    np.savetxt(path, np.asarray(op.to_dense()), delimiter=",")
