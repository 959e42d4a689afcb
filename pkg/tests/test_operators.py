import json

import numpy as np
import pytest
from fractions import Fraction

from bayamp import operators as ops


def test_fwht_order_two():
    assert np.array_equal(ops.fwht([1.0, 1.0]), [2.0, 0.0])


def test_fwht_delta_input():
    assert np.array_equal(ops.fwht([1.0, 0.0, 0.0, 0.0]), [1.0, 1.0, 1.0, 1.0])


def test_fwht_involution():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(1024)
    assert np.max(np.abs(ops.fwht(ops.fwht(v)) / 1024 - v)) < 1e-12


def test_fwht_rejects_non_power_of_two():
    with pytest.raises(ops.OperatorError):
        ops.fwht(np.ones(6))


def test_fwht_operation_count_scales_n_log_n():
    n1, n2 = 2**10, 2**14
    c1, c2 = {}, {}
    ops.fwht(np.ones(n1), counter=c1)
    ops.fwht(np.ones(n2), counter=c2)
    ratio = c2["ops"] / c1["ops"]
    expected = (n2 * np.log(n2)) / (n1 * np.log(n1))
    assert ratio < 2 * expected and ratio > expected / 2


def test_gen_iid_gaussian_zero_variance():
    op = ops.gen_iid_gaussian(2, 2, 0.0, seed=123)
    assert np.array_equal(op.entries, np.zeros((2, 2)))


def test_gen_iid_gaussian_sample_statistics():
    op = ops.gen_iid_gaussian(4000, 4000, 1.0 / 4000, seed=7)
    assert abs(op.entries.mean()) < 4e-3
    emp_var = op.entries.var()
    assert abs(emp_var - 1.0 / 4000) < 0.1 / 4000


def test_gen_iid_gaussian_deterministic():
    a = ops.gen_iid_gaussian(3, 5, 1.0, seed=1)
    b = ops.gen_iid_gaussian(3, 5, 1.0, seed=1)
    assert np.array_equal(a.entries, b.entries)


def test_gen_iid_gaussian_rejects_zero_dims():
    with pytest.raises(ops.OperatorError):
        ops.gen_iid_gaussian(0, 5, 1.0, seed=1)


def test_coupling_variances_homogeneous():
    ens = ops.homogeneous_ensemble(0.5)
    assert np.array_equal(ops.build_coupling_variances(ens), [[1.0]])


def test_coupling_variances_band_layout():
    # row r: units on r-w..r, J on r+1, clipped to the 5x4 grid
    ens = ops.CouplingEnsemble(L_c=4, L_r=5, w=2, J=0.2, alpha=0.3, beta_seed=1.2)
    V = ops.build_coupling_variances(ens)
    expected = np.array([
        [1.0, 0.2, 0.0, 0.0],
        [1.0, 1.0, 0.2, 0.0],
        [1.0, 1.0, 1.0, 0.2],
        [0.0, 1.0, 1.0, 1.0],
        [0.0, 0.0, 1.0, 1.0],
    ])
    assert np.array_equal(V, expected)
    assert (V == 1.0).sum() == 11
    assert (V == 0.2).sum() == 3


def test_coupling_variances_columns_covered():
    ens = ops.CouplingEnsemble(L_c=8, L_r=9, w=1, J=0.1, alpha=0.3, beta_seed=1.2)
    V = ops.build_coupling_variances(ens)
    assert np.all(V.sum(axis=0) >= 1.0)


def test_alpha_rest_identity_in_rationals():
    # alpha L_c = alpha_seed + (L_r - 1) alpha_rest, exactly
    alpha, beta = Fraction(3, 10), Fraction(13, 10)
    L_c, L_r = 32, 33
    seed = alpha * beta
    rest = alpha * (L_c - beta) / (L_r - 1)
    assert alpha * L_c == seed + (L_r - 1) * rest
    ens = ops.CouplingEnsemble(L_c, L_r, 2, 0.16, float(alpha), float(beta))
    lhs = ens.alpha * L_c
    rhs = ens.alpha_seed + (L_r - 1) * ens.alpha_rest
    assert abs(lhs - rhs) < 1e-14


def test_ensemble_rejects_large_beta_seed():
    with pytest.raises(ops.OperatorError):
        ops.CouplingEnsemble(L_c=2, L_r=5, w=1, J=0.1, alpha=0.3, beta_seed=2.5)


def test_degenerate_coupled_matches_iid():
    ens = ops.homogeneous_ensemble(0.5)
    op = ops.gen_spatially_coupled(ens, "gaussian", 3, 64)
    assert op.shape == (32, 64)
    F = op.to_dense()
    assert abs(F.var() - 1.0 / 64) < 0.3 / 64
    x = np.random.default_rng(0).standard_normal(64)
    assert np.allclose(op.forward(x), F @ x, atol=1e-12)


def test_unrandomized_hadamard_block_first_column():
    n = 8
    blk = ops.StructuredBlock(n, np.arange(n), np.arange(n), np.ones(n), 1.0)
    e1 = np.zeros(n)
    e1[0] = 1.0
    H_col = ops.fwht(e1)  # first column of the order-8 Hadamard matrix
    assert np.array_equal(blk.forward(e1), H_col)


def test_structured_block_matches_dense():
    rng = np.random.default_rng(5)
    blk = ops.gen_structured_block(32, 12, 0.7, rng)
    F = blk.to_dense()
    x = rng.standard_normal(32)
    r = rng.standard_normal(12)
    assert np.max(np.abs(blk.forward(x) - F @ x)) < 1e-12
    assert np.max(np.abs(blk.backward(r) - F.T @ r)) < 1e-12


def test_coupled_hadamard_matches_dense_materialization():
    ens = ops.CouplingEnsemble(L_c=4, L_r=5, w=2, J=0.16, alpha=0.4, beta_seed=1.5)
    op = ops.gen_spatially_coupled(ens, "hadamard", 11, 64)
    F = op.to_dense()
    rng = np.random.default_rng(1)
    x = rng.standard_normal(64)
    r = rng.standard_normal(op.rows)
    assert np.max(np.abs(op.forward(x) - F @ x)) < 1e-12
    assert np.max(np.abs(op.backward(r) - F.T @ r)) < 1e-12
    assert np.max(np.abs(op.forward_sq(x**2) - (F**2) @ x**2)) < 1e-12
    assert np.max(np.abs(op.backward_sq(r**2) - (F**2).T @ r**2)) < 1e-12


@pytest.mark.parametrize("make_op", [
    lambda: ops.gen_iid_gaussian(20, 30, 1.0 / 30, seed=2),
    lambda: ops.gen_spatially_coupled(
        ops.CouplingEnsemble(4, 5, 2, 0.16, 0.4, 1.5), "hadamard", 4, 64),
    lambda: ops.gen_spatially_coupled(
        ops.CouplingEnsemble(2, 3, 1, 0.25, 0.4, 1.2), "fourier", 4, 32),
])
def test_adjointness(make_op):
    op = make_op()
    rng = np.random.default_rng(9)
    cdtype = complex if op.is_complex else float
    x = rng.standard_normal(op.cols).astype(cdtype)
    y = rng.standard_normal(op.rows).astype(cdtype)
    if op.is_complex:
        x = x + 1j * rng.standard_normal(op.cols)
        y = y + 1j * rng.standard_normal(op.rows)
    lhs = np.vdot(y, op.forward(x))
    rhs = np.vdot(op.backward(y), x)
    assert abs(lhs - rhs) / max(abs(lhs), 1e-300) < 1e-10


def test_fourier_block_matches_dense():
    rng = np.random.default_rng(6)
    blk = ops.gen_structured_block(16, 7, 0.5, rng, kind="fourier")
    F = blk.to_dense()
    x = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    r = rng.standard_normal(7) + 1j * rng.standard_normal(7)
    assert np.max(np.abs(blk.forward(x) - F @ x)) < 1e-12
    assert np.max(np.abs(blk.backward(r) - F.conj().T @ r)) < 1e-12
    assert np.allclose(np.abs(F) ** 2, 0.25)


def test_forward_sq_constant_magnitude_rows():
    # dense operator with all entries +-a: each row of F^2 v is a^2 sum(v)
    a = 0.3
    rng = np.random.default_rng(3)
    signs = rng.integers(0, 2, size=(6, 10)) * 2.0 - 1.0
    op = ops.DenseOperator(a * signs, a**2)
    v = rng.standard_normal(10)
    assert np.allclose(op.forward_sq(v), a**2 * v.sum())


def test_structured_forward_sq_counts_modes():
    # ones vector through one block: every selected mode gets n * J / L
    ens = ops.CouplingEnsemble(2, 3, 1, 0.25, 0.4, 1.2)
    op = ops.gen_spatially_coupled(ens, "hadamard", 8, 32)
    v = np.ones(32)
    got = op.forward_sq(v)
    F = op.to_dense()
    assert np.max(np.abs(got - (F**2) @ v)) < 1e-12
    n_block, L, J = 16, 32, 0.25
    blk = op.blocks[0][1]  # the J-coupled block in row 0
    single = op.rescale**2 * blk.forward_sq(np.ones(n_block))
    assert np.allclose(single, n_block * J / L)


def test_mean_center():
    rng = np.random.default_rng(8)
    F = rng.standard_normal((40, 30)) + 0.5
    y = rng.standard_normal(40)
    op = ops.DenseOperator(F, 1.0)
    opc, yc = ops.mean_center(op, y)
    assert np.max(np.abs(opc.entries.mean(axis=0))) < 1e-12
    assert abs(yc.mean()) < 1e-12
    # already centered: matrix unchanged
    op2, y2 = ops.mean_center(opc, y)
    assert np.allclose(op2.entries, opc.entries)
    assert np.allclose(y2, y - y.mean())
    # constant entries collapse to zero
    op3, _ = ops.mean_center(ops.DenseOperator(np.full((5, 4), 2.0), 1.0), np.zeros(5))
    assert np.max(np.abs(op3.entries)) == 0.0


def test_mean_center_preserves_noiseless_solutions():
    rng = np.random.default_rng(12)
    F = rng.standard_normal((20, 12)) + 1.0
    s = rng.standard_normal(12)
    y = F @ s
    opc, yc = ops.mean_center(ops.DenseOperator(F, 1.0), y)
    assert np.max(np.abs(opc.entries @ s - yc)) < 1e-10


def test_nullspace_encoder_small():
    F = ops.DenseOperator(np.array([[1.0, 1.0]]), 0.5)
    A = ops.nullspace_encoder(F)
    target = np.array([1.0, -1.0]) / np.sqrt(2.0)
    got = A.entries[:, 0]
    assert np.min([np.max(np.abs(got - target)), np.max(np.abs(got + target))]) < 1e-12


def test_nullspace_encoder_random():
    rng = np.random.default_rng(4)
    F = ops.DenseOperator(rng.standard_normal((64, 256)) / 16.0, 1.0 / 256)
    A = ops.nullspace_encoder(F)
    assert A.shape == (256, 192)
    assert np.max(np.abs(F.forward(A.entries))) < 1e-10
    assert np.max(np.abs(A.entries.T @ A.entries - np.eye(192))) < 1e-10
    # encode-then-annihilate
    s = rng.standard_normal(192)
    e = rng.standard_normal(256)
    lhs = F.forward(A.forward(s) + e)
    assert np.max(np.abs(lhs - F.forward(e))) < 1e-10


def test_nullspace_encoder_rejects_rank_deficient():
    F = np.ones((3, 6))
    with pytest.raises(ops.OperatorError):
        ops.nullspace_encoder(ops.DenseOperator(F, 1.0))


def test_operator_spec_roundtrip(tmp_path):
    op = ops.gen_iid_gaussian(6, 9, 1.0 / 9, seed=21)
    doc = ops.operator_spec_json(op)
    spec = json.loads(doc)
    assert spec["kind"] == "iid_gaussian" and spec["dims"] == [6, 9]
    again = ops.operator_from_spec(doc)
    assert np.array_equal(op.entries, again.entries)
    ens = ops.CouplingEnsemble(2, 3, 1, 0.25, 0.4, 1.2)
    op2 = ops.gen_spatially_coupled(ens, "hadamard", 13, 32)
    again2 = ops.operator_from_spec(ops.operator_spec_json(op2))
    assert np.allclose(op2.to_dense(), again2.to_dense())
    path = tmp_path / "op.csv"
    ops.save_dense_csv(op, path)
    loaded = np.loadtxt(path, delimiter=",")
    assert np.allclose(loaded, op.entries)


def test_hadamard_requires_power_of_two_block():
    ens = ops.CouplingEnsemble(3, 4, 1, 0.25, 0.4, 1.2)
    with pytest.raises(ops.OperatorError):
        ops.gen_spatially_coupled(ens, "hadamard", 0, 36)


def test_block_substreams_independent_of_order():
    ens = ops.CouplingEnsemble(2, 3, 1, 0.25, 0.4, 1.2)
    a = ops.gen_spatially_coupled(ens, "gaussian", 5, 32)
    b = ops.gen_spatially_coupled(ens, "gaussian", 5, 32)
    assert np.array_equal(a.to_dense(), b.to_dense())
