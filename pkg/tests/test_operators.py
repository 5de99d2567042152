import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from jacksonflow import operators as ops
from jacksonflow._validation import ValidationError
from jacksonflow.fields import PathField

from conftest import random_substochastic, swap_kernel


def const(c):
    return ops.make_kernel({"family": "constant", "params": {"c": c}})


ONE_WAY = {"family": "bipartite", "params": {"k": 0.5, "upper": 2.0, "lower": 0.0}}


# -- make_kernel --------------------------------------------------------------

def test_constant_family_values():
    k = const(0.5)
    u = np.linspace(0, 1, 7)
    assert np.all(k(u[:, None], u[None, :]) == 0.5)


def test_bipartite_column_integrals():
    k = ops.make_kernel({"family": "bipartite", "params": {"k": 0.5, "upper": 0.0, "lower": 2.0}})
    cols = k.cells(64).mean(axis=0)
    assert np.allclose(cols[:32], 1.0) and np.allclose(cols[32:], 0.0)


def test_sine_family_at_origin():
    k = ops.make_kernel({"family": "sine", "params": {"a": 0.5, "b": 0.2, "c": 0.1}})
    assert k(0.0, 0.0) == pytest.approx(0.5)


@pytest.mark.parametrize("spec", [
    {"family": "bipartite", "params": {"k": 1.2, "upper": 1.0}},
    {"family": "ring", "params": {"alpha": 0.5, "eps": 1.5}},
    {"family": "ring", "params": {"alpha": 0.0, "eps": 0.5}},
    {"family": "constant", "params": {"c": -1.0}},
    {"family": "sine", "params": {"a": 0.2, "b": 0.2, "c": 0.1}},
    {"family": "nope", "params": {}},
    {"family": "constant", "params": {"c": 1.0, "extra": 2}},
])
def test_bad_family_params(spec):
    with pytest.raises(ValidationError):
        ops.make_kernel(spec)


def test_require_reflection_rejects_norm_above_one():
    with pytest.raises(ValidationError):
        ops.make_kernel({"family": "constant", "params": {"c": 1.5}}, require_reflection="kernel")
    ops.make_kernel({"family": "constant", "params": {"c": 0.5}}, require_reflection="transpose")


def test_ring_row_mass_and_neighbours():
    k = ops.make_kernel({"family": "ring", "params": {"alpha": 0.5, "eps": 0.5}})
    pts = np.arange(1, 9) / 8
    P = k(pts[:, None], pts[None, :]) / 8
    assert np.all((P > 0).sum(axis=1) == 4)
    assert np.allclose(P.sum(axis=1), 0.5)
    # continuum row integral equals 1 - eps up to quadrature error
    assert np.allclose(k.cells(1024).mean(axis=1), 0.5, atol=5e-3)


def test_symmetric_family_is_symmetric():
    k = ops.make_kernel({"family": "symmetric", "params": {"c": 0.4}})
    assert np.allclose(ops.transpose(k).cells(64), k.cells(64))
    assert ops.op_norm(k, M=256) == pytest.approx(0.4, rel=1e-9)


def test_clustered_and_block_breaks():
    k = ops.make_kernel({"family": "clustered", "params": {"breaks": [0.5], "within": 0.8, "between": 0.1}})
    assert k(0.25, 0.25) == 0.8 and k(0.25, 0.75) == pytest.approx(0.1)
    # the break point itself belongs to the left block
    assert k(0.5, 0.5) == 0.8 and k(0.5, 0.51) == pytest.approx(0.1)


def test_kernel_json_round_trip():
    for spec in (ONE_WAY, {"family": "ring", "params": {"alpha": 0.3, "eps": 0.2}, "resolution": 128}):
        k = ops.make_kernel(spec)
        back = ops.Kernel.from_json(k.to_json())
        assert np.array_equal(back.cells(64), k.cells(64))
    b = ops.from_matrix([[0.1, 0.2], [0.3, 0.05]])
    back = ops.Kernel.from_json(b.to_json())
    assert np.array_equal(back.grid, b.grid)
    t = ops.transpose(b)
    assert np.array_equal(ops.Kernel.from_dict(json.loads(t.to_json())).grid, t.grid)


# -- from_matrix --------------------------------------------------------------

def test_from_matrix_swap():
    k = swap_kernel(0.45)
    assert np.allclose(k.grid, [[0, 0.9], [0.9, 0]])
    assert ops.op_norm(ops.transpose(k)) == pytest.approx(0.45)


def test_from_matrix_zero():
    k = ops.from_matrix(np.zeros((3, 3)))
    assert np.all(k.grid == 0) and ops.op_norm(k) == 0.0


def test_from_matrix_single_block():
    k = ops.from_matrix([[0.3]])
    assert k(0.2, 0.9) == pytest.approx(0.3)
    assert ops.spectral_radius(k) == pytest.approx(0.3, abs=1e-10)


@pytest.mark.parametrize("P", [[[0.6, 0.5], [0.0, 0.0]], [[-0.1, 0.0], [0.0, 0.0]]])
def test_from_matrix_rejects(P):
    with pytest.raises(ValidationError):
        ops.from_matrix(P)


# -- apply / apply_field --------------------------------------------------------

def test_apply_constant():
    assert np.allclose(ops.apply(const(0.5), np.ones(16)), 0.5)


def test_apply_swap_blockwise():
    out = ops.apply(swap_kernel(0.45), np.array([1.0, 0.0]))
    assert np.allclose(out, [0.0, 0.45])


def test_apply_zero_operator():
    assert np.all(ops.apply(ops.from_matrix(np.zeros((4, 4))), np.arange(8.0)) == 0)


def test_apply_resolution_mismatch():
    with pytest.raises(ops.ResolutionError):
        ops.apply(ops.from_matrix(np.full((3, 3), 0.1)), np.ones(8))


def test_apply_field_time_constant():
    rng = np.random.default_rng(0)
    f = rng.uniform(0, 1, 8)
    x = PathField(np.repeat(f[:, None], 5, axis=1), 0.1)
    F = ops.from_matrix(random_substochastic(rng, 4))
    y = ops.apply_field(F, x)
    for j in range(5):
        assert np.allclose(y.values[:, j], ops.apply(F, f))


def test_apply_field_zero_and_linear():
    x = PathField.from_function(lambda u, t: t + 0 * u, 8, 1.0, 0.25)
    assert np.all(ops.apply_field(ops.from_matrix(np.zeros((2, 2))), x).values == 0)
    y = ops.apply_field(const(0.3), x)
    assert np.allclose(y.values, 0.3 * x.times[None, :])


# -- transpose -------------------------------------------------------------------

def test_transpose_swaps_indices():
    k = ops.Kernel("blockwise", grid=[[0, 0.9], [0.1, 0]])
    assert np.array_equal(ops.transpose(k).grid, [[0, 0.1], [0.9, 0]])
    assert np.array_equal(ops.transpose(ops.transpose(k)).grid, k.grid)


def test_transpose_norms_differ():
    k = ops.make_kernel({"family": "block", "params": {"values": [[2, 2], [0, 0]], "row_breaks": [0.5]}})
    assert ops.op_norm(k, M=64) == pytest.approx(1.0)
    assert ops.op_norm(ops.transpose(k), M=64) == pytest.approx(2.0)


def test_transpose_closed_form_values():
    k = ops.make_kernel({"family": "power", "params": {"a": 1.0, "p": 1.0, "q": 2.0}})
    kt = ops.transpose(k)
    assert kt(0.3, 0.7) == pytest.approx(k(0.7, 0.3))
    assert ops.transpose(kt)(0.3, 0.7) == k(0.3, 0.7)


# -- compose ---------------------------------------------------------------------------

def test_compose_with_zero():
    z = ops.compose(const(0.5), ops.from_matrix(np.zeros((2, 2))), M=8)
    assert np.all(z.grid == 0)


def test_compose_one_way_bipartite_is_zero():
    b = ops.make_kernel(ONE_WAY)
    assert np.all(ops.compose(b, b, M=64).grid == 0)


def test_compose_constants():
    c = ops.compose(const(0.5), const(0.4), M=16)
    assert np.allclose(c.grid, 0.2)


def test_compose_matches_matrix_product():
    rng = np.random.default_rng(5)
    for _ in range(10):
        N = int(rng.integers(1, 7))
        A = random_substochastic(rng, N)
        B = random_substochastic(rng, N)
        comp = ops.compose(ops.from_matrix(A), ops.from_matrix(B))
        assert np.allclose(comp.grid, N * (A @ B), rtol=0, atol=1e-14)


# -- op_norm / spectral radius -----------------------------------------------------------

def test_op_norm_examples():
    assert ops.op_norm(const(0.5)) == pytest.approx(0.5)
    k = ops.Kernel("blockwise", grid=[[0.8, 0.4], [0.8, 0.4]])
    assert ops.op_norm(k) == pytest.approx(0.8)
    assert ops.op_norm(ops.from_matrix(np.zeros((5, 5)))) == 0.0


def test_spectral_radius_examples():
    assert ops.spectral_radius(const(0.5)) == pytest.approx(0.5, abs=1e-10)
    assert ops.spectral_radius(swap_kernel(0.45)) == pytest.approx(0.45, abs=1e-10)
    assert ops.spectral_radius(ops.make_kernel(ONE_WAY), M=64) == pytest.approx(0.0, abs=1e-9)


def test_spectral_radius_full_report():
    est = ops.spectral_radius(const(0.5), full=True)
    assert est.method == "power" and est.converged and est.resolution == ops.DEFAULT_RESOLUTION


def test_spectral_radius_matches_matrix():
    rng = np.random.default_rng(11)
    for _ in range(10):
        N = int(rng.integers(1, 9))
        P = random_substochastic(rng, N)
        r = float(np.max(np.abs(np.linalg.eigvals(P))))
        got = ops.spectral_radius(ops.transpose(ops.from_matrix(P)))
        assert got == pytest.approx(r, abs=1e-8)


# -- reflection class / bounded parameters --------------------------------------------------

def test_reflection_class_examples():
    assert ops.reflection_class_check(const(0.5)).in_class_R
    v = ops.reflection_class_check(const(1.0))
    assert not v.in_class_R and v.spectral_radius_estimate == pytest.approx(1.0)
    v = ops.reflection_class_check(ops.Kernel("blockwise", grid=[[0.1, -0.2], [0.0, 0.1]]))
    assert not v.nonnegative and not v.in_class_R


def test_bounded_parameters_examples():
    k = ops.Kernel("blockwise", grid=[[0.9, 0.9], [0.9, 0.9]])
    assert ops.op_norm(k) == pytest.approx(0.9)
    assert ops.bounded_parameters(k, gamma=0.9).k == 1
    b = ops.make_kernel(ONE_WAY)
    assert ops.op_norm(b, M=64) == pytest.approx(1.0)
    cert = ops.bounded_parameters(b, gamma=0.5, M=64)
    assert cert.k == 2 and cert.power_norm == 0.0
    cert = ops.bounded_parameters(const(0.5), gamma=0.3)
    assert cert.k == 2 and cert.power_norm == pytest.approx(0.25)


def test_certificate_constants():
    cert = ops.bounded_parameters(const(0.5), gamma=0.3)
    assert cert.psi_lipschitz == 2 / 0.7
    assert cert.phi_lipschitz == 1 + 2 * 2 / 0.7
    assert cert.inverse_norm_bound == cert.psi_lipschitz
    assert cert.recheck(const(0.5))


def test_bounded_parameters_cap():
    with pytest.raises(ops.CertificateError):
        ops.bounded_parameters(const(0.999), gamma=0.5, M=8)
    with pytest.raises(ValidationError):
        ops.bounded_parameters(const(0.5), gamma=1.0)


def test_power_decay_from_certificate():
    rng = np.random.default_rng(3)
    for _ in range(10):
        F = ops.from_matrix(random_substochastic(rng, 6, max_row=0.99))
        cert = ops.bounded_parameters(F, gamma=0.5)
        for m in (1, 2, 3):
            assert ops.op_norm(ops.kernel_power(F, m * cert.k)) <= 0.5 ** m * (1 + 1e-12)


# -- neumann --------------------------------------------------------------------------

def test_neumann_examples():
    assert np.allclose(ops.neumann_apply(const(0.5), np.ones(32)), 2.0, atol=1e-11)
    f = np.array([0.3, -1.0, 2.0, 0.0])
    assert np.array_equal(ops.neumann_apply(ops.from_matrix(np.zeros((4, 4))), f), f)
    out = ops.neumann_apply(swap_kernel(0.45), np.array([1.0, 0.0]))
    d = 1 - 0.45 ** 2
    assert np.allclose(out, [1 / d, 0.45 / d], atol=1e-11)
    assert np.allclose(out, [1.2539, 0.5643], atol=1e-4)


# -- properties ------------------------------------------------------------------------

blocks = st.integers(1, 6).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(0, 3, allow_nan=False))
)


@settings(max_examples=60, deadline=None)
@given(blocks, st.data())
def test_norm_inequality_apply(grid, data):
    n = grid.shape[0]
    F = ops.Kernel("blockwise", grid=grid)
    r = data.draw(st.integers(1, 3))
    f = data.draw(arrays(np.float64, (n * r,), elements=st.floats(-5, 5, allow_nan=False)))
    lhs = np.abs(ops.apply(F, f)).mean()
    assert lhs <= ops.op_norm(F) * np.abs(f).mean() * (1 + 1e-12) + 1e-15


@settings(max_examples=60, deadline=None)
@given(blocks, blocks)
def test_norm_submultiplicative(g1, g2):
    F1, F2 = ops.Kernel("blockwise", grid=g1), ops.Kernel("blockwise", grid=g2)
    lhs = ops.op_norm(ops.compose(F1, F2))
    assert lhs <= ops.op_norm(F1) * ops.op_norm(F2) * (1 + 1e-12) + 1e-15


@settings(max_examples=40, deadline=None)
@given(blocks)
def test_transpose_involution(grid):
    F = ops.Kernel("blockwise", grid=grid)
    assert np.array_equal(ops.transpose(ops.transpose(F)).grid, F.grid)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 31 - 1))
def test_transpose_of_lift_has_row_sum_norm(N, seed):
    P = random_substochastic(np.random.default_rng(seed), N)
    assert ops.op_norm(ops.transpose(ops.from_matrix(P))) == pytest.approx(P.sum(axis=1).max(), abs=1e-15)
