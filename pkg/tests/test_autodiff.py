import numpy as np
import pytest

from neonext.autodiff import (
    Grads,
    Param,
    Tape,
    Val,
    backward,
    fd_check,
    neocell_backward,
    tracked_matmul,
    tracked_mul,
    tracked_sum,
)
from neonext.equiv import random_params
from neonext.errors import NumericError, UsageError
from neonext.neocell import (
    GroupSpec,
    NeoCellParams,
    NeoCellSpec,
    forward_blockdiag,
    forward_patchwise,
    identity_params,
)
from neonext.rng import Rng
from neonext.tensor import Matrix, Tensor4


def loss_and_grads_neocell(x, spec, params):
    """0.5*||y||^2 through the patchwise forward, with analytic gradients."""
    y = forward_patchwise(x, spec, params)
    loss = 0.5 * float((y.array**2).sum())
    gx, gp = neocell_backward(x, spec, params, y)
    return loss, gx, gp


class TestTape:
    def test_single_matmul_node_closed_form(self):
        rng = Rng(0)
        a = Param("a", rng.normal((3, 4), 1.0))
        b = Param("b", rng.normal((4, 2), 1.0))
        tape = Tape()
        out = tracked_matmul(tape, a, b)
        loss = tracked_sum(tape, out)
        grads = backward(tape)
        g = np.ones((3, 2))
        assert np.allclose(grads["a"], g @ b.array.T, rtol=0, atol=0)
        assert np.allclose(grads["b"], a.array.T @ g, rtol=0, atol=0)

    def test_chain_of_two_nodes_matches_fd(self):
        rng = Rng(1)
        a = Param("a", rng.normal((2, 3), 1.0))
        b = Param("b", rng.normal((3, 3), 1.0))
        c = Param("c", rng.normal((3, 2), 1.0))

        def run(tape=None):
            t = tape if tape is not None else Tape()
            out = tracked_matmul(t, tracked_matmul(t, a, b), c)
            return tracked_sum(t, tracked_mul(t, out, out))

        tape = Tape()
        run(tape)
        grads = backward(tape)
        report = fd_check(lambda: float(run().array), [a, b, c], grads, eps=1e-6, threshold=1e-6)
        assert report.passed

    def test_zero_loss_gradient_gives_zero_grads(self):
        a = Param("a", Rng(2).normal((2, 2), 1.0))
        tape = Tape()
        tracked_sum(tape, tracked_mul(tape, a, a))
        grads = backward(tape, loss_grad=0.0)
        assert not grads["a"].any()

    def test_empty_tape_is_usage_error(self):
        with pytest.raises(UsageError):
            backward(Tape())

    def test_double_backward_is_usage_error(self):
        a = Param("a", np.ones((2, 2)))
        tape = Tape()
        tracked_sum(tape, a)
        backward(tape)
        with pytest.raises(UsageError, match="consumed"):
            backward(tape)

    def test_unreached_param_gets_zeros(self):
        a = Param("a", np.ones(3))
        b = Param("b", np.ones(3))
        tape = Tape()
        tape.watch(b)
        tracked_sum(tape, a)
        grads = backward(tape)
        assert not grads["b"].any()
        assert grads["a"].shape == (3,)

    def test_repeat_backward_bit_identical(self):
        rng = Rng(3)
        spec = NeoCellSpec((GroupSpec(0, 2, 4, 4, 4, 4, shift=1),), use_bias=True)
        params = random_params(spec, rng)
        x = Tensor4(rng.normal((2, 2, 8, 8), 1.0))
        _, gx1, gp1 = loss_and_grads_neocell(x, spec, params)
        _, gx2, gp2 = loss_and_grads_neocell(x, spec, params)
        assert np.array_equal(gx1.array, gx2.array)
        for c in range(2):
            assert np.array_equal(gp1.left[c].array, gp2.left[c].array)
            assert np.array_equal(gp1.right[c].array, gp2.right[c].array)


class TestNeocellBackward:
    def test_identity_params_pass_gradient_through(self):
        spec = NeoCellSpec((GroupSpec(0, 2, 4, 4, 4, 4),))
        params = identity_params(spec)
        x = Tensor4(Rng(4).normal((1, 2, 8, 8), 1.0))
        gout = Tensor4(Rng(5).normal((1, 2, 8, 8), 1.0))
        gx, _ = neocell_backward(x, spec, params, gout)
        assert np.array_equal(gx.array, gout.array)

    def test_scalar_case_chain_rule(self):
        spec = NeoCellSpec((GroupSpec(0, 1, 1, 1, 1, 1),))
        l, xval, r, g = 1.7, -0.6, 2.3, 0.9
        params = NeoCellParams([Matrix([[l]])], [Matrix([[r]])])
        x = Tensor4(np.full((1, 1, 1, 1), xval))
        gout = Tensor4(np.full((1, 1, 1, 1), g))
        gx, gp = neocell_backward(x, spec, params, gout)
        assert np.isclose(gx.array.item(), l * g * r, rtol=0, atol=1e-15)
        assert np.isclose(gp.left[0].array.item(), g * xval * r, rtol=0, atol=1e-15)
        assert np.isclose(gp.right[0].array.item(), l * xval * g, rtol=0, atol=1e-15)

    def test_random_mixed_config_matches_central_differences(self):
        spec = NeoCellSpec(
            (GroupSpec(0, 1, 4, 4, 4, 4, shift=1), GroupSpec(1, 2, 7, 7, 7, 7, shift=1)),
            use_bias=True,
        )
        params = random_params(spec, Rng(6))
        x = Tensor4(Rng(7).normal((1, 2, 28, 28), 1.0))
        _, gx, gp = loss_and_grads_neocell(x, spec, params)
        eps = 1e-5

        def rel(a, fd):
            return abs(a - fd) / max(abs(a), abs(fd), 1e-5)

        def loss_with(p):
            return 0.5 * float((forward_patchwise(x, spec, p).array ** 2).sum())

        worst = 0.0
        probe = Rng(8)
        for c in range(2):
            for attr, grad in (("left", gp.left[c]), ("right", gp.right[c]), ("bias", gp.bias[c])):
                base = getattr(params, attr)[c].array
                flat_idx = int(probe.integers(1, base.size)[0])
                i, j = np.unravel_index(flat_idx, base.shape)
                for idx in {(0, 0), (int(i), int(j))}:
                    delta = np.zeros_like(base)
                    delta[idx] = eps
                    plus = [m for m in getattr(params, attr)]
                    minus = [m for m in getattr(params, attr)]
                    plus[c] = Matrix(base + delta)
                    minus[c] = Matrix(base - delta)
                    kw = {attr: plus}
                    p_plus = NeoCellParams(**{**_params_kw(params), **kw})
                    kw = {attr: minus}
                    p_minus = NeoCellParams(**{**_params_kw(params), **kw})
                    fd = (loss_with(p_plus) - loss_with(p_minus)) / (2 * eps)
                    worst = max(worst, rel(grad.array[idx], fd))
        # input gradient via perturbation of single pixels
        for idx in [(0, 0, 0, 0), (0, 1, 13, 27), (0, 0, 5, 5)]:
            delta = np.zeros(x.dims)
            delta[idx] = eps
            fd = (loss_with_x(x.array + delta, spec, params) - loss_with_x(x.array - delta, spec, params)) / (2 * eps)
            worst = max(worst, rel(gx.array[idx], fd))
        assert worst <= 1e-4

    def test_blockdiag_and_patchwise_gradients_agree(self):
        spec = NeoCellSpec((GroupSpec(0, 2, 4, 4, 4, 4, shift=2),), use_bias=True)
        params = random_params(spec, Rng(9))
        x = Tensor4(Rng(10).normal((1, 2, 8, 8), 1.0))
        y_ref = forward_patchwise(x, spec, params)
        y_blk = forward_blockdiag(x, spec, params)
        gx_ref, gp_ref = neocell_backward(x, spec, params, y_ref)
        gx_blk, gp_blk = neocell_backward(x, spec, params, y_blk)
        assert np.abs(gx_ref.array - gx_blk.array).max() <= 1e-9
        for c in range(2):
            assert np.abs(gp_ref.left[c].array - gp_blk.left[c].array).max() <= 1e-9


def _params_kw(params):
    return {"left": params.left, "right": params.right, "bias": params.bias}


def loss_with_x(x_arr, spec, params):
    return 0.5 * float((forward_patchwise(Tensor4(x_arr), spec, params).array ** 2).sum())


class TestFdCheck:
    def test_quadratic_loss(self):
        p = Param("p", Rng(11).normal(8, 1.0))

        def f():
            return 0.5 * float((p.array**2).sum())

        grads = Grads({"p": p.array.copy()})
        report = fd_check(f, [p], grads, eps=1e-5, threshold=1e-9)
        assert report.passed
        assert report.max_rel_err <= 1e-9

    def test_linear_loss_near_exact(self):
        w = Rng(12).normal(6, 1.0)
        p = Param("p", Rng(13).normal(6, 1.0))

        def f():
            return float(w @ p.array)

        report = fd_check(f, [p], Grads({"p": w.copy()}), eps=1e-5, threshold=1e-10)
        assert report.passed

    def test_detects_wrong_gradient(self):
        p = Param("p", np.ones(3))

        def f():
            return float((p.array**2).sum())

        report = fd_check(f, [p], Grads({"p": np.ones(3)}), eps=1e-5, threshold=1e-4)
        assert not report.passed

    def test_non_finite_loss_raises_with_index(self):
        p = Param("p", np.zeros(2))

        def f():
            return float("inf") if p.array[1] != 0 else 0.0

        with pytest.raises(NumericError, match=r"p\[1\]"):
            fd_check(f, [p], Grads({"p": np.zeros(2)}), entries_per_param=None)

    def test_table_lists_every_parameter(self):
        a = Param("alpha", np.ones(2))
        b = Param("beta", np.ones(2))

        def f():
            return 0.5 * float((a.array**2).sum() + (b.array**2).sum())

        report = fd_check(f, [a, b], Grads({"alpha": a.array.copy(), "beta": b.array.copy()}))
        text = report.table()
        assert "alpha" in text and "beta" in text
