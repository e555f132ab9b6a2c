import numpy as np
import pytest

from planforge import nn

F64 = np.float64


def make_rng(name="test"):
    return nn.stream(1234, name)


class TestConv2d:
    def test_ones_kernel_center_output(self):
        conv = nn.Conv2d(1, 1, kernel=3, stride=1, pad=1, bias=False, dtype=F64)
        conv.params["w"][...] = 1.0
        x = np.ones((1, 1, 3, 3), dtype=F64)
        y = conv.forward(x)
        assert y.shape == (1, 1, 3, 3)
        assert y[0, 0, 1, 1] == pytest.approx(9.0)
        assert y[0, 0, 0, 0] == pytest.approx(4.0)  # corner sees 2x2 ones

    def test_identity_kernel(self):
        conv = nn.Conv2d(1, 1, kernel=3, stride=1, pad=1, bias=False, dtype=F64)
        conv.params["w"][...] = 0.0
        conv.params["w"][0, 0, 1, 1] = 1.0
        x = make_rng().standard_normal((2, 1, 8, 8))
        assert np.allclose(conv.forward(x), x)

    def test_shape_mismatch(self):
        conv = nn.Conv2d(3, 4, dtype=F64)
        with pytest.raises(nn.ShapeError):
            conv.forward(np.zeros((1, 2, 8, 8)))

    def test_gradients_vs_finite_differences(self):
        rng = make_rng("conv-gc")
        conv = nn.Conv2d(2, 3, kernel=3, stride=2, pad=1, rng=rng, dtype=F64)
        x = rng.standard_normal((2, 2, 7, 7))
        err = nn.layer_grad_check(conv, x, rng=np.random.default_rng(0))
        assert err < 1e-3


class TestConvTranspose2d:
    def test_spatial_doubling(self):
        up = nn.ConvTranspose2d(4, 2, kernel=4, stride=2, pad=1, dtype=F64)
        x = np.zeros((1, 4, 32, 32), dtype=F64)
        assert up.forward(x).shape == (1, 2, 64, 64)

    def test_zero_input_zero_output_without_bias(self):
        up = nn.ConvTranspose2d(2, 2, bias=False, dtype=F64)
        y = up.forward(np.zeros((1, 2, 8, 8), dtype=F64))
        assert np.all(y == 0.0)

    def test_adjoint_of_conv(self):
        # <conv(x), y> == <x, convT(y)> when convT uses the same kernel
        rng = make_rng("adjoint")
        w = rng.standard_normal((3, 2, 4, 4))  # [F, C, kh, kw]
        conv = nn.Conv2d(2, 3, kernel=4, stride=2, pad=1, bias=False, dtype=F64)
        conv.params["w"][...] = w
        up = nn.ConvTranspose2d(3, 2, kernel=4, stride=2, pad=1, bias=False, dtype=F64)
        up.params["w"][...] = w.transpose(0, 1, 2, 3)  # [C_in=3, C_out=2, kh, kw]
        x = rng.standard_normal((1, 2, 8, 8))
        y = rng.standard_normal((1, 3, 4, 4))
        assert np.sum(conv.forward(x) * y) == pytest.approx(np.sum(x * up.forward(y)), rel=1e-10)

    def test_gradients_vs_finite_differences(self):
        rng = make_rng("convT-gc")
        up = nn.ConvTranspose2d(3, 2, kernel=4, stride=2, pad=1, rng=rng, dtype=F64)
        x = rng.standard_normal((2, 3, 5, 5))
        err = nn.layer_grad_check(up, x, rng=np.random.default_rng(1))
        assert err < 1e-3


class TestBatchNorm:
    def test_constant_channel_zero_pre_affine(self):
        bn = nn.BatchNorm2d(2, dtype=F64)
        x = np.full((4, 2, 5, 5), 3.7, dtype=F64)
        y = bn.forward(x, train=True)
        assert np.allclose(y, 0.0, atol=1e-6)

    def test_eval_identity_with_unit_running_stats(self):
        bn = nn.BatchNorm2d(3, dtype=F64)
        x = make_rng("bn").standard_normal((2, 3, 4, 4))
        y = bn.forward(x, train=False)
        assert np.allclose(y, x / np.sqrt(1 + bn.EPS), atol=1e-12)

    def test_single_sample_train_uses_running_stats(self):
        bn = nn.BatchNorm2d(2, dtype=F64)
        before = (bn.running_mean.copy(), bn.running_var.copy())
        x = make_rng("bn1").standard_normal((1, 2, 4, 4))
        bn.forward(x, train=True)
        assert np.array_equal(bn.running_mean, before[0])
        assert np.array_equal(bn.running_var, before[1])

    def test_gradients_vs_finite_differences(self):
        rng = make_rng("bn-gc")
        bn = nn.BatchNorm2d(3, dtype=F64)
        x = rng.standard_normal((4, 3, 5, 5))
        err = nn.layer_grad_check(bn, x, rng=np.random.default_rng(2))
        assert err < 1e-3


class TestPointwise:
    def test_sigmoid_zero(self):
        assert nn.Sigmoid().forward(np.zeros((1,)))[0] == pytest.approx(0.5)

    def test_relu_all_negative(self):
        y = nn.ReLU().forward(-np.ones((2, 3)))
        assert np.all(y == 0.0)

    def test_dropout_p0_identity(self):
        d = nn.Dropout(0.0)
        x = make_rng("drop").standard_normal((3, 3))
        assert np.array_equal(d.forward(x, train=True), x)

    def test_dropout_eval_identity(self):
        d = nn.Dropout(0.5)
        x = make_rng("drop2").standard_normal((3, 3))
        assert np.array_equal(d.forward(x, train=False), x)

    def test_dropout_inverted_scaling(self):
        d = nn.Dropout(0.5, rng=nn.stream(7, "dropout"))
        x = np.ones((200, 200))
        y = d.forward(x, train=True)
        assert set(np.unique(y)) <= {0.0, 2.0}
        assert y.mean() == pytest.approx(1.0, rel=0.05)

    def test_relu_gradient_away_from_kink(self):
        relu = nn.ReLU()
        rng = make_rng("relu-gc")
        x = rng.standard_normal((4, 4))
        x[np.abs(x) < 0.1] = 0.5  # keep clear of the kink
        err = nn.layer_grad_check(relu, x, rng=np.random.default_rng(3))
        assert err < 1e-6


class TestMSE:
    def test_equal_inputs(self):
        x = make_rng("mse").standard_normal((4, 4))
        loss, grad = nn.mse_loss(x, x.copy())
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_all_ones_vs_zeros(self):
        loss, _ = nn.mse_loss(np.ones((256, 256)), np.zeros((256, 256)))
        assert loss == pytest.approx(1.0)

    def test_gradient_formula_and_finite_differences(self):
        rng = make_rng("mse-gc")
        pred = rng.standard_normal((5, 5))
        target = rng.standard_normal((5, 5))
        loss, grad = nn.mse_loss(pred, target)
        assert np.allclose(grad, 2.0 * (pred - target) / pred.size)
        err = nn.grad_check(lambda: nn.mse_loss(pred, target)[0],
                            {"pred": pred}, {"pred": grad})
        assert err < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(nn.ShapeError):
            nn.mse_loss(np.zeros((2, 2)), np.zeros((3, 3)))


class TestAdamW:
    def test_zero_grad_no_decay_is_noop(self):
        p = np.array([1.0, -2.0])
        opt = nn.AdamW({"p": p}, lr=0.1, weight_decay=0.0)
        opt.step({"p": np.zeros(2)})
        assert np.array_equal(p, [1.0, -2.0])

    def test_first_step_update_formula(self):
        # bias-corrected first step: delta = -lr * g / (|g| + eps)
        g = np.array([0.3, -0.7, 1.5])
        p = np.zeros(3)
        opt = nn.AdamW({"p": p}, lr=0.01, weight_decay=0.0)
        opt.step({"p": g.copy()})
        expected = -0.01 * g / (np.abs(g) + 1e-8)
        assert np.allclose(p, expected, rtol=1e-6)

    def test_decoupled_decay_with_zero_grad(self):
        p = np.array([2.0])
        opt = nn.AdamW({"p": p}, lr=0.5, weight_decay=1e-4)
        opt.step({"p": np.zeros(1)})
        assert p[0] == pytest.approx(2.0 * (1 - 0.5 * 1e-4))

    def test_gradient_overflow(self):
        opt = nn.AdamW({"p": np.zeros(1)}, lr=0.1)
        with pytest.raises(nn.GradientOverflow, match="gradient overflow"):
            opt.step({"p": np.array([np.nan])})

    def test_determinism(self):
        def run():
            rng = nn.stream(5, "adam-det")
            p = rng.standard_normal(8)
            opt = nn.AdamW({"p": p}, lr=0.01)
            for _ in range(20):
                opt.step({"p": rng.standard_normal(8)})
            return p

        assert np.array_equal(run(), run())


class TestSchedule:
    def test_epoch0_is_base(self):
        s = nn.WarmRestartSchedule(0.01, 0.0, t0=10, tmult=2)
        assert s.lr_at(0) == 0.01

    def test_restart_boundaries(self):
        s = nn.WarmRestartSchedule(0.01, 0.0, t0=10, tmult=2)
        for epoch in (0, 10, 30, 70):
            assert s.lr_at(epoch) == pytest.approx(0.01, rel=1e-12)

    def test_cycle_midpoints_are_half(self):
        s = nn.WarmRestartSchedule(0.01, 0.0, t0=10, tmult=2)
        for mid in (5, 20, 50):
            assert s.lr_at(mid) == pytest.approx(0.005, rel=1e-12)

    def test_continuous_within_cycle(self):
        s = nn.WarmRestartSchedule(1.0, 0.1, t0=10, tmult=2)
        xs = np.linspace(0, 9.999, 500)
        vals = [s.lr_at(x) for x in xs]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))  # monotone in-cycle
        assert max(abs(vals[i + 1] - vals[i]) for i in range(499)) < 0.01

    def test_validation(self):
        with pytest.raises(ValueError):
            nn.WarmRestartSchedule(0.001, 0.01)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        arrays = {
            "enc.w": np.arange(24, dtype=np.float32).reshape(2, 3, 4),
            "enc.b": np.array([1.5], dtype=np.float32),
        }
        path = tmp_path / "model.gfln"
        nn.save_arrays(path, arrays)
        loaded = nn.load_arrays(path)
        assert set(loaded) == set(arrays)
        for k in arrays:
            assert np.array_equal(loaded[k], arrays[k])

    def test_magic_bytes(self, tmp_path):
        path = tmp_path / "model.gfln"
        nn.save_arrays(path, {"x": np.zeros(2, dtype=np.float32)})
        assert path.read_bytes()[:4] == b"GFLN"

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(nn.CheckpointError):
            nn.load_arrays(path)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "model.gfln"
        nn.save_arrays(path, {"x": np.ones(64, dtype=np.float32)})
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(nn.CheckpointError, match="truncated"):
            nn.load_arrays(path)


class TestStreams:
    def test_named_streams_independent(self):
        a = nn.stream(0, "init").standard_normal(4)
        b = nn.stream(0, "dropout").standard_normal(4)
        assert not np.allclose(a, b)

    def test_same_name_reproducible(self):
        a = nn.stream(9, "sampling").standard_normal(4)
        b = nn.stream(9, "sampling").standard_normal(4)
        assert np.array_equal(a, b)


class TestLinearAndSequential:
    def test_linear_gradcheck_tight(self):
        rng = make_rng("lin-gc")
        lin = nn.Linear(6, 4, rng=rng, dtype=F64)
        x = rng.standard_normal((3, 6))
        err = nn.layer_grad_check(lin, x, rng=np.random.default_rng(4))
        assert err < 1e-6

    def test_sequential_chain_gradcheck(self):
        rng = make_rng("seq-gc")
        net = nn.Sequential(
            nn.Conv2d(1, 2, kernel=3, stride=1, pad=1, rng=rng, dtype=F64),
            nn.BatchNorm2d(2, dtype=F64),
            nn.ReLU(),
            nn.ConvTranspose2d(2, 1, rng=rng, dtype=F64),
            nn.Sigmoid(),
        )
        x = rng.standard_normal((2, 1, 6, 6))
        err = nn.layer_grad_check(net, x, rng=np.random.default_rng(5), max_checks=32)
        assert err < 1e-3
