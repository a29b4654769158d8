"""Network forward/backward passes, ordinal coding, training behavior."""

import numpy as np
import pytest

from peakcast.nn import (
    LayerSpec,
    Network,
    NetworkSpec,
    ShapeError,
    TrainConfig,
    TrainingError,
    build_architecture,
    gradient_check,
    mse_loss,
    ordinal_bce_loss,
    ordinal_decode,
    ordinal_decode_batch,
    ordinal_encode,
    ordinal_encode_batch,
    train,
)


def _dense_spec(dims, output="dp_scalar"):
    layers = []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        layers.append(LayerSpec("dense", {"n_in": n_in, "n_out": n_out}))
    return NetworkSpec((("main", tuple(layers)),), (), output)


def _wake_output(net, bias=1.0):
    """Shift the final dense bias so ReLU outputs are active."""
    for layer in reversed(list(net._all_layers())):
        if layer.params:
            layer.b[:] = bias
            return net
    return net


class TestForward:
    def test_zero_weights_zero_output(self):
        spec = NetworkSpec(
            (("main", (LayerSpec("dense", {"n_in": 4, "n_out": 3}),
                       LayerSpec("relu"))),),
            (), "dp_scalar",
        )
        net = Network(spec, seed=0)
        for p in net.params:
            p[:] = 0.0
        out = net.forward({"main": np.random.default_rng(0).normal(size=(6, 4))})
        assert np.abs(out).max() == 0.0

    def test_identity_dense(self):
        net = Network(_dense_spec([3, 3]), seed=0)
        net.params[0][:] = np.eye(3)
        net.params[1][:] = 0.0
        x = np.random.default_rng(1).normal(size=(5, 3))
        assert np.abs(net.forward({"main": x}) - x).max() == 0.0

    def test_two_layer_hand_unroll(self):
        net = Network(_dense_spec([2, 3, 1]), seed=7)
        w1, b1, w2, b2 = net.params
        x = np.array([[0.3, -1.2], [2.0, 0.5]])
        by_hand = (x @ w1 + b1) @ w2 + b2
        assert np.abs(net.forward({"main": x}) - by_hand).max() < 1e-12

    def test_shape_mismatch_names_layer(self):
        net = Network(_dense_spec([4, 2]), seed=0)
        with pytest.raises(ShapeError, match="dense layer expects"):
            net.forward({"main": np.zeros((3, 5))})

    def test_missing_branch_input(self):
        net = Network(_dense_spec([4, 2]), seed=0)
        with pytest.raises(ShapeError, match="missing input block"):
            net.forward({"other": np.zeros((3, 4))})


class TestConv1D:
    def _conv_net(self, filters, kernel, stride=1, c_in=2, length=48):
        spec = NetworkSpec(
            (("main", (
                LayerSpec("conv1d", {"c_in": c_in, "filters": filters,
                                     "kernel": kernel, "stride": stride}),
                LayerSpec("flatten"),
            )),),
            (), "dp_scalar",
        )
        return Network(spec, seed=3)

    def test_full_width_kernel_is_dot_product(self):
        net = self._conv_net(1, 48)
        x = np.random.default_rng(5).normal(size=(4, 2, 48))
        out = net.forward({"main": x})
        w, b = net.params
        oracle = np.array([np.sum(xi * w[0]) + b[0] for xi in x])
        assert out.shape == (4, 1)
        assert np.abs(out.ravel() - oracle).max() < 1e-12

    def test_averaging_filter_on_constant_channel(self):
        net = self._conv_net(1, 5)
        w, b = net.params
        w[0, 0, :] = 1.0 / 5.0
        w[0, 1, :] = 0.0
        b[:] = 0.0
        x = np.zeros((2, 2, 48))
        x[:, 0, :] = 7.25
        x[:, 1, :] = np.random.default_rng(0).normal(size=(2, 48))
        out = net.forward({"main": x})
        assert np.abs(out - 7.25).max() < 1e-12

    def test_output_length_arithmetic(self):
        net = self._conv_net(3, 3)
        out = net.forward({"main": np.zeros((1, 2, 48))})
        assert out.shape == (1, 3 * 46)

    def test_stride(self):
        net = self._conv_net(2, 7, stride=2)
        out = net.forward({"main": np.zeros((1, 2, 48))})
        assert out.shape == (1, 2 * ((48 - 7) // 2 + 1))

    def test_kernel_too_wide(self):
        net = self._conv_net(1, 49)
        with pytest.raises(ShapeError, match="kernel"):
            net.forward({"main": np.zeros((1, 2, 48))})


class TestOrdinalCoding:
    def test_boundaries(self):
        assert np.array_equal(ordinal_encode(0), np.eye(48)[0] * 0 + (np.arange(48) == 0))
        assert ordinal_encode(0)[0] == 1.0 and ordinal_encode(0)[1:].max() == 0.0
        assert ordinal_encode(47).min() == 1.0

    def test_five_slot_grid_pattern(self):
        assert np.array_equal(ordinal_encode(3, n_slots=5), [1.0, 1.0, 1.0, 1.0, 0.0])

    def test_round_trip_exhaustive(self):
        for k in range(48):
            assert ordinal_decode(ordinal_encode(k)) == k

    def test_decode_clamps(self):
        assert ordinal_decode(np.full(48, 0.9)) == 47
        assert ordinal_decode(np.full(48, 0.1)) == 0

    def test_count_rule_on_non_monotone_outputs(self):
        outputs = np.array([0.9, 0.8, 0.4, 0.6, 0.2])
        assert ordinal_decode(outputs) == 2

    def test_batch_versions(self):
        ips = np.array([0, 9, 47])
        enc = ordinal_encode_batch(ips)
        assert enc.shape == (3, 48)
        assert np.array_equal(ordinal_decode_batch(enc), ips)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            ordinal_encode(48)
        with pytest.raises(ValueError):
            ordinal_encode(-1)


class TestDropout:
    def test_eval_mode_is_identity(self):
        spec = NetworkSpec(
            (("main", (LayerSpec("dropout", {"rate": 0.5}),)),), (), "dp_scalar"
        )
        net = Network(spec, seed=0)
        x = np.random.default_rng(2).normal(size=(10, 6))
        out = net.forward({"main": x}, train=False)
        assert np.array_equal(out, x)

    def test_inverted_scaling_preserves_expectation(self):
        spec = NetworkSpec(
            (("main", (LayerSpec("dropout", {"rate": 0.3}),)),), (), "dp_scalar"
        )
        net = Network(spec, seed=0)
        rng = np.random.default_rng(11)
        x = np.ones((100_000, 1))
        out = net.forward({"main": x}, train=True, rng=rng)
        assert abs(out.mean() - 1.0) < 0.01


class TestTraining:
    def _linear_problem(self, n=200, seed=2):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, 3))
        y = X @ np.array([1.0, -2.0, 0.5]) + 5.0 + rng.normal(size=n) * 0.1
        return X, y

    def test_linear_net_reaches_ols(self):
        X, y = self._linear_problem()
        net = Network(_dense_spec([3, 1]), seed=0)
        trace = train(net, {"main": X}, y,
                      TrainConfig(epochs=400, batch_size=32, learning_rate=0.01, seed=4))
        design = np.column_stack([X, np.ones(len(y))])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        ols_mse = float(np.mean((y - design @ coef) ** 2))
        assert trace[-1] < ols_mse + 1e-3

    def test_zero_learning_rate_is_fixed_point(self):
        X, y = self._linear_problem(n=50)
        net = Network(_dense_spec([3, 1]), seed=0)
        before = [p.copy() for p in net.params]
        train(net, {"main": X}, y,
              TrainConfig(epochs=3, batch_size=16, learning_rate=0.0,
                          optimizer="sgd", seed=0))
        for p, b in zip(net.params, before):
            assert np.array_equal(p, b)

    def test_fixed_seed_bit_identical_traces(self):
        X, y = self._linear_problem(n=80)
        cfg = TrainConfig(epochs=20, batch_size=16, learning_rate=1e-3, seed=9)
        t1 = train(Network(_dense_spec([3, 1]), seed=1), {"main": X}, y, cfg)
        t2 = train(Network(_dense_spec([3, 1]), seed=1), {"main": X}, y, cfg)
        assert t1 == t2

    def test_divergence_reports_epoch(self):
        X, y = self._linear_problem(n=50)
        net = Network(_dense_spec([3, 1]), seed=0)
        with pytest.raises(TrainingError, match="epoch"):
            train(net, {"main": X}, y * 1e150,
                  TrainConfig(epochs=10, batch_size=16, learning_rate=1e6,
                              optimizer="sgd", seed=0))

    def test_full_batch_descent_is_monotone(self):
        X, y = self._linear_problem(n=60)
        net = Network(_dense_spec([3, 1]), seed=5)
        trace = train(net, {"main": X}, y,
                      TrainConfig(epochs=40, batch_size=60, learning_rate=1e-3,
                                  optimizer="sgd", seed=0))
        assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))


class TestGradientChecks:
    def test_dense_relu_dense_mse(self):
        rng = np.random.default_rng(6)
        spec = NetworkSpec(
            (("main", (
                LayerSpec("dense", {"n_in": 5, "n_out": 8}),
                LayerSpec("relu"),
                LayerSpec("dense", {"n_in": 8, "n_out": 1}),
            )),),
            (), "dp_scalar",
        )
        net = _wake_output(Network(spec, seed=2))
        X = {"main": rng.normal(size=(6, 5))}
        assert gradient_check(net, "mse", X, rng.normal(size=6)) < 1e-5

    def test_conv_branch(self):
        rng = np.random.default_rng(7)
        spec = NetworkSpec(
            (("main", (
                LayerSpec("conv1d", {"c_in": 2, "filters": 3, "kernel": 7, "stride": 1}),
                LayerSpec("relu"),
                LayerSpec("conv1d", {"c_in": 3, "filters": 2, "kernel": 5, "stride": 1}),
                LayerSpec("relu"),
                LayerSpec("flatten"),
                LayerSpec("dense", {"n_in": 2 * 38, "n_out": 1}),
            )),),
            (), "dp_scalar",
        )
        net = _wake_output(Network(spec, seed=3))
        X = {"main": rng.normal(size=(4, 2, 48))}
        assert gradient_check(net, "mse", X, rng.normal(size=4)) < 1e-5

    def test_ordinal_bce_head(self):
        rng = np.random.default_rng(8)
        spec = NetworkSpec(
            (("main", (
                LayerSpec("dense", {"n_in": 6, "n_out": 10}),
                LayerSpec("relu"),
                LayerSpec("dense", {"n_in": 10, "n_out": 48}),
                LayerSpec("sigmoid"),
            )),),
            (), "ip_ordinal_48",
        )
        net = Network(spec, seed=4)
        X = {"main": rng.normal(size=(5, 6))}
        targets = ordinal_encode_batch(rng.integers(0, 48, size=5))
        assert gradient_check(net, "ordinal_bce", X, targets) < 1e-5


class TestArchitectures:
    def test_fcnn_parameter_count(self):
        spec = build_architecture("hr_fcnn", "dp", n_inputs=59)
        net = Network(spec, seed=0)
        count = sum(p.size for p in net.params)
        assert count == (59 * 50 + 50) + (50 * 1 + 1)

    def test_mr_cnn_has_three_conv_branches(self):
        spec = build_architecture("mr_cnn", "dp")
        conv_branches = [
            name for name, layers in spec.branches
            if any(ls.kind == "conv1d" for ls in layers)
        ]
        assert len(conv_branches) == 3

    def test_ip_head_has_48_sigmoid_outputs(self):
        spec = build_architecture("mr_cnn", "ip")
        assert spec.head[-1].kind == "sigmoid"
        assert spec.head[-2].dims["n_out"] == 48
        net = Network(spec, seed=0)
        out = net.forward({
            "lowres": np.zeros((2, 8)),
            "tem": np.zeros((2, 2, 48)),
            "tem95": np.zeros((2, 2, 48)),
            "lag": np.zeros((2, 2, 48)),
        })
        assert out.shape == (2, 48)
        assert (out >= 0).all() and (out <= 1).all()

    def test_architecture_gradient_checks(self):
        # every architecture and both targets, sampled parameter entries
        rng = np.random.default_rng(9)
        cases = []
        for arch in ("hr_fcnn", "lr_fcnn"):
            for target, loss in (("dp", "mse"), ("ip", "ordinal_bce")):
                cases.append((arch, target, loss, {"main": rng.normal(size=(4, 12))}, 12))
        for target, loss in (("dp", "mse"), ("ip", "ordinal_bce")):
            inputs = {"lowres": rng.normal(size=(4, 8)),
                      "tem": rng.normal(size=(4, 2, 48)),
                      "tem95": rng.normal(size=(4, 2, 48)),
                      "lag": rng.normal(size=(4, 2, 48))}
            cases.append(("mr_cnn", target, loss, inputs, None))
        for arch, target, loss, inputs, n_inputs in cases:
            spec = build_architecture(arch, target, n_inputs=n_inputs)
            net = _wake_output(Network(spec, seed=10), bias=0.5)
            if target == "dp":
                targets = np.abs(rng.normal(size=4)) + 0.5
            else:
                targets = ordinal_encode_batch(rng.integers(0, 48, size=4))
            err = gradient_check(net, loss, inputs, targets,
                                 max_entries_per_param=60, seed=0)
            assert err < 1e-5, (arch, target, err)

    def test_persistence_round_trip(self):
        spec = build_architecture("mr_cnn", "ip")
        net = Network(spec, seed=12)
        rng = np.random.default_rng(1)
        inputs = {"lowres": rng.normal(size=(3, 8)),
                  "tem": rng.normal(size=(3, 2, 48)),
                  "tem95": rng.normal(size=(3, 2, 48)),
                  "lag": rng.normal(size=(3, 2, 48))}
        clone = Network.from_json(net.to_json())
        assert np.abs(clone.forward(inputs) - net.forward(inputs)).max() < 1e-12

    def test_unknown_names_rejected(self):
        with pytest.raises(ValueError):
            build_architecture("rnn", "dp", n_inputs=3)
        with pytest.raises(ValueError):
            build_architecture("lr_fcnn", "load", n_inputs=3)
