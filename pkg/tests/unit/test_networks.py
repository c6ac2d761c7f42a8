"""Tests for KAN/MLP networks, parameter views, solver pairs and checkpoints."""

import numpy as np
import pytest

from daekan import autodiff as ad
from daekan.autodiff import ADScalar, ComputationRecord
from daekan.bsplines import EdgeActivation, SplineGrid, basis_values, edge_eval, silu
from daekan.networks import (
    CHECKPOINT_MAGIC,
    SolverPair,
    bind_parameters,
    decode_checkpoint,
    encode_checkpoint,
    init_kan,
    init_mlp,
    kan_forward,
    load_checkpoint,
    load_parameters,
    mlp_forward,
    parameters,
    save_checkpoint,
    xavier_limit,
)
from error_tracking import NetworkShapeError, NonFiniteForwardError, ParameterLengthError, ReportError

pytestmark = pytest.mark.unit

INPUT_GRID = SplineGrid(0.0, 1.0)


def primals(values):
    return np.array([float(v.primal) for v in values])


def edgewise_forward(net, t, params):
    """The KAN forward pass built from one recorded edge at a time."""
    x = [t]
    offset = 0
    for layer in net.layers:
        stride = 1 + layer.grid.basis_count
        outputs = []
        for i in range(layer.n_out):
            terms = []
            for j in range(layer.n_in):
                start = offset + (i * layer.n_in + j) * stride
                edge = EdgeActivation(params[start], params[start + 1:start + stride], layer.grid)
                terms.append(edge_eval(edge, x[j]))
            outputs.append(ad.ad_sum(terms))
        offset += layer.parameter_count
        x = outputs
    return x


def pair_objective(pair, t, params=None):
    """Mean squared outputs and squared time derivatives of the differential outputs."""
    u, z = pair.forward(t, params)
    terms = [y * y + ad.tangent_of(y) * ad.tangent_of(y) for y in u] + [y * y for y in z]
    return ad.batch_mean(ad.ad_sum(terms))


class TestInitKan:
    """Random initialisation of KAN networks."""

    def test_particle_differential_shape(self):
        net = init_kan([1, 5, 5, 4], INPUT_GRID, seed=0)
        assert [layer.n_in * layer.n_out for layer in net.layers] == [5, 25, 20]
        assert net.parameter_count == 50 * 9 == 450
        assert len(parameters(net)) == 450

    def test_grids(self):
        net = init_kan([1, 3, 2], INPUT_GRID, seed=0)
        assert net.layers[0].grid == INPUT_GRID
        assert (net.layers[1].grid.lower, net.layers[1].grid.upper) == (-1.0, 1.0)

    def test_deterministic(self):
        first = parameters(init_kan([1, 5, 5, 4], INPUT_GRID, seed=11))
        second = parameters(init_kan([1, 5, 5, 4], INPUT_GRID, seed=11))
        other = parameters(init_kan([1, 5, 5, 4], INPUT_GRID, seed=12))
        assert np.array_equal(first, second)
        assert not np.array_equal(first, other)

    def test_coefficient_variance(self):
        net = init_kan([1, 40, 40], INPUT_GRID, seed=3)
        coefficients = np.concatenate([layer.coefficients.ravel() for layer in net.layers])
        assert coefficients.size >= 10_000
        assert np.var(coefficients) == pytest.approx(0.01, rel=0.1)

    def test_weights_within_xavier_range(self):
        net = init_kan([1, 5, 5, 4], INPUT_GRID, seed=5)
        for layer in net.layers:
            assert np.all(np.abs(layer.weights) <= xavier_limit(layer.n_in, layer.n_out))

    @pytest.mark.parametrize("shape", [[1], [2, 3], [1, 0, 2], []])
    def test_invalid_shape(self, shape):
        with pytest.raises(NetworkShapeError):
            init_kan(shape, INPUT_GRID, seed=0)


class TestKanForward:
    """Forward evaluation with time tangents."""

    def test_zero_weights(self):
        net = init_kan([1, 3, 2], INPUT_GRID, seed=0)
        for layer in net.layers:
            layer.weights[:] = 0.0
        outputs = kan_forward(net, ADScalar(0.3, 1.0))
        assert primals(outputs).tolist() == [0.0, 0.0]
        assert [float(v.tangent) for v in outputs] == [0.0, 0.0]

    def test_single_edge_reduces_to_silu(self):
        net = init_kan([1, 1], INPUT_GRID, seed=0)
        net.layers[0].weights[:] = 1.0
        net.layers[0].coefficients[:] = 0.0
        for t in (0.0, 0.25, 0.9):
            assert kan_forward(net, t)[0].primal == pytest.approx(float(silu(t)), abs=1e-15)

    def test_tangent_matches_finite_differences(self, rng):
        net = init_kan([1, 5, 5, 4], INPUT_GRID, seed=1)
        step = 1e-6
        for t in rng.uniform(0.05, 0.95, size=10):
            outputs = kan_forward(net, ADScalar(float(t), 1.0))
            fd = (primals(kan_forward(net, t + step)) - primals(kan_forward(net, t - step))) / (2 * step)
            assert np.allclose([float(v.tangent) for v in outputs], fd, rtol=1e-6, atol=1e-8)

    def test_batched_matches_pointwise(self):
        net = init_kan([1, 4, 3], INPUT_GRID, seed=2)
        times = np.array([0.0, 0.3, 0.77, 1.0])
        batched = kan_forward(net, ADScalar(times, np.ones(4)))
        for index, t in enumerate(times):
            single = kan_forward(net, ADScalar(float(t), 1.0))
            for b, s in zip(batched, single):
                assert b.primal[index] == pytest.approx(float(s.primal), abs=1e-14)
                assert b.tangent[index] == pytest.approx(float(s.tangent), abs=1e-13)

    def test_single_layer_equals_explicit_double_sum(self, rng):
        net = init_kan([1, 3], INPUT_GRID, seed=6)
        layer = net.layers[0]
        times = rng.uniform(0.0, 1.0, size=25)
        basis = basis_values(INPUT_GRID, times)
        outputs = kan_forward(net, times)
        for i, value in enumerate(outputs):
            expected = layer.weights[i, 0] * (silu(times) + basis @ layer.coefficients[i, 0])
            assert np.array_equal(value.primal, expected)

    def test_one_node_per_layer_output(self):
        net = init_kan([1, 5, 5, 4], INPUT_GRID, seed=0)
        with ComputationRecord() as record:
            params = bind_parameters(record, net)
            t = ad.seed_input(record, np.linspace(0.0, 1.0, 10))
            before = len(record)
            kan_forward(net, t, params)
            assert len(record) - before == 5 + 5 + 4

    def test_gradient_matches_edgewise_tape(self, rng):
        net = init_kan([1, 3, 2], INPUT_GRID, seed=7)
        times = rng.uniform(0.0, 1.0, size=6)
        gradients, values = [], []
        for forward in (kan_forward, edgewise_forward):
            with ComputationRecord() as record:
                params = bind_parameters(record, net)
                outputs = forward(net, ad.seed_input(record, times), params)
                objective = ad.batch_mean(ad.ad_sum([y * y + ad.tangent_of(y) * ad.tangent_of(y)
                                                     for y in outputs]))
                gradients.append(ad.backward(record, objective).values)
                values.append(objective.primal)
        assert values[0] == pytest.approx(values[1], rel=1e-13)
        assert np.allclose(gradients[0], gradients[1], rtol=1e-11, atol=1e-14)

    def test_non_finite_activation_names_layer(self):
        net = init_kan([1, 1, 1], INPUT_GRID, seed=0)
        for layer in net.layers:
            layer.weights[:] = 1e300
        with pytest.raises(NonFiniteForwardError) as info:
            kan_forward(net, 0.5)
        assert info.value.layer_index == 1

    def test_wrong_parameter_count(self):
        net = init_kan([1, 2], INPUT_GRID, seed=0)
        with pytest.raises(ParameterLengthError):
            kan_forward(net, 0.5, params=np.zeros(3))

    def test_recorded_parameters_receive_gradients(self):
        net = init_kan([1, 2, 1], INPUT_GRID, seed=4)
        with ComputationRecord() as record:
            params = ad.register_parameters(record, parameters(net))
            t = ad.seed_input(record, 0.4)
            out, = kan_forward(net, t, params)
            gradient = ad.backward(record, out)
            assert out.primal == pytest.approx(float(kan_forward(net, 0.4)[0].primal), abs=1e-15)
        assert len(gradient) == net.parameter_count
        assert np.any(gradient.values != 0.0)


class TestMlp:
    """Tanh MLP baseline."""

    def test_initialisation(self):
        net = init_mlp([1, 60, 60, 60, 60, 60, 5], seed=0)
        assert net.parameter_count == (60 + 60) + 4 * (60 * 60 + 60) + (60 * 5 + 5)
        assert all(not np.any(b) for b in net.biases)

    def test_zero_network(self):
        net = init_mlp([1, 4, 2], seed=0)
        load_parameters(net, np.zeros(net.parameter_count))
        assert primals(mlp_forward(net, 0.7)).tolist() == [0.0, 0.0]

    def test_one_hidden_unit(self):
        net = init_mlp([1, 1, 1], seed=0)
        w_out = -1.7
        load_parameters(net, [1.0, 0.0, w_out, 0.0])
        for t in (0.1, 0.5):
            assert mlp_forward(net, t)[0].primal == pytest.approx(np.tanh(t) * w_out, abs=1e-15)

    def test_tangent_matches_finite_differences(self, rng):
        net = init_mlp([1, 20, 20, 3], seed=9)
        step = 1e-6
        for t in rng.uniform(0.0, 1.0, size=10):
            outputs = mlp_forward(net, ADScalar(float(t), 1.0))
            fd = (primals(mlp_forward(net, t + step)) - primals(mlp_forward(net, t - step))) / (2 * step)
            assert np.allclose([float(v.tangent) for v in outputs], fd, rtol=1e-6, atol=1e-8)


class TestParameterViews:
    """Flat parameter vectors."""

    @pytest.mark.parametrize("net", [
        init_kan([1, 3, 2], INPUT_GRID, seed=0),
        init_mlp([1, 6, 2], seed=0),
    ])
    def test_round_trip(self, net):
        flat = parameters(net) + 0.5
        load_parameters(net, flat)
        assert np.array_equal(parameters(net), flat)

    def test_kan_order(self):
        net = init_kan([1, 2], INPUT_GRID, seed=0)
        flat = parameters(net)
        stride = 1 + INPUT_GRID.basis_count
        assert flat[0] == net.layers[0].weights[0, 0]
        assert np.array_equal(flat[1:stride], net.layers[0].coefficients[0, 0])
        assert flat[stride] == net.layers[0].weights[1, 0]

    def test_wrong_length(self):
        net = init_mlp([1, 3, 1], seed=0)
        with pytest.raises(ParameterLengthError):
            load_parameters(net, np.zeros(net.parameter_count + 1))


class TestSolverPair:
    """Joint parameter handling of the differential and algebraic networks."""

    def test_kan_pair(self):
        pair = SolverPair(init_kan([1, 5, 5, 4], INPUT_GRID, 1), init_kan([1, 5, 5, 1], INPUT_GRID, 2), 4, 1)
        assert pair.kind == "kan"
        assert pair.parameter_count == 450 + (5 + 25 + 5) * 9
        u, z = pair.forward(0.5)
        assert (len(u), len(z)) == (4, 1)

    def test_single_mlp_splits_outputs(self):
        net = init_mlp([1, 8, 5], seed=0)
        pair = SolverPair(net, None, 4, 1)
        u, z = pair.forward(0.2)
        full = primals(mlp_forward(net, 0.2))
        assert primals(u).tolist() == full[:4].tolist()
        assert primals(z).tolist() == full[4:].tolist()

    def test_gradient_matches_finite_differences(self, rng):
        pair = SolverPair(init_kan([1, 3, 3, 2], INPUT_GRID, 1), init_kan([1, 3, 1], INPUT_GRID, 2), 2, 1)
        times = rng.uniform(0.0, 1.0, size=8)
        with ComputationRecord() as record:
            params = pair.bind(record)
            gradient = ad.backward(record, pair_objective(pair, ad.seed_input(record, times), params))
        assert len(gradient) == pair.parameter_count

        x0 = pair.parameters()
        step = 1e-6
        for index in rng.choice(pair.parameter_count, size=50, replace=False):
            values = []
            for sign in (1.0, -1.0):
                shifted = x0.copy()
                shifted[index] += sign * step
                pair.load_parameters(shifted)
                values.append(float(pair_objective(pair, ADScalar(times, np.ones_like(times))).primal))
            fd = (values[0] - values[1]) / (2 * step)
            assert gradient[index] == pytest.approx(fd, rel=1e-5, abs=1e-8), f"parameter {index}"
        pair.load_parameters(x0)

    def test_dimension_mismatch(self):
        with pytest.raises(NetworkShapeError):
            SolverPair(init_kan([1, 3], INPUT_GRID, 0), init_kan([1, 1], INPUT_GRID, 0), 4, 1)
        with pytest.raises(NetworkShapeError):
            SolverPair(init_mlp([1, 3, 4], seed=0), None, 4, 1)

    def test_load_parameters_spans_both_networks(self):
        pair = SolverPair(init_kan([1, 2], INPUT_GRID, 0), init_kan([1, 1], INPUT_GRID, 1), 2, 1)
        flat = np.arange(pair.parameter_count, dtype=np.float64)
        pair.load_parameters(flat)
        assert np.array_equal(pair.parameters(), flat)
        with pytest.raises(ParameterLengthError):
            pair.load_parameters(flat[:-1])


class TestCheckpoints:
    """Checkpoint file layout."""

    @pytest.mark.parametrize("net", [
        init_kan([1, 5, 5, 4], SplineGrid(0.0, 2.0, 6, 2), seed=42),
        init_mlp([1, 7, 3], seed=8),
    ])
    def test_save_and_load(self, tmp_path, net):
        path = save_checkpoint(net, tmp_path / "net.ckpt")
        restored = load_checkpoint(path)
        assert type(restored) is type(net)
        assert np.array_equal(parameters(restored), parameters(net))
        assert restored.seed == net.seed

    def test_layout(self):
        net = init_kan([1, 2, 1], INPUT_GRID, seed=3)
        payload = encode_checkpoint(net)
        header, body = payload.split(b"\n", 1)
        assert header.decode("ascii").startswith(f"{CHECKPOINT_MAGIC} kind=kan shape=1,2,1 grid=5 order=3")
        assert f"count={net.parameter_count}" in header.decode("ascii")
        assert np.array_equal(np.frombuffer(body, dtype="<f8"), parameters(net))

    def test_rejects_foreign_file(self):
        with pytest.raises(ReportError):
            decode_checkpoint(b"hello world\n\x00\x00")
        with pytest.raises(ReportError):
            decode_checkpoint(b"no newline at all")

    def test_rejects_truncated_body(self):
        payload = encode_checkpoint(init_mlp([1, 3, 1], seed=0))
        with pytest.raises(ParameterLengthError):
            decode_checkpoint(payload[:-8])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ReportError):
            load_checkpoint(tmp_path / "absent.ckpt")
