"""KAN and tanh-MLP networks of time, the solver pair trained on one system, and network checkpoints."""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from daekan import autodiff as ad
from daekan.autodiff import ADScalar, ComputationRecord
from daekan.bsplines import (
    SplineGrid,
    basis_derivatives,
    cached_basis_derivatives,
    silu_derivatives,
)
from error_tracking import (
    NetworkShapeError,
    NonFiniteForwardError,
    NonFiniteValueError,
    ParameterLengthError,
    ReportError,
)
from logging_config import get_logger

logger = get_logger(__name__)

COEFFICIENT_STD = 0.1
CHECKPOINT_MAGIC = "daekan-checkpoint"


def _validate_shape(shape: Sequence[int]) -> Tuple[int, ...]:
    shape = tuple(int(n) for n in shape)
    if len(shape) < 2 or any(n < 1 for n in shape):
        raise NetworkShapeError(f"Invalid network shape {list(shape)}")
    if shape[0] != 1:
        raise NetworkShapeError(f"Networks take time as their only input, shape starts with {shape[0]}")
    return shape


def xavier_limit(n_in: int, n_out: int) -> float:
    return float(np.sqrt(6.0 / (n_in + n_out)))


# ============================================================================
# KAN
# ============================================================================

@dataclass
class KanLayer:
    """Edge ``(i, j)`` connects input node ``j`` to output node ``i``."""
    weights: np.ndarray        # (n_out, n_in)
    coefficients: np.ndarray   # (n_out, n_in, G + k)
    grid: SplineGrid

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def parameter_count(self) -> int:
        return self.n_out * self.n_in * (1 + self.grid.basis_count)


@dataclass
class KanNetwork:
    shape: Tuple[int, ...]
    layers: List[KanLayer]
    seed: int = 0

    @property
    def parameter_count(self) -> int:
        return sum(layer.parameter_count for layer in self.layers)

    @property
    def output_dim(self) -> int:
        return self.shape[-1]

    @property
    def input_grid(self) -> SplineGrid:
        return self.layers[0].grid

    @property
    def hidden_grid(self) -> SplineGrid:
        return self.layers[-1].grid if len(self.layers) > 1 else self.layers[0].grid


def init_kan(shape: Sequence[int], grid: SplineGrid, seed: int,
             hidden_grid: Optional[SplineGrid] = None) -> KanNetwork:
    """Random KAN: ``c ~ N(0, 0.1^2)``, ``w`` Xavier-uniform.

    ``grid`` serves the input layer; later layers use ``hidden_grid``
    (``[-1, 1]`` with the same ``G`` and ``k`` by default).
    """
    shape = _validate_shape(shape)
    if hidden_grid is None:
        hidden_grid = SplineGrid(-1.0, 1.0, grid.intervals, grid.order)
    if hidden_grid.basis_count != grid.basis_count:
        raise NetworkShapeError("Input and hidden grids must have the same basis count")
    rng = np.random.default_rng(seed)
    layers = []
    for index, (n_in, n_out) in enumerate(zip(shape[:-1], shape[1:])):
        limit = xavier_limit(n_in, n_out)
        weights = rng.uniform(-limit, limit, size=(n_out, n_in))
        coefficients = rng.normal(0.0, COEFFICIENT_STD, size=(n_out, n_in, grid.basis_count))
        layers.append(KanLayer(weights, coefficients, grid if index == 0 else hidden_grid))
    return KanNetwork(shape, layers, seed)


def _batch_rows(values: Sequence, batch: int) -> np.ndarray:
    return np.stack([np.broadcast_to(np.asarray(v, dtype=np.float64), (batch,)) for v in values])


def kan_layer_forward(layer: KanLayer, inputs: Sequence[ADScalar], layer_params: Sequence,
                      cache_basis: bool = False) -> List[ADScalar]:
    """Every output of one layer, each recorded as a single node.

    Output ``i`` is ``sum_j w_ij (silu(x_j) + sum_s c_ijs B_s(x_j))``; its
    reverse rule covers the weights, the coefficients and the inputs of all
    edges feeding it. Parameters are time-independent. ``cache_basis`` memoises
    the basis tables of the inputs, for a layer whose inputs repeat across
    evaluations.
    """
    n_out, n_in, stride = layer.n_out, layer.n_in, 1 + layer.grid.basis_count
    if len(inputs) != n_in:
        raise NetworkShapeError(f"Layer takes {n_in} inputs, got {len(inputs)}")
    if isinstance(layer_params, np.ndarray):
        values = layer_params.astype(np.float64).reshape(n_out, n_in, stride)
    else:
        values = np.array([float(p.primal) if isinstance(p, ADScalar) else float(p) for p in layer_params],
                          dtype=np.float64).reshape(n_out, n_in, stride)
    weights, coefficients = values[..., 0], values[..., 1:]

    scalar = all(np.ndim(node.primal) == 0 for node in inputs)
    batch = max(np.size(node.primal) for node in inputs)
    xp = _batch_rows([node.primal for node in inputs], batch)
    xd = _batch_rows([node.tangent for node in inputs], batch)
    lookup = cached_basis_derivatives if cache_basis else basis_derivatives
    tables = [lookup(layer.grid, row) for row in xp]
    basis = [np.stack([table[level] for table in tables]) for level in range(3)]  # (n_in, N, S) each
    base = silu_derivatives(xp)                                                 # (n_in, N) each

    # g[level, i, j]: level-th derivative of the bracket on edge (i, j)
    g = np.empty((3, n_out, n_in, batch))
    for i in range(n_out):
        for j in range(n_in):
            for level in range(3):
                g[level, i, j] = base[level][j] + tables[j][level] @ coefficients[i, j]

    outputs = []
    for i in range(n_out):
        primal = weights[i, 0] * g[0, i, 0]
        tangent = weights[i, 0] * g[1, i, 0] * xd[0]
        for j in range(1, n_in):
            primal = primal + weights[i, j] * g[0, i, j]
            tangent = tangent + weights[i, j] * g[1, i, j] * xd[j]
        if scalar:
            primal, tangent = float(primal[0]), float(tangent[0])
        operands = list(layer_params[i * n_in * stride:(i + 1) * n_in * stride]) + list(inputs)
        pullback = _kan_output_pullback(weights[i], g[:, i], basis, xd, batch)
        outputs.append(ad.custom("kan", primal, tangent, operands, pullback))
    return outputs


def _kan_output_pullback(weights: np.ndarray, g: np.ndarray, basis: List[np.ndarray],
                         xd: np.ndarray, batch: int) -> ad.Pullback:
    """Reverse rule of one layer output; ``weights`` and ``g`` are that output's rows."""

    def pullback(bar_p, bar_d):
        n_in, n_basis = basis[0].shape[0], basis[0].shape[2]
        d_weights = np.zeros(n_in)
        d_coefficients = np.zeros((n_in, n_basis))
        d_primal = np.zeros((n_in, batch))
        d_tangent = None
        if bar_p is not None:
            p = np.broadcast_to(np.asarray(bar_p, dtype=np.float64), (batch,))
            d_weights += g[0] @ p
            d_coefficients += p @ basis[0]
            d_primal += g[1] * p
        if bar_d is not None:
            d = np.broadcast_to(np.asarray(bar_d, dtype=np.float64), (batch,))
            xd_d = xd * d
            d_weights += np.einsum("jn,jn->j", g[1], xd_d)
            d_coefficients += np.einsum("jns,jn->js", basis[1], xd_d)
            d_primal += g[2] * xd_d
            d_tangent = weights[:, None] * g[1] * d
        d_coefficients *= weights[:, None]
        d_primal *= weights[:, None]
        flat = np.concatenate([d_weights[:, None], d_coefficients], axis=1).ravel().tolist()
        contributions = [(value, None) for value in flat]
        for j in range(n_in):
            contributions.append((d_primal[j], None if d_tangent is None else d_tangent[j]))
        return contributions

    return pullback


def _check_finite(outputs: Sequence[ADScalar], layer_index: int) -> None:
    for value in outputs:
        if not (ad.is_finite(value.primal) and ad.is_finite(value.tangent)):
            raise NonFiniteForwardError("Non-finite activation", layer_index)


def kan_forward(net: KanNetwork, t, params: Optional[Sequence] = None) -> List[ADScalar]:
    """Evaluate the network at ``t``.

    ``params`` are the network parameters in :func:`parameters` order, usually
    the recorded values returned by :func:`bind_parameters`; by default the
    stored values enter as constants.
    """
    if params is None:
        params = parameters(net)
    elif len(params) != net.parameter_count:
        raise ParameterLengthError(f"Expected {net.parameter_count} parameters, got {len(params)}")
    x = [t if isinstance(t, ADScalar) else ad.constant(t)]
    offset = 0
    for layer_index, layer in enumerate(net.layers):
        try:
            x = kan_layer_forward(layer, x, params[offset:offset + layer.parameter_count],
                                  cache_basis=layer_index == 0)
        except NonFiniteValueError as e:
            raise NonFiniteForwardError(str(e), layer_index) from e
        _check_finite(x, layer_index)
        offset += layer.parameter_count
    return x


# ============================================================================
# MLP
# ============================================================================

@dataclass
class MlpNetwork:
    widths: Tuple[int, ...]
    weights: List[np.ndarray]   # (n_out, n_in) per layer
    biases: List[np.ndarray]    # (n_out,) per layer
    seed: int = 0

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.widths


def init_mlp(widths: Sequence[int], seed: int) -> MlpNetwork:
    """Xavier-uniform weights, zero biases."""
    widths = _validate_shape(widths)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        limit = xavier_limit(n_in, n_out)
        weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpNetwork(widths, weights, biases, seed)


def mlp_forward(net: MlpNetwork, t, params: Optional[Sequence] = None) -> List[ADScalar]:
    """Tanh on hidden layers, identity on the output layer."""
    if params is None:
        params = parameters(net)
    elif len(params) != net.parameter_count:
        raise ParameterLengthError(f"Expected {net.parameter_count} parameters, got {len(params)}")
    x = [t if isinstance(t, ADScalar) else ad.constant(t)]
    offset = 0
    last = len(net.weights) - 1
    for layer_index, weights in enumerate(net.weights):
        n_out, n_in = weights.shape
        bias_start = offset + n_out * n_in
        try:
            outputs = []
            for i in range(n_out):
                row = params[offset + i * n_in: offset + (i + 1) * n_in]
                pre = ad.dot(row, x, bias=params[bias_start + i])
                outputs.append(pre if layer_index == last else ad.tanh(pre))
        except NonFiniteValueError as e:
            raise NonFiniteForwardError(str(e), layer_index) from e
        _check_finite(outputs, layer_index)
        offset = bias_start + n_out
        x = outputs
    return x


# ============================================================================
# PARAMETER VIEWS
# ============================================================================

Network = Union[KanNetwork, MlpNetwork]


def parameters(net: Network) -> np.ndarray:
    """Flat parameter vector.

    KAN: per layer, per edge in row-major ``(i, j)`` order, ``w`` then ``c_0 .. c_{G+k-1}``.
    MLP: per layer, the weight matrix row-major then the bias vector.
    """
    if isinstance(net, KanNetwork):
        chunks = []
        for layer in net.layers:
            edges = np.concatenate([layer.weights[..., None], layer.coefficients], axis=-1)
            chunks.append(edges.ravel())
        return np.concatenate(chunks)
    chunks = []
    for w, b in zip(net.weights, net.biases):
        chunks.append(w.ravel())
        chunks.append(b.ravel())
    return np.concatenate(chunks)


def load_parameters(net: Network, flat: Sequence[float]) -> None:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.ndim != 1 or flat.size != net.parameter_count:
        raise ParameterLengthError(
            f"Expected {net.parameter_count} parameters, got {flat.size}")
    offset = 0
    if isinstance(net, KanNetwork):
        for layer in net.layers:
            stride = 1 + layer.grid.basis_count
            edges = flat[offset:offset + layer.parameter_count].reshape(layer.n_out, layer.n_in, stride)
            layer.weights = edges[..., 0].copy()
            layer.coefficients = edges[..., 1:].copy()
            offset += layer.parameter_count
        return
    for index, (w, b) in enumerate(zip(net.weights, net.biases)):
        net.weights[index] = flat[offset:offset + w.size].reshape(w.shape).copy()
        offset += w.size
        net.biases[index] = flat[offset:offset + b.size].copy()
        offset += b.size


def network_forward(net: Network, t, params: Optional[Sequence] = None) -> List[ADScalar]:
    if isinstance(net, KanNetwork):
        return kan_forward(net, t, params)
    return mlp_forward(net, t, params)


def bind_parameters(record: ComputationRecord, net: Network) -> List[ADScalar]:
    """Register every parameter of ``net`` in ``record``, in :func:`parameters` order."""
    return ad.register_parameters(record, parameters(net))


# ============================================================================
# SOLVER PAIR
# ============================================================================

@dataclass
class SolverPair:
    """Differential and algebraic networks trained jointly.

    The MLP baseline is a single network with ``algebraic = None`` whose
    outputs are the differential variables followed by the algebraic ones.
    """
    differential: Network
    algebraic: Optional[Network]
    n_differential: int
    n_algebraic: int

    def __post_init__(self) -> None:
        if self.algebraic is None:
            expected = self.n_differential + self.n_algebraic
            if self.differential.output_dim != expected:
                raise NetworkShapeError(
                    f"Single network must output {expected} values, got {self.differential.output_dim}")
            return
        if self.differential.output_dim != self.n_differential:
            raise NetworkShapeError(
                f"Differential network outputs {self.differential.output_dim} values, "
                f"system has {self.n_differential} differential variables")
        if self.algebraic.output_dim != self.n_algebraic:
            raise NetworkShapeError(
                f"Algebraic network outputs {self.algebraic.output_dim} values, "
                f"system has {self.n_algebraic} algebraic variables")

    @property
    def kind(self) -> str:
        return "kan" if isinstance(self.differential, KanNetwork) else "mlp"

    @property
    def networks(self) -> List[Network]:
        return [net for net in (self.differential, self.algebraic) if net is not None]

    @property
    def parameter_count(self) -> int:
        return sum(net.parameter_count for net in self.networks)

    def parameters(self) -> np.ndarray:
        return np.concatenate([parameters(net) for net in self.networks])

    def load_parameters(self, flat: Sequence[float]) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.ndim != 1 or flat.size != self.parameter_count:
            raise ParameterLengthError(f"Expected {self.parameter_count} parameters, got {flat.size}")
        offset = 0
        for net in self.networks:
            load_parameters(net, flat[offset:offset + net.parameter_count])
            offset += net.parameter_count

    def bind(self, record: ComputationRecord) -> List[ADScalar]:
        return ad.register_parameters(record, self.parameters())

    def forward(self, t, params: Optional[Sequence] = None) -> Tuple[List[ADScalar], List[ADScalar]]:
        """Differential values and algebraic values at ``t``."""
        if params is None:
            params = self.parameters()
        split = self.differential.parameter_count
        outputs = network_forward(self.differential, t, params[:split])
        if self.algebraic is None:
            return outputs[:self.n_differential], outputs[self.n_differential:]
        algebraic = network_forward(self.algebraic, t, params[split:])
        return outputs, algebraic


# ============================================================================
# CHECKPOINTS
# ============================================================================

def _join(values: Sequence) -> str:
    return ",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in values)


def checkpoint_descriptor(net: Network) -> str:
    if isinstance(net, KanNetwork):
        fields = {
            "kind": "kan",
            "shape": _join(net.shape),
            "grid": net.input_grid.intervals,
            "order": net.input_grid.order,
            "input_domain": _join([net.input_grid.lower, net.input_grid.upper]),
            "hidden_domain": _join([net.hidden_grid.lower, net.hidden_grid.upper]),
        }
    else:
        fields = {"kind": "mlp", "shape": _join(net.widths)}
    fields["seed"] = net.seed
    fields["count"] = net.parameter_count
    return " ".join([CHECKPOINT_MAGIC] + [f"{key}={value}" for key, value in fields.items()])


def encode_checkpoint(net: Network) -> bytes:
    """Descriptor line, newline, then the flat parameters as little-endian float64."""
    header = (checkpoint_descriptor(net) + "\n").encode("ascii")
    return header + parameters(net).astype("<f8").tobytes()


def decode_checkpoint(payload: bytes) -> Network:
    newline = payload.find(b"\n")
    if newline < 0:
        raise ReportError("Checkpoint has no descriptor line")
    tokens = payload[:newline].decode("ascii").split()
    if not tokens or tokens[0] != CHECKPOINT_MAGIC:
        raise ReportError("Not a checkpoint file")
    fields = dict(token.split("=", 1) for token in tokens[1:])
    try:
        shape = [int(n) for n in fields["shape"].split(",")]
        seed = int(fields["seed"])
        count = int(fields["count"])
        if fields["kind"] == "kan":
            intervals, order = int(fields["grid"]), int(fields["order"])
            lo, hi = (float(v) for v in fields["input_domain"].split(","))
            hlo, hhi = (float(v) for v in fields["hidden_domain"].split(","))
            net: Network = init_kan(shape, SplineGrid(lo, hi, intervals, order), seed,
                                    SplineGrid(hlo, hhi, intervals, order))
        elif fields["kind"] == "mlp":
            net = init_mlp(shape, seed)
        else:
            raise ReportError(f"Unknown network kind '{fields['kind']}'")
    except (KeyError, ValueError) as e:
        raise ReportError(f"Malformed checkpoint descriptor: {e}") from e
    values = np.frombuffer(payload[newline + 1:], dtype="<f8")
    if values.size != count or count != net.parameter_count:
        raise ParameterLengthError(
            f"Checkpoint holds {values.size} values, descriptor says {count}, network needs {net.parameter_count}")
    load_parameters(net, values.astype(np.float64))
    return net


def save_checkpoint(net: Network, path: Union[str, Path]) -> Path:
    from daekan.reporting import atomic_write_bytes

    path = atomic_write_bytes(Path(path), encode_checkpoint(net))
    logger.debug("Checkpoint written", extra={"path": str(path), "parameters": net.parameter_count})
    return path


def load_checkpoint(path: Union[str, Path]) -> Network:
    path = Path(path)
    if not path.exists():
        raise ReportError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())
