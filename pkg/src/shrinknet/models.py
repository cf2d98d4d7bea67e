"""Model specifications, parameter initialization, forward pass, checkpoints.

A model is a plain sequence of dense/conv layers.  Every layer holds a weight
tensor, a bias tensor, and — on penalized layers — a per-weight shrinkage
coefficient array ``lam`` (initialized to 1.0).  Biases are never penalized.
The final layer is penalized iff ``spec.penalize_final``.

Checkpoint format (binary, versioned):

    magic  b"SRK1"
    u32 LE spec length, then that many bytes of canonical spec JSON
    per layer, in declaration order: weight, bias, and (penalized layers
    only) lam — each as raw little-endian float64 in C order

Array extents are implied by the spec, so the payload is pure numbers and a
round trip is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import engine
from .engine import Tensor
from .errors import ConfigError, FormatError

CHECKPOINT_MAGIC = b"SRK1"
ACTIVATIONS = ("relu", "none")


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_features < 1 or self.out_features < 1:
            raise ConfigError(f"dense extents must be positive, got {self}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class Conv:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    activation: str = "relu"
    pool: int = 0  # max-pool window after activation; 0 = none

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel) < 1:
            raise ConfigError(f"conv extents must be positive, got {self}")
        if self.stride < 1 or self.padding < 0 or self.pool < 0:
            raise ConfigError(f"bad stride/padding/pool in {self}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple
    penalize_final: bool = True
    input_shape: tuple[int, ...] | None = None  # (C, H, W); required with conv layers

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("a model needs at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_shape is not None:
            object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        has_conv = any(isinstance(l, Conv) for l in self.layers)
        if has_conv and self.input_shape is None:
            raise ConfigError("models with conv layers need an input_shape (C, H, W)")
        self._trace_shapes()  # validates adjacency
        if not self.penalize_final and len(self.layers) < 2:
            raise ConfigError("penalize_final=false needs at least one penalized layer")

    def _trace_shapes(self) -> list[tuple[int, ...]]:
        """Shapes flowing between layers; raises on incompatibility."""
        shapes = []
        if self.input_shape is not None:
            cur: tuple[int, ...] = self.input_shape
        else:
            cur = (self.layers[0].in_features,)
        shapes.append(cur)
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv):
                if len(cur) != 3:
                    raise ConfigError(f"layer {i}: conv after flat features {cur}")
                c, h, w = cur
                if c != layer.in_channels:
                    raise ConfigError(
                        f"layer {i}: expects {layer.in_channels} channels, gets {c}"
                    )
                h = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
                w = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
                if h < 1 or w < 1:
                    raise ConfigError(f"layer {i}: kernel exceeds padded input")
                if layer.pool:
                    if h % layer.pool or w % layer.pool:
                        raise ConfigError(
                            f"layer {i}: pool {layer.pool} does not divide {h}x{w}"
                        )
                    h, w = h // layer.pool, w // layer.pool
                cur = (layer.out_channels, h, w)
            else:
                flat = int(np.prod(cur))
                if flat != layer.in_features:
                    raise ConfigError(
                        f"layer {i}: expects {layer.in_features} features, gets {flat}"
                    )
                cur = (layer.out_features,)
            shapes.append(cur)
        return shapes

    def penalized_indices(self) -> tuple[int, ...]:
        last = len(self.layers) - 1
        return tuple(
            i for i in range(len(self.layers)) if self.penalize_final or i != last
        )


@dataclass
class LayerParams:
    weight: Tensor
    bias: Tensor
    lam: np.ndarray | None = None      # per-weight coefficients (penalized layers)
    frozen: np.ndarray | None = None   # bool keep-mask; False entries pinned at 0


class Model:
    """A spec plus its parameters."""

    def __init__(self, spec: ModelSpec, layers: Sequence[LayerParams]):
        self.spec = spec
        self.layers = list(layers)

    def parameters(self):
        """All trainable tensors, declaration order (weight, bias per layer)."""
        out = []
        for lp in self.layers:
            out.append(lp.weight)
            out.append(lp.bias)
        return out

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    def penalized_params(self):
        """Ordered (layer_index, weight_tensor, lam_array) for penalized layers."""
        idx = self.spec.penalized_indices()
        return [(i, self.layers[i].weight, self.layers[i].lam) for i in idx]

    def penalized_magnitudes(self) -> np.ndarray:
        """|w| over the penalized set, concatenated row-major, layer order."""
        return np.concatenate(
            [np.abs(w.data).ravel() for _, w, _ in self.penalized_params()]
        ) if self.penalized_params() else np.empty(0)

    def penalized_lambdas(self) -> np.ndarray:
        return np.concatenate(
            [lam.ravel() for _, _, lam in self.penalized_params()]
        ) if self.penalized_params() else np.empty(0)

    def param_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def penalized_count(self) -> int:
        return sum(w.size for _, w, _ in self.penalized_params())

    def copy(self) -> "Model":
        layers = []
        for lp in self.layers:
            w = Tensor(lp.weight.data.copy(), requires_grad=True)
            b = Tensor(lp.bias.data.copy(), requires_grad=True)
            layers.append(LayerParams(
                w, b,
                None if lp.lam is None else lp.lam.copy(),
                None if lp.frozen is None else lp.frozen.copy(),
            ))
        return Model(self.spec, layers)

    def state_bytes(self) -> bytes:
        """Concatenated little-endian parameter payload (checkpoint body)."""
        chunks = []
        pen = set(self.spec.penalized_indices())
        for i, lp in enumerate(self.layers):
            chunks.append(np.ascontiguousarray(lp.weight.data).astype("<f8").tobytes())
            chunks.append(np.ascontiguousarray(lp.bias.data).astype("<f8").tobytes())
            if i in pen:
                chunks.append(np.ascontiguousarray(lp.lam).astype("<f8").tobytes())
        return b"".join(chunks)

    @staticmethod
    def _layer_forward(layer, lp: LayerParams, t: Tensor) -> Tensor:
        if isinstance(layer, Conv):
            t = engine.conv2d(t, lp.weight, stride=layer.stride, padding=layer.padding)
            t = engine.add(t, engine.reshape(lp.bias, (layer.out_channels, 1, 1)))
            if layer.activation == "relu":
                t = engine.relu(t)
            if layer.pool:
                t = engine.maxpool2d(t, layer.pool)
        else:
            if t.data.ndim > 2:
                t = engine.reshape(t, (t.shape[0], int(np.prod(t.shape[1:]))))
            t = engine.add(engine.matmul(t, lp.weight), lp.bias)
            if layer.activation == "relu":
                t = engine.relu(t)
        return t

    def forward(self, x) -> Tensor:
        """Run the network; records on the active tape if one is set."""
        t = x if isinstance(x, Tensor) else Tensor(x)
        for layer, lp in zip(self.spec.layers, self.layers):
            t = self._layer_forward(layer, lp, t)
        return t


def _fan_in(layer) -> int:
    if isinstance(layer, Conv):
        return layer.in_channels * layer.kernel * layer.kernel
    return layer.in_features


def _weight_shape(layer) -> tuple[int, ...]:
    if isinstance(layer, Conv):
        return (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
    return (layer.in_features, layer.out_features)


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    """He-style uniform fan-in init: W ~ U(+-sqrt(6/fan_in)), biases zero,
    lam = 1.0 on penalized layers."""
    rng = np.random.default_rng(seed)
    pen = set(spec.penalized_indices())
    layers = []
    for i, layer in enumerate(spec.layers):
        bound = np.sqrt(6.0 / _fan_in(layer))
        w = rng.uniform(-bound, bound, size=_weight_shape(layer))
        bias_n = layer.out_channels if isinstance(layer, Conv) else layer.out_features
        layers.append(LayerParams(
            Tensor(w, requires_grad=True),
            Tensor(np.zeros(bias_n), requires_grad=True),
            lam=np.ones_like(w) if i in pen else None,
        ))
    return Model(spec, layers)


# ---------------------------------------------------------------------------
# stock specs
# ---------------------------------------------------------------------------


def lenet300(penalize_final: bool = True) -> ModelSpec:
    """The classic 784-300-100-10 fully connected digit classifier."""
    return ModelSpec(
        (Dense(784, 300), Dense(300, 100), Dense(100, 10, activation="none")),
        penalize_final=penalize_final,
    )


def lenet5(width_multiplier: float = 1.0, penalize_final: bool = True) -> ModelSpec:
    """Conv digit classifier (20/50 filter banks, 500-unit head) at a
    configurable channel width."""
    if width_multiplier <= 0:
        raise ConfigError(f"width_multiplier must be positive, got {width_multiplier}")
    c1 = max(1, round(20 * width_multiplier))
    c2 = max(1, round(50 * width_multiplier))
    fc = max(10, round(500 * width_multiplier))
    return ModelSpec(
        (
            Conv(1, c1, kernel=5, pool=2),
            Conv(c1, c2, kernel=5, pool=2),
            Dense(c2 * 4 * 4, fc),
            Dense(fc, 10, activation="none"),
        ),
        penalize_final=penalize_final,
        input_shape=(1, 28, 28),
    )


def mlp(input_dim: int, hidden: Sequence[int], output_dim: int,
        penalize_final: bool = True) -> ModelSpec:
    dims = [input_dim, *hidden, output_dim]
    layers = [
        Dense(dims[i], dims[i + 1], activation="relu" if i < len(dims) - 2 else "none")
        for i in range(len(dims) - 1)
    ]
    return ModelSpec(tuple(layers), penalize_final=penalize_final)


def linear(input_dim: int, output_dim: int = 1) -> ModelSpec:
    return ModelSpec((Dense(input_dim, output_dim, activation="none"),))


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------


def model_inputs(model: Model, inputs: np.ndarray) -> np.ndarray:
    """Reshape raw (N, ...) inputs to what the first layer expects."""
    first = model.spec.layers[0]
    n = len(inputs)
    if isinstance(first, Conv):
        want = model.spec.input_shape
        return inputs.reshape(n, *want)
    return inputs.reshape(n, first.in_features)


def collect_activations(model: Model, inputs: np.ndarray,
                        batch_size: int = 512) -> list[np.ndarray]:
    """Each layer's output (post-activation, post-pool) on the given inputs.

    Returned arrays are (N, ...) per layer; no tape is involved.
    """
    per_layer: list[list[np.ndarray]] = [[] for _ in model.spec.layers]
    inputs = np.asarray(inputs, dtype=np.float64)
    for start in range(0, len(inputs), batch_size):
        t = Tensor(model_inputs(model, inputs[start:start + batch_size]))
        for i, (layer, lp) in enumerate(zip(model.spec.layers, model.layers)):
            t = Model._layer_forward(layer, lp, t)
            per_layer[i].append(t.data.copy())
    return [np.concatenate(chunks) for chunks in per_layer]


def evaluate(model: Model, dataset, batch_size: int = 512):
    """Deterministic full-set metrics: (mean loss, accuracy-or-None).

    Runs outside any tape; the reduction is an ordered sum over batches.
    """
    total_loss = 0.0
    correct = 0
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    for xb, yb in dataset.batches(batch_size):
        out = model.forward(model_inputs(model, xb))
        if dataset.task == "classification":
            loss = engine.softmax_cross_entropy(out, yb)
            correct += int((out.data.argmax(axis=1) == yb).sum())
        else:
            pred = out.data.reshape(yb.shape)
            loss = engine.mse_loss(Tensor(pred), yb)
        total_loss += float(loss.data) * len(xb)
    acc = correct / n if dataset.task == "classification" else None
    return total_loss / n, acc


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _spec_to_json(spec: ModelSpec) -> str:
    layers = []
    for layer in spec.layers:
        d = {"type": "conv" if isinstance(layer, Conv) else "dense"}
        d.update(asdict(layer))
        layers.append(d)
    doc = {
        "layers": layers,
        "penalize_final": spec.penalize_final,
        "input_shape": list(spec.input_shape) if spec.input_shape else None,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _spec_from_json(text: str) -> ModelSpec:
    doc = json.loads(text)
    layers = []
    for d in doc["layers"]:
        d = dict(d)
        kind = d.pop("type")
        layers.append(Conv(**d) if kind == "conv" else Dense(**d))
    return ModelSpec(
        tuple(layers),
        penalize_final=doc["penalize_final"],
        input_shape=tuple(doc["input_shape"]) if doc["input_shape"] else None,
    )


def save_checkpoint(model: Model, path) -> None:
    spec_json = _spec_to_json(model.spec).encode()
    with open(str(path), "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(len(spec_json).to_bytes(4, "little"))
        f.write(spec_json)
        f.write(model.state_bytes())


def load_checkpoint(path) -> Model:
    path = str(path)
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(
            f"{path}: bad checkpoint magic {blob[:4]!r} at offset 0 "
            f"(expected {CHECKPOINT_MAGIC!r})"
        )
    if len(blob) < 8:
        raise FormatError(f"{path}: truncated header at offset {len(blob)}")
    spec_len = int.from_bytes(blob[4:8], "little")
    if len(blob) < 8 + spec_len:
        raise FormatError(f"{path}: truncated spec at offset {len(blob)}")
    spec = _spec_from_json(blob[8:8 + spec_len].decode())
    offset = 8 + spec_len
    pen = set(spec.penalized_indices())

    def take(shape) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(blob):
            raise FormatError(f"{path}: truncated tensor payload at offset {offset}")
        arr = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape)
        offset = end
        return arr.astype(np.float64)

    layers = []
    for i, layer in enumerate(spec.layers):
        w = take(_weight_shape(layer))
        bias_n = layer.out_channels if isinstance(layer, Conv) else layer.out_features
        b = take((bias_n,))
        lam = take(_weight_shape(layer)) if i in pen else None
        layers.append(LayerParams(
            Tensor(w, requires_grad=True), Tensor(b, requires_grad=True), lam=lam
        ))
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes at offset {offset}")
    return Model(spec, layers)
