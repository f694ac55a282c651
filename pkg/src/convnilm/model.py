"""Fully convolutional encoder/decoder assembled from :mod:`convnilm.nncore` ops.

A :class:`ModelConfig` is compiled into a flat list of graph nodes (layer,
pool, unpool, concat, add). Forward runs the list in order; backward runs it
in reverse and sums gradients wherever a node output fans out to several
consumers (skip and residual branch points).

Every hidden layer applies ``conv -> [batch norm] -> activation -> [noise]``.
The first hidden layer and the output layer use the logistic sigmoid; all
other layers use leaky ReLU.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nncore as nn
from .errors import ConfigError, StateError, StructuralError
from .nncore import OpMode


class Activation(str, enum.Enum):
    LRELU = "lrelu"
    LOGSG = "logsg"


@dataclass(frozen=True)
class LayerSpec:
    out_channels: int
    kernel_size: int = 3
    dilation: int = 1
    activation: Activation = Activation.LRELU
    has_bn: bool = True
    has_gn: bool = True
    pool_after: int = 1
    unpool_before: int = 1

    def validate(self, name: str) -> None:
        if self.out_channels < 1:
            raise ConfigError(f"{name}: out_channels must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"{name}: kernel_size must be odd, got {self.kernel_size}")
        if self.dilation < 1:
            raise ConfigError(f"{name}: dilation must be >= 1")
        if self.pool_after < 1 or self.unpool_before < 1:
            raise ConfigError(f"{name}: pool/unpool factors must be >= 1")
        if self.pool_after > 1 and self.unpool_before > 1:
            raise ConfigError(f"{name}: a layer cannot both pool and unpool")


@dataclass
class ModelConfig:
    """Declarative topology.

    ``outer_skips`` are ``(encoder_block, decoder_block)`` pairs: the encoder
    block output (before pooling) is concatenated to the decoder block input
    (after un-pooling). ``inner_skips`` are ``(src, dst)`` pairs of
    representation-layer indices; ``src == -1`` denotes the input of the
    representation part. ``residuals`` are ``(src_layer, dst_layer)`` names;
    the source output is added to the destination output.
    """

    window_len: int
    input_layer: LayerSpec
    encoder_blocks: list[list[LayerSpec]]
    representation_layers: list[LayerSpec]
    decoder_blocks: list[list[LayerSpec]]
    output_layer: LayerSpec
    outer_skips: list[tuple[int, int]] = field(default_factory=list)
    inner_skips: list[tuple[int, int]] = field(default_factory=list)
    residuals: list[tuple[str, str]] = field(default_factory=list)
    in_channels: int = 1
    lrelu_alpha: float = 0.01
    noise_sigma: float = 0.05
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-5
    first_hidden_sigmoid: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("outer_skips", "inner_skips", "residuals"):
            d[key] = [list(link) for link in d[key]]
        return _enum_to_str(d)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        spec = lambda s: LayerSpec(**{**s, "activation": Activation(s["activation"])})
        d = dict(d)
        d["input_layer"] = spec(d["input_layer"])
        d["output_layer"] = spec(d["output_layer"])
        d["encoder_blocks"] = [[spec(s) for s in blk] for blk in d["encoder_blocks"]]
        d["decoder_blocks"] = [[spec(s) for s in blk] for blk in d["decoder_blocks"]]
        d["representation_layers"] = [spec(s) for s in d["representation_layers"]]
        for key in ("outer_skips", "inner_skips", "residuals"):
            d[key] = [tuple(link) for link in d.get(key, [])]
        return cls(**d)

    def layer_specs(self) -> list[tuple[str, LayerSpec]]:
        """All layers in evaluation order, with their graph names."""
        out = [("input", self.input_layer)]
        for b, blk in enumerate(self.encoder_blocks):
            out += [(f"enc{b}.{j}", s) for j, s in enumerate(blk)]
        out += [(f"rep{j}", s) for j, s in enumerate(self.representation_layers)]
        for b, blk in enumerate(self.decoder_blocks):
            out += [(f"dec{b}.{j}", s) for j, s in enumerate(blk)]
        out.append(("output", self.output_layer))
        return out


def _enum_to_str(obj):
    if isinstance(obj, dict):
        return {k: _enum_to_str(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_enum_to_str(v) for v in obj]
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj


# --------------------------------------------------------------------------- #
# Presets
# --------------------------------------------------------------------------- #


def encoder_decoder_config(
    window_len: int,
    n_blocks: int,
    layers_per_block: int,
    widths: list[int],
    rep_layers: int,
    rep_width: int,
    kernel_size: int = 3,
    dilations: tuple[int, ...] = (1, 2, 4, 8),
    pools: list[int] | None = None,
    input_width: int | None = None,
    inner_skips: list[tuple[int, int]] | None = None,
    input_bn: bool = True,
    **kwargs,
) -> ModelConfig:
    """Symmetric encoder/decoder with one outer skip and one residual per block.

    ``widths[b]`` is the channel count of encoder block ``b`` (decoder blocks
    mirror it). Dilations cycle through ``dilations`` layer by layer; the
    decoder replays the encoder schedule in reverse. ``input_bn=False`` drops
    batch normalization from the input layer.
    """
    if len(widths) != n_blocks:
        raise ConfigError(f"need {n_blocks} block widths, got {len(widths)}")
    pools = pools or [2] * n_blocks
    if len(pools) != n_blocks:
        raise ConfigError(f"need {n_blocks} pool factors, got {len(pools)}")

    enc_dil = [dilations[i % len(dilations)] for i in range(n_blocks * layers_per_block)]
    enc, dec, residuals = [], [], []
    for b in range(n_blocks):
        blk = []
        for j in range(layers_per_block):
            last = j == layers_per_block - 1
            blk.append(
                LayerSpec(
                    widths[b],
                    kernel_size,
                    enc_dil[b * layers_per_block + j],
                    pool_after=pools[b] if last else 1,
                )
            )
        enc.append(blk)
        if layers_per_block > 1:
            residuals.append((f"enc{b}.0", f"enc{b}.{layers_per_block - 1}"))

    dec_dil = enc_dil[::-1]
    for i in range(n_blocks):
        b = n_blocks - 1 - i  # mirrored encoder block
        blk = [
            LayerSpec(
                widths[b],
                kernel_size,
                dec_dil[i * layers_per_block + j],
                unpool_before=pools[b] if j == 0 else 1,
            )
            for j in range(layers_per_block)
        ]
        dec.append(blk)
        if layers_per_block > 1:
            residuals.append((f"dec{i}.0", f"dec{i}.{layers_per_block - 1}"))

    rep = [LayerSpec(rep_width, kernel_size, 1) for _ in range(rep_layers)]
    if inner_skips is None:
        inner_skips = [(j - 2, j) for j in range(1, rep_layers)]
    return ModelConfig(
        window_len=window_len,
        input_layer=LayerSpec(input_width or widths[0], kernel_size, 1, Activation.LOGSG, has_bn=input_bn),
        encoder_blocks=enc,
        representation_layers=rep,
        decoder_blocks=dec,
        output_layer=LayerSpec(1, 1, 1, Activation.LOGSG, has_bn=False, has_gn=False),
        outer_skips=[(n_blocks - 1 - i, i) for i in range(n_blocks)],
        inner_skips=list(inner_skips),
        residuals=residuals,
        **kwargs,
    )


def desk_config(window_len: int = 512, **kwargs) -> ModelConfig:
    """Four 2-layer blocks, widths 16/32/64/128, pooling by 2, two representation layers.

    Tuned for short single-core runs: the input layer has no batch
    normalization and the running statistics use momentum 0.9, so inference
    statistics track the weights after a few dozen updates.
    """
    kwargs.setdefault("input_bn", False)
    kwargs.setdefault("bn_momentum", 0.9)
    return encoder_decoder_config(
        window_len, 4, 2, [16, 32, 64, 128], rep_layers=2, rep_width=128, **kwargs
    )


def paper_config(window_len: int = 10800, **kwargs) -> ModelConfig:
    """46 layers (1 + 20 + 4 + 20 + 1) sized to roughly 41M trainable parameters."""
    return encoder_decoder_config(
        window_len,
        5,
        4,
        [48, 96, 192, 384, 768],
        rep_layers=4,
        rep_width=1024,
        pools=[2, 2, 2, 2, 3],
        **kwargs,
    )


def tiny_config(window_len: int = 32, **kwargs) -> ModelConfig:
    """Two 2-layer blocks of 4 channels; used by the whole-model gradient checks."""
    return encoder_decoder_config(window_len, 2, 2, [4, 4], rep_layers=2, rep_width=4, **kwargs)


PRESETS = {"desk": desk_config, "paper": paper_config, "tiny": tiny_config}


def preset(name: str, **kwargs) -> ModelConfig:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**kwargs)


# --------------------------------------------------------------------------- #
# Graph compilation
# --------------------------------------------------------------------------- #


@dataclass
class Node:
    name: str
    kind: str  # "layer" | "pool" | "unpool" | "concat" | "add"
    inputs: list[str]
    channels: int
    length: int
    spec: LayerSpec | None = None
    factor: int = 1
    in_channels: int = 0


def compile_graph(cfg: ModelConfig) -> list[Node]:
    """Lower a config to nodes and propagate shapes; raises ConfigError on bad wiring."""
    if cfg.window_len < 1:
        raise ConfigError("window_len must be positive")
    if not cfg.first_hidden_sigmoid:
        raise ConfigError("the first hidden layer always uses the logistic sigmoid")
    if not 0 <= cfg.lrelu_alpha <= 1:
        raise ConfigError(f"lrelu_alpha must lie in [0, 1], got {cfg.lrelu_alpha}")
    if cfg.noise_sigma < 0:
        raise ConfigError("noise_sigma must be non-negative")

    layers = cfg.layer_specs()
    names = [n for n, _ in layers]
    for name, spec in layers:
        spec.validate(name)
    out = cfg.output_layer
    if out.out_channels != 1 or out.activation is not Activation.LOGSG:
        raise ConfigError("output layer must have 1 channel and a sigmoid activation")
    if out.pool_after != 1 or out.unpool_before != 1:
        raise ConfigError("output layer cannot pool or unpool")
    if cfg.input_layer.activation is not Activation.LOGSG:
        raise ConfigError("input layer must use the sigmoid activation")

    pool_product = math.prod(s.pool_after for _, s in layers)
    if cfg.window_len % pool_product:
        raise ConfigError(
            f"window_len {cfg.window_len} is not divisible by the pooling product {pool_product}"
        )

    n_enc, n_dec, n_rep = len(cfg.encoder_blocks), len(cfg.decoder_blocks), len(cfg.representation_layers)
    if any(len(b) == 0 for b in cfg.encoder_blocks + cfg.decoder_blocks):
        raise ConfigError("blocks must contain at least one layer")

    skips_into: dict[str, list[tuple[str, str]]] = {}
    for e, d in cfg.outer_skips:
        if not (0 <= e < n_enc and 0 <= d < n_dec):
            raise ConfigError(f"outer skip ({e} -> {d}) references a missing block")
        src = f"enc{e}.{len(cfg.encoder_blocks[e]) - 1}"
        skips_into.setdefault(f"dec{d}.0", []).append((src, f"outer skip enc{e}->dec{d}"))
    for s, d in cfg.inner_skips:
        if not (-1 <= s < n_rep and 0 <= d < n_rep and d >= s + 2):
            raise ConfigError(f"inner skip ({s} -> {d}) is not a forward link between representation layers")
        src = "rep.in" if s == -1 else f"rep{s}"
        skips_into.setdefault(f"rep{d}", []).append((src, f"inner skip {s}->{d}"))

    res_into: dict[str, list[str]] = {}
    for s, d in cfg.residuals:
        if s not in names or d not in names:
            raise ConfigError(f"residual ({s} -> {d}) references an unknown layer")
        if names.index(s) >= names.index(d):
            raise ConfigError(f"residual ({s} -> {d}) must point forward")
        res_into.setdefault(d, []).append(s)

    nodes: list[Node] = []
    shape = {"x": (cfg.in_channels, cfg.window_len)}
    resolved: dict[str, str] = {}  # layer name -> node holding its (post-residual) output

    def emit(node: Node) -> str:
        nodes.append(node)
        shape[node.name] = (node.channels, node.length)
        return node.name

    cur = "x"
    for name, spec in layers:
        if name == "rep0":
            resolved["rep.in"] = cur
        if spec.unpool_before > 1:
            c, t = shape[cur]
            cur = emit(Node(f"{name}.unpool", "unpool", [cur], c, t * spec.unpool_before, factor=spec.unpool_before))
        inputs = [cur]
        for src, label in skips_into.get(name, []):
            if src not in resolved:
                raise ConfigError(f"{label}: source {src} is not computed before {name}")
            src_node = resolved[src]
            if shape[src_node][1] != shape[cur][1]:
                raise ConfigError(
                    f"{label}: time length {shape[src_node][1]} does not match {shape[cur][1]} at {name}"
                )
            inputs.append(src_node)
        if len(inputs) > 1:
            c = sum(shape[i][0] for i in inputs)
            cur = emit(Node(f"{name}.concat", "concat", inputs, c, shape[cur][1]))
        c_in, t = shape[cur]
        cur = emit(Node(name, "layer", [cur], spec.out_channels, t, spec=spec, in_channels=c_in))
        for src in res_into.get(name, []):
            src_node = resolved[src]
            if shape[src_node] != shape[cur]:
                raise ConfigError(
                    f"residual {src}->{name}: shape {shape[src_node]} does not match {shape[cur]}"
                )
            cur = emit(Node(f"{name}.res", "add", [cur, src_node], *shape[cur]))
        resolved[name] = cur
        if spec.pool_after > 1:
            c, t = shape[cur]
            if t % spec.pool_after:
                raise ConfigError(f"{name}: length {t} not divisible by pool factor {spec.pool_after}")
            cur = emit(Node(f"{name}.pool", "pool", [cur], c, t // spec.pool_after, factor=spec.pool_after))

    if shape[cur] != (1, cfg.window_len):
        raise ConfigError(
            f"network output shape {shape[cur]} != (1, {cfg.window_len}); pooling and un-pooling do not cancel"
        )
    return nodes


def count_parameters(cfg: ModelConfig) -> int:
    """Trainable parameter count (kernels, biases, BN scale and shift) without allocating."""
    total = 0
    for n in compile_graph(cfg):
        if n.kind == "layer":
            s = n.spec
            total += s.out_channels * n.in_channels * s.kernel_size + s.out_channels
            if s.has_bn:
                total += 2 * s.out_channels
    return total


# --------------------------------------------------------------------------- #
# Model
# --------------------------------------------------------------------------- #


def init_glorot(shape, rng: np.random.Generator | int, dtype=np.float32) -> np.ndarray:
    """Uniform(-L, L) with ``L = sqrt(6 / (fan_in + fan_out))``.

    For a ``(C_out, C_in, k)`` kernel, ``fan_in = C_in*k`` and ``fan_out = C_out*k``.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    shape = tuple(shape)
    receptive = math.prod(shape[2:]) if len(shape) > 2 else 1
    fan_out = shape[0] * receptive
    fan_in = (shape[1] if len(shape) > 1 else shape[0]) * receptive
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


TRAINABLE_SUFFIXES = ("kernel", "bias", "gamma", "beta")


class Model:
    """Parameters plus the compiled graph; stateful only through the Train-mode cache."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray], dtype=np.float32):
        self.config = cfg
        self.nodes = compile_graph(cfg)
        self._by_name = {n.name: n for n in self.nodes}
        self.dtype = np.dtype(dtype)
        self.params = params
        self.standardizer: dict | None = None  # (mean, std) of the training fold, set by the pipeline
        self._cache: dict | None = None
        self.edge_grads: dict[tuple[str, str], list[np.ndarray]] | None = None
        self._check_params()

    # -- parameters -------------------------------------------------------- #

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for n in self.nodes:
            if n.kind != "layer":
                continue
            s = n.spec
            shapes[f"{n.name}.kernel"] = (s.out_channels, n.in_channels, s.kernel_size)
            shapes[f"{n.name}.bias"] = (s.out_channels,)
            if s.has_bn:
                for suffix in ("gamma", "beta", "running_mean", "running_var"):
                    shapes[f"{n.name}.{suffix}"] = (s.out_channels,)
        return shapes

    def _check_params(self):
        expected = self.expected_shapes()
        missing = set(expected) - set(self.params)
        extra = set(self.params) - set(expected)
        if missing or extra:
            raise StructuralError(
                f"parameter set does not match config (missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]})"
            )
        for k, shp in expected.items():
            if self.params[k].shape != shp:
                raise StructuralError(f"tensor {k} has shape {self.params[k].shape}, config needs {shp}")

    def trainable(self) -> list[str]:
        return [k for k in self.params if k.rsplit(".", 1)[1] in TRAINABLE_SUFFIXES]

    def num_parameters(self) -> int:
        return sum(self.params[k].size for k in self.trainable())

    def _conv(self, name) -> nn.ConvParams:
        n = self._node(name)
        return nn.ConvParams(self.params[f"{name}.kernel"], self.params[f"{name}.bias"], n.spec.dilation)

    def _bn(self, name) -> nn.BatchNormParams:
        p = self.params
        return nn.BatchNormParams(
            p[f"{name}.gamma"],
            p[f"{name}.beta"],
            p[f"{name}.running_mean"],
            p[f"{name}.running_var"],
            self.config.bn_epsilon,
            self.config.bn_momentum,
        )

    def _node(self, name) -> Node:
        return self._by_name[name]

    # -- forward / backward ------------------------------------------------ #

    def forward(self, x: np.ndarray, mode: OpMode = OpMode.INFER, rng: np.random.Generator | None = None):
        """Posterior of the on-state, shape ``(B, 1, K)``.

        Train mode updates BN running statistics, injects noise (needs ``rng``)
        and keeps the intermediates that :meth:`backward` consumes.
        """
        cfg = self.config
        x = np.asarray(x)
        if x.ndim == 2:
            x = x[:, None, :]
        if x.ndim != 3 or x.shape[1:] != (cfg.in_channels, cfg.window_len):
            raise StructuralError(
                f"input shape {x.shape} does not match (batch, {cfg.in_channels}, {cfg.window_len})"
            )
        x = x.astype(self.dtype, copy=False)
        train = mode is OpMode.TRAIN
        vals = {"x": x}
        cache = {}
        for n in self.nodes:
            if n.kind == "layer":
                inp = vals[n.inputs[0]]
                z = nn.conv1d_forward(inp, self._conv(n.name))
                pre = z
                if n.spec.has_bn:
                    bn = self._bn(n.name)
                    pre = nn.batchnorm_forward(z, bn, mode)
                    if train:
                        self.params[f"{n.name}.running_mean"] = bn.running_mean
                        self.params[f"{n.name}.running_var"] = bn.running_var
                if n.spec.activation is Activation.LOGSG:
                    a = nn.logistic_sigmoid(pre)
                else:
                    a = nn.leaky_relu(pre, cfg.lrelu_alpha)
                if train:
                    cache[n.name] = (z, pre, a)
                if n.spec.has_gn:
                    a = nn.gaussian_noise(a, cfg.noise_sigma, mode, rng)
                vals[n.name] = a
            elif n.kind == "pool":
                out, idx = nn.max_pool(vals[n.inputs[0]], n.factor)
                if train:
                    cache[n.name] = idx
                vals[n.name] = out
            elif n.kind == "unpool":
                vals[n.name] = nn.unpool_forward_fill(vals[n.inputs[0]], n.factor)
            elif n.kind == "concat":
                vals[n.name] = nn.concat_channels(*(vals[i] for i in n.inputs))
            elif n.kind == "add":
                vals[n.name] = nn.add_elementwise(vals[n.inputs[0]], vals[n.inputs[1]])
        if train:
            cache["__vals__"] = vals
            self._cache = cache
        else:
            self._cache = None
        return vals[self.nodes[-1].name]

    def backward(self, grad_posterior: np.ndarray, record_edges: bool = False) -> dict[str, np.ndarray]:
        """Gradients of all trainable tensors given ``dLoss/dposterior``.

        Requires a preceding Train-mode :meth:`forward`. With ``record_edges``
        the per-consumer contributions reaching every node output are kept in
        :attr:`edge_grads` keyed by ``(consumer, source)``.
        """
        if self._cache is None:
            raise StateError("backward() needs a Train-mode forward() first")
        cache = self._cache
        vals = cache["__vals__"]
        out_name = self.nodes[-1].name
        if grad_posterior.shape != vals[out_name].shape:
            raise StructuralError(
                f"gradient shape {grad_posterior.shape} != output shape {vals[out_name].shape}"
            )
        grads = {out_name: grad_posterior.astype(self.dtype, copy=False)}
        pgrads: dict[str, np.ndarray] = {}
        self.edge_grads = {} if record_edges else None

        def send(consumer, src, g):
            if src in grads:
                grads[src] = grads[src] + g
            else:
                grads[src] = g
            if record_edges:
                self.edge_grads.setdefault((consumer, src), []).append(g)

        alpha = self.config.lrelu_alpha
        for n in reversed(self.nodes):
            g = grads.pop(n.name, None)
            if g is None:
                continue
            if n.kind == "layer":
                z, pre, a = cache[n.name]
                if n.spec.activation is Activation.LOGSG:
                    g = nn.logistic_sigmoid_backward(a, g)
                else:
                    g = nn.leaky_relu_backward(pre, alpha, g)
                if n.spec.has_bn:
                    g, pgrads[f"{n.name}.gamma"], pgrads[f"{n.name}.beta"] = nn.batchnorm_backward(
                        z, self._bn(n.name), g
                    )
                gx, pgrads[f"{n.name}.kernel"], pgrads[f"{n.name}.bias"] = nn.conv1d_backward(
                    vals[n.inputs[0]], self._conv(n.name), g
                )
                send(n.name, n.inputs[0], gx)
            elif n.kind == "pool":
                send(n.name, n.inputs[0], nn.max_pool_backward(g, cache[n.name], n.factor))
            elif n.kind == "unpool":
                send(n.name, n.inputs[0], nn.unpool_forward_fill_backward(g, n.factor))
            elif n.kind == "concat":
                counts = [vals[i].shape[1] for i in n.inputs]
                for src, gi in zip(n.inputs, nn.concat_channels_backward(g, counts)):
                    send(n.name, src, gi)
            elif n.kind == "add":
                send(n.name, n.inputs[0], g)
                send(n.name, n.inputs[1], g)
        return {k: pgrads[k] for k in self.trainable()}

    def clear_cache(self):
        self._cache = None

    def copy(self) -> "Model":
        m = Model(self.config, {k: v.copy() for k, v in self.params.items()}, self.dtype)
        m.standardizer = None if self.standardizer is None else dict(self.standardizer)
        return m

    def astype(self, dtype) -> "Model":
        m = Model(self.config, {k: v.astype(dtype) for k, v in self.params.items()}, dtype)
        m.standardizer = None if self.standardizer is None else dict(self.standardizer)
        return m


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    """Allocate and initialize all parameters for ``cfg``.

    Kernels are Glorot-uniform; biases and BN shifts start at 0, BN scales at 1,
    running statistics at (0, 1).
    """
    nodes = compile_graph(cfg)
    rng = np.random.default_rng(seed)
    params = {}
    for n in nodes:
        if n.kind != "layer":
            continue
        s = n.spec
        params[f"{n.name}.kernel"] = init_glorot((s.out_channels, n.in_channels, s.kernel_size), rng, dtype)
        params[f"{n.name}.bias"] = np.zeros(s.out_channels, dtype=dtype)
        if s.has_bn:
            bn = nn.BatchNormParams.fresh(s.out_channels, dtype, cfg.bn_epsilon, cfg.bn_momentum)
            params[f"{n.name}.gamma"] = bn.gamma
            params[f"{n.name}.beta"] = bn.beta
            params[f"{n.name}.running_mean"] = bn.running_mean
            params[f"{n.name}.running_var"] = bn.running_var
    return Model(cfg, params, dtype)


def decide(posterior: np.ndarray) -> np.ndarray:
    """Class 0 only when p(off) > p(on); ties (posterior exactly 0.5) go to 1."""
    posterior = np.asarray(posterior)
    return (~((1.0 - posterior) > posterior)).astype(np.int8)


def predict_profile(model: Model, x_window: np.ndarray) -> np.ndarray:
    """Infer-mode posterior thresholded to a binary on/off sequence ``(B, K)``."""
    post = model.forward(x_window, OpMode.INFER)
    return decide(post[:, 0, :])
