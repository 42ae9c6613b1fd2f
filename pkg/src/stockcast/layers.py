"""Layer zoo assembled from the autodiff primitives.

Initialization conventions (seeded, applied everywhere):
  dense / conv weights: uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))
  embeddings:           uniform(-0.05, 0.05)
  biases:               zero, except the LSTM forget-gate bias which starts at 1
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as F
from .tensor import ContractError, Tensor


def embedding_dim(cardinality: int) -> int:
    """Embedding width for a categorical feature: half the cardinality, capped at 50."""
    if cardinality < 1:
        raise ContractError(f"embedding_dim: cardinality must be >= 1, got {cardinality}")
    return max(1, min(math.ceil(cardinality / 2), 50))


def _fan_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Minimal container: named parameters, buffers, children, train/eval mode."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}
        self.training = True

    def param(self, name: str, array: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(array, dtype=F.default_dtype()), requires_grad=True)
        self._params[name] = t
        return t

    def buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        arr = np.asarray(array, dtype=F.default_dtype())
        self._buffers[name] = arr
        return arr

    def child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = [(prefix + name, t) for name, t in self._params.items()]
        for cname, c in self._children.items():
            out.extend(c.named_parameters(prefix + cname + "."))
        return out

    def named_buffers(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = [(prefix + name, arr) for name, arr in self._buffers.items()]
        for cname, c in self._children.items():
            out.extend(c.named_buffers(prefix + cname + "."))
        return out

    def named_modules(self, prefix: str = "") -> list[tuple[str, "Module"]]:
        out = [(prefix.rstrip("."), self)]
        for cname, c in self._children.items():
            out.extend(c.named_modules(prefix + cname + "."))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    def train(self, mode: bool = True):
        self.training = mode
        for c in self._children.values():
            c.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for t in self.parameters():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All parameters and buffers as {name: array}, buffers suffixed by their names."""
        out = {name: t.data for name, t in self.named_parameters()}
        out.update({name: arr for name, arr in self.named_buffers()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str = ""):
        """Copy values into matching parameters/buffers; missing names raise KeyError."""
        params = dict(self.named_parameters(prefix))
        for name, t in params.items():
            t.data = np.ascontiguousarray(arrays[name], dtype=t.dtype)
        self._load_buffers(arrays, prefix)

    def _load_buffers(self, arrays: dict[str, np.ndarray], prefix: str):
        for name in self._buffers:
            self._buffers[name] = np.ascontiguousarray(
                arrays[prefix + name], dtype=self._buffers[name].dtype
            )
        for cname, c in self._children.items():
            c._load_buffers(arrays, prefix + cname + ".")


class Dense(Module):
    """Affine layer y = x W + b with W of shape (in, out). Parameters: in*out + out."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = self.param("weight", _fan_uniform(rng, (in_dim, out_dim), in_dim, out_dim))
        self.bias = self.param("bias", np.zeros(out_dim))

    def forward(self, x: Tensor) -> Tensor:
        return F.add_bias(F.matmul(x, self.weight), self.bias)


class Embedding(Module):
    """Lookup table equivalent to one_hot(idx) @ W; gradient reaches only gathered rows."""

    def __init__(self, feature_name: str, cardinality: int, dim: int, rng: np.random.Generator):
        super().__init__()
        if not 1 <= dim <= cardinality:
            raise ContractError(
                f"embedding '{feature_name}': dim must satisfy 1 <= {dim} <= {cardinality}"
            )
        self.feature_name = feature_name
        self.cardinality = cardinality
        self.dim = dim
        self.weight = self.param("weight", rng.uniform(-0.05, 0.05, size=(cardinality, dim)))

    def forward(self, indices) -> Tensor:
        idx = np.asarray(indices, dtype=np.int64)
        bad = (idx < 0) | (idx >= self.cardinality)
        if bad.any():
            raise IndexError(
                f"embedding '{self.feature_name}': index {int(idx[bad][0])} out of range "
                f"[0, {self.cardinality})"
            )
        return F.gather_rows(self.weight, idx)


class Dropout(Module):
    """Inverted dropout: scales kept activations by 1/(1-p) in train mode, identity in eval."""

    def __init__(self, p: float, rng: np.random.Generator):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ContractError(f"dropout: p must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.p == 0.0:
            return x
        mask = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return F.dropout_mask(x, mask)


class BatchNorm1d(Module):
    """Per-channel batch norm over axis 1 of (B, C) or (B, C, T) inputs.

    Train mode normalizes with batch statistics (biased variance) and updates
    running stats with momentum; eval mode is a fixed affine map. 2C parameters.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.param("gamma", np.ones(channels))
        self.beta = self.param("beta", np.zeros(channels))
        self.buffer("running_mean", np.zeros(channels))
        self.buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            axes = tuple(i for i in range(x.data.ndim) if i != 1)
            mu = x.data.mean(axis=axes)
            n = x.size // self.channels
            var_unbiased = x.data.var(axis=axes) * (n / max(n - 1, 1))
            m = self.momentum
            self._buffers["running_mean"] = ((1 - m) * self._buffers["running_mean"] + m * mu).astype(x.dtype)
            self._buffers["running_var"] = ((1 - m) * self._buffers["running_var"] + m * var_unbiased).astype(x.dtype)
            return F.batch_norm_train(x, self.gamma, self.beta, self.eps)
        return F.batch_norm_eval(
            x, self.gamma, self.beta,
            self._buffers["running_mean"].astype(x.dtype, copy=False),
            self._buffers["running_var"].astype(x.dtype, copy=False),
            self.eps,
        )


class CausalConv1d(Module):
    """Dilated causal convolution; left pad (k-1)*d zeros so output length == input length."""

    def __init__(self, in_channels: int, out_channels: int, kernel_width: int,
                 dilation: int, rng: np.random.Generator):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_width = kernel_width
        self.dilation = dilation
        fan_in, fan_out = in_channels * kernel_width, out_channels * kernel_width
        self.kernel = self.param(
            "weight", _fan_uniform(rng, (out_channels, in_channels, kernel_width), fan_in, fan_out)
        )
        self.bias = self.param("bias", np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        return F.causal_conv1d(x, self.kernel, self.bias, self.dilation)


class ResidualBlock(Module):
    """Two causal convs sharing one dilation; out = relu(branch(x) + skip(x)).

    Each conv is followed by batch norm, ReLU, dropout. The skip path is the
    identity unless channel counts differ, in which case a 1x1 conv matches them.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_width: int,
                 dilation: int, dropout: float, rng: np.random.Generator):
        super().__init__()
        self.conv1 = self.child(
            "conv1", CausalConv1d(in_channels, out_channels, kernel_width, dilation, rng)
        )
        self.bn1 = self.child("bn1", BatchNorm1d(out_channels))
        self.drop1 = self.child("drop1", Dropout(dropout, rng))
        self.conv2 = self.child(
            "conv2", CausalConv1d(out_channels, out_channels, kernel_width, dilation, rng)
        )
        self.bn2 = self.child("bn2", BatchNorm1d(out_channels))
        self.drop2 = self.child("drop2", Dropout(dropout, rng))
        self.skip = None
        if in_channels != out_channels:
            self.skip = self.child("skip", CausalConv1d(in_channels, out_channels, 1, 1, rng))

    def forward(self, x: Tensor) -> Tensor:
        h = self.drop1.forward(F.relu(self.bn1.forward(self.conv1.forward(x))))
        h = self.drop2.forward(F.relu(self.bn2.forward(self.conv2.forward(h))))
        s = x if self.skip is None else self.skip.forward(x)
        return F.relu(F.add(h, s))

    def receptive_field_increment(self) -> int:
        return 2 * (self.conv1.kernel_width - 1) * self.conv1.dilation


class TCNCore(Module):
    """Stack of residual blocks with exponentially increasing dilations 1, 2, 4, ..."""

    def __init__(self, in_channels: int, channels: int, n_blocks: int, kernel_width: int,
                 dropout: float, rng: np.random.Generator):
        super().__init__()
        self.blocks: list[ResidualBlock] = []
        for b in range(n_blocks):
            block = ResidualBlock(
                in_channels if b == 0 else channels,
                channels, kernel_width, 2**b, dropout, rng,
            )
            self.blocks.append(self.child(f"block{b}", block))

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block.forward(x)
        return x

    def receptive_field(self) -> int:
        # 1 + sum over conv layers of (k-1)*d; 1x1 skips and heads add nothing
        return 1 + sum(b.receptive_field_increment() for b in self.blocks)


class TCN(Module):
    """Dilated causal conv network: residual core plus a 1x1 conv head.

    ``forward`` projects the last time step to `out_width` values per window;
    ``forward_map`` keeps the full (B, out_width, T) time-resolved output for
    causality and receptive-field probes.
    """

    def __init__(self, in_channels: int, channels: int, n_blocks: int, kernel_width: int,
                 dropout: float, out_width: int, rng: np.random.Generator):
        super().__init__()
        self.out_width = out_width
        self.core = self.child(
            "core", TCNCore(in_channels, channels, n_blocks, kernel_width, dropout, rng)
        )
        self.proj = self.child("proj", CausalConv1d(channels, out_width, 1, 1, rng))

    def forward_map(self, x: Tensor) -> Tensor:
        return self.proj.forward(self.core.forward(x))

    def forward(self, x: Tensor) -> Tensor:
        out = self.forward_map(x)
        tlen = out.shape[2]
        last = F.narrow(out, 2, tlen - 1, 1)
        return F.reshape(last, (out.shape[0], self.out_width))

    def receptive_field(self) -> int:
        return self.core.receptive_field()


class LSTMCells(Module):
    """Stacked LSTM cells; gate order (input, forget, cell, output), forget bias init 1.

    Layer l parameters: w_x (in_l, 4H), w_h (H, 4H), bias (4H,), so
    4H*(in_l + H) + 4H parameters per layer.
    """

    def __init__(self, in_channels: int, hidden: int, n_layers: int, rng: np.random.Generator):
        super().__init__()
        self.hidden = hidden
        self.n_layers = n_layers
        self.w_x: list[Tensor] = []
        self.w_h: list[Tensor] = []
        self.b: list[Tensor] = []
        for layer in range(n_layers):
            in_dim = in_channels if layer == 0 else hidden
            self.w_x.append(
                self.param(f"w_x{layer}", _fan_uniform(rng, (in_dim, 4 * hidden), in_dim, 4 * hidden))
            )
            self.w_h.append(
                self.param(f"w_h{layer}", _fan_uniform(rng, (hidden, 4 * hidden), hidden, 4 * hidden))
            )
            bias = np.zeros(4 * hidden)
            bias[hidden : 2 * hidden] = 1.0  # forget gate
            self.b.append(self.param(f"b{layer}", bias))

    def step(self, layer: int, x_t: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        hid = self.hidden
        z = F.add_bias(
            F.add(F.matmul(x_t, self.w_x[layer]), F.matmul(h, self.w_h[layer])), self.b[layer]
        )
        i = F.sigmoid(F.narrow(z, 1, 0, hid))
        f = F.sigmoid(F.narrow(z, 1, hid, hid))
        g = F.tanh(F.narrow(z, 1, 2 * hid, hid))
        o = F.sigmoid(F.narrow(z, 1, 3 * hid, hid))
        c_new = F.add(F.mul(f, c), F.mul(i, g))
        h_new = F.mul(o, F.tanh(c_new))
        return h_new, c_new

    def forward(self, x: Tensor) -> Tensor:
        """Run over (B, C, T); returns the top layer's final hidden state (B, H)."""
        bsz, _, tlen = x.shape
        zeros = np.zeros((bsz, self.hidden), dtype=x.dtype)
        hs = [Tensor(zeros.copy()) for _ in range(self.n_layers)]
        cs = [Tensor(zeros.copy()) for _ in range(self.n_layers)]
        for t in range(tlen):
            inp = F.reshape(F.narrow(x, 2, t, 1), (bsz, x.shape[1]))
            for layer in range(self.n_layers):
                hs[layer], cs[layer] = self.step(layer, inp, hs[layer], cs[layer])
                inp = hs[layer]
        return hs[-1]


class StackedLSTM(Module):
    """Stacked LSTM with a dense projection controlling the output width.

    Hidden/cell states start at zero for every window; the final hidden state
    of the top layer feeds the projection.
    """

    def __init__(self, in_channels: int, hidden: int, n_layers: int, out_width: int,
                 rng: np.random.Generator):
        super().__init__()
        self.out_width = out_width
        self.core = self.child("core", LSTMCells(in_channels, hidden, n_layers, rng))
        self.proj = self.child("proj", Dense(hidden, out_width, rng))

    def forward(self, x: Tensor) -> Tensor:
        return self.proj.forward(self.core.forward(x))
