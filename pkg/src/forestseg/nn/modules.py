"""Layer building blocks with parameter registration.

Modules register parameters, running-stat buffers and child modules through
``__setattr__`` so checkpoints can address everything by dotted name.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, ModuleList):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, child in self._children.items():
            out.update(child.named_parameters(prefix + name + "."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for name, b in self._buffers.items():
            out[prefix + name] = b
        for name, child in self._children.items():
            out.update(child.named_buffers(prefix + name + "."))
        return out

    def train(self, flag: bool = True):
        object.__setattr__(self, "training", flag)
        for child in self._children.values():
            child.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.zero_grad()

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.named_parameters().values())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList:
    """Ordered container of child modules (registered as item indices)."""

    def __init__(self, items=()):
        self._items = list(items)

    def append(self, module):
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)

    def named_parameters(self, prefix: str = ""):
        out = {}
        for i, m in enumerate(self._items):
            out.update(m.named_parameters(f"{prefix}{i}."))
        return out

    def named_buffers(self, prefix: str = ""):
        out = {}
        for i, m in enumerate(self._items):
            out.update(m.named_buffers(f"{prefix}{i}."))
        return out

    def train(self, flag: bool = True):
        for m in self._items:
            m.train(flag)


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    std = np.sqrt(2.0 / fan_in)
    return Tensor((rng.standard_normal(shape) * std).astype(dtype), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, pad=None, bias=True, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.pad = (k // 2) if pad is None else pad
        self.w = he_normal(rng, (cout, cin, k, k), cin * k * k, dtype)
        self.b = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class BatchNorm2d(Module):
    def __init__(self, channels, dtype=np.float32, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x):
        return ops.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )


class ConvBNRelu(Module):
    def __init__(self, cin, cout, rng, k=3, stride=1, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(cin, cout, k, rng, stride=stride, dtype=dtype)
        self.bn = BatchNorm2d(cout, dtype=dtype)

    def forward(self, x):
        return ops.relu(self.bn(self.conv(x)))


class ConvBlock(Module):
    """Two 3x3 conv+BN+ReLU stages, the basic U-Net building block."""

    def __init__(self, cin, cout, rng, dtype=np.float32):
        super().__init__()
        self.c1 = ConvBNRelu(cin, cout, rng, dtype=dtype)
        self.c2 = ConvBNRelu(cout, cout, rng, dtype=dtype)

    def forward(self, x):
        return self.c2(self.c1(x))


class UpBlock(Module):
    """Learned 2x upsampling: nearest-neighbor expand then 3x3 conv."""

    def __init__(self, cin, cout, rng, dtype=np.float32):
        super().__init__()
        self.conv = ConvBNRelu(cin, cout, rng, dtype=dtype)

    def forward(self, x):
        return self.conv(ops.upsample_nearest(x, 2))


class AttentionGate(Module):
    """Additive attention over a skip connection.

    alpha = sigmoid(psi(relu(Wg*gate + Wx*skip))), applied multiplicatively to
    the skip features; gate and skip must share spatial dims (the caller
    upsamples the gate signal first when needed).
    """

    def __init__(self, skip_channels, gate_channels, rng, inter_channels=None,
                 dtype=np.float32):
        super().__init__()
        inter = inter_channels or max(skip_channels // 2, 1)
        self.wg = Conv2d(gate_channels, inter, 1, rng, dtype=dtype)
        self.wx = Conv2d(skip_channels, inter, 1, rng, bias=False, dtype=dtype)
        self.psi = Conv2d(inter, 1, 1, rng, dtype=dtype)

    def attention(self, skip, gate):
        if skip.data.shape[2:] != gate.data.shape[2:]:
            raise ValueError(
                f"attention gate needs aligned spatial dims, got skip "
                f"{skip.data.shape[2:]} vs gate {gate.data.shape[2:]}"
            )
        a = ops.relu(ops.add(self.wg(gate), self.wx(skip)))
        return ops.sigmoid(self.psi(a))

    def forward(self, skip, gate):
        return ops.mul_gate(skip, self.attention(skip, gate))


class Bottleneck(Module):
    """Residual bottleneck (1x1 reduce, 3x3, 1x1 expand) with projection
    shortcut when shape changes."""

    EXPANSION = 4

    def __init__(self, cin, mid, rng, stride=1, dtype=np.float32):
        super().__init__()
        cout = mid * self.EXPANSION
        self.c1 = Conv2d(cin, mid, 1, rng, dtype=dtype)
        self.b1 = BatchNorm2d(mid, dtype=dtype)
        self.c2 = Conv2d(mid, mid, 3, rng, stride=stride, dtype=dtype)
        self.b2 = BatchNorm2d(mid, dtype=dtype)
        self.c3 = Conv2d(mid, cout, 1, rng, dtype=dtype)
        self.b3 = BatchNorm2d(cout, dtype=dtype)
        if cin != cout or stride != 1:
            self.proj = Conv2d(cin, cout, 1, rng, stride=stride, dtype=dtype)
            self.proj_bn = BatchNorm2d(cout, dtype=dtype)
        else:
            self.proj = None

    def forward(self, x):
        h = ops.relu(self.b1(self.c1(x)))
        h = ops.relu(self.b2(self.c2(h)))
        h = self.b3(self.c3(h))
        shortcut = self.proj_bn(self.proj(x)) if self.proj is not None else x
        return ops.relu(ops.add(h, shortcut))
