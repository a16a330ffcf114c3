"""Parameter containers and the small layers the model is assembled from."""
import numpy as np

from sdtl import tensor as T
from sdtl.tensor import Tensor, get_dtype


def uniform_param(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(get_dtype()), requires_grad=True)


def zero_param(shape):
    return Tensor(np.zeros(shape, dtype=get_dtype()), requires_grad=True)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
            self._modules.pop(name, None)
        elif isinstance(value, Module):
            self._modules[name] = value
            self._params.pop(name, None)
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        params = dict(self.named_parameters())
        if strict:
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            if missing or extra:
                raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in params.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, m):
        setattr(self, str(len(self._items)), m)
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Linear(Module):
    """``y = x @ W + b`` over the last axis; W is stored (in, out)."""

    def __init__(self, rng, d_in, d_out, bias=True, zero_init=False):
        super().__init__()
        self.weight = zero_param((d_in, d_out)) if zero_init else uniform_param(rng, (d_in, d_out), d_in)
        self.bias = zero_param((d_out,)) if bias else None

    def forward(self, x):
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    def __init__(self, rng, c_in, c_out, k=3, stride=1, pad=None, zero_init=False):
        super().__init__()
        fan_in = c_in * k * k
        shape = (c_out, c_in, k, k)
        self.weight = zero_param(shape) if zero_init else uniform_param(rng, shape, fan_in)
        self.bias = zero_param((c_out,))
        self.stride = stride
        if pad is None:
            # stride 2 halves even sizes exactly; the odd padding goes bottom/right
            pad = k // 2 if stride == 1 else ((k - 2) // 2, (k - 2) - (k - 2) // 2)
        self.pad = pad

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class LayerNorm(Module):
    def __init__(self, dim):
        super().__init__()
        self.gain = Tensor(np.ones(dim, dtype=get_dtype()), requires_grad=True)
        self.bias = zero_param((dim,))

    def forward(self, x):
        return T.layer_norm(x, self.gain, self.bias)


class ConvBlock(Module):
    """3x3 conv -> GELU -> 3x3 conv."""

    def __init__(self, rng, c_in, c_out, hidden=None):
        super().__init__()
        hidden = hidden or c_out
        self.conv1 = Conv2d(rng, c_in, hidden)
        self.conv2 = Conv2d(rng, hidden, c_out)

    def forward(self, x):
        return self.conv2(T.gelu(self.conv1(x)))


class MLP(Module):
    def __init__(self, rng, d_in, d_hidden, d_out, zero_init=False):
        super().__init__()
        self.fc1 = Linear(rng, d_in, d_hidden, zero_init=zero_init)
        self.fc2 = Linear(rng, d_hidden, d_out, zero_init=zero_init)

    def forward(self, x):
        return self.fc2(T.gelu(self.fc1(x)))
