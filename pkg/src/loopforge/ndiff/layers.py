"""Layer modules over the tape engine: dense, conv, transposed conv, LSTM,
embedding. Weight init is uniform in ±sqrt(1/fan_in) except embedding tables,
which are N(0, 0.02^2)."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = float(np.sqrt(1.0 / fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    def parameters(self) -> list[Tensor]:
        raise NotImplementedError

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Named parameter payloads for checkpointing."""
        return {name: p.data for name, p in self.named_parameters()}

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        raise NotImplementedError

    def load_state_arrays(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, p in self.named_parameters():
            key = prefix + name
            arr = np.asarray(state[key], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"checkpoint entry {key}: shape {arr.shape} != {p.data.shape}")
            p.data = arr


class Dense(Module):
    def __init__(self, rng, n_in: int, n_out: int, bias: bool = True):
        self.w = uniform_fan_in(rng, (n_in, n_out), n_in)
        self.b = uniform_fan_in(rng, (n_out,), n_in) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.w)
        return T.add(out, self.b) if self.b is not None else out

    def named_parameters(self):
        out = [("w", self.w)]
        if self.b is not None:
            out.append(("b", self.b))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]


class Conv1d(Module):
    def __init__(self, rng, c_in: int, c_out: int, k: int, stride: int = 1,
                 padding: int = 0, bias: bool = True):
        fan_in = c_in * k
        self.w = uniform_fan_in(rng, (c_out, c_in, k), fan_in)
        self.b = uniform_fan_in(rng, (c_out,), fan_in) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.w, self.b, self.stride, self.padding)

    def named_parameters(self):
        out = [("w", self.w)]
        if self.b is not None:
            out.append(("b", self.b))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]


class ConvTranspose1d(Module):
    def __init__(self, rng, c_in: int, c_out: int, k: int, stride: int = 1,
                 padding: int = 0, bias: bool = True):
        fan_in = c_in * k
        self.w = uniform_fan_in(rng, (c_in, c_out, k), fan_in)
        self.b = uniform_fan_in(rng, (c_out,), fan_in) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv_transpose1d(x, self.w, self.b, self.stride, self.padding)

    def named_parameters(self):
        out = [("w", self.w)]
        if self.b is not None:
            out.append(("b", self.b))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]


class Embedding(Module):
    def __init__(self, rng, n_rows: int, dim: int):
        self.table = Tensor(rng.normal(0.0, 0.02, size=(n_rows, dim)), requires_grad=True)

    def __call__(self, indices) -> Tensor:
        return T.embedding(self.table, indices)

    def named_parameters(self):
        return [("table", self.table)]

    def parameters(self):
        return [self.table]


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor,
              b_ih: Tensor, b_hh: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step. Gate order in the packed 4H axis is i, f, g, o."""
    hidden = h.shape[1]
    pre = T.add(T.add(T.matmul(x, w_ih), T.matmul(h, w_hh)), T.add(b_ih, b_hh))
    i = T.sigmoid(T.slice_cols(pre, 0, hidden))
    f = T.sigmoid(T.slice_cols(pre, hidden, 2 * hidden))
    g = T.tanh(T.slice_cols(pre, 2 * hidden, 3 * hidden))
    o = T.sigmoid(T.slice_cols(pre, 3 * hidden, 4 * hidden))
    c_next = T.add(T.mul(f, c), T.mul(i, g))
    h_next = T.mul(o, T.tanh(c_next))
    return h_next, c_next


class LSTM(Module):
    """Stacked unidirectional LSTM; weights packed (in, 4H) / (H, 4H)."""

    def __init__(self, rng, n_in: int, hidden: int, layers: int):
        self.hidden = hidden
        self.layers = []
        for li in range(layers):
            d = n_in if li == 0 else hidden
            self.layers.append({
                "w_ih": uniform_fan_in(rng, (d, 4 * hidden), d),
                "w_hh": uniform_fan_in(rng, (hidden, 4 * hidden), hidden),
                "b_ih": uniform_fan_in(rng, (4 * hidden,), hidden),
                "b_hh": uniform_fan_in(rng, (4 * hidden,), hidden),
            })

    def initial_state(self, batch: int):
        z = lambda: Tensor(np.zeros((batch, self.hidden)))
        return [(z(), z()) for _ in self.layers]

    def step(self, x: Tensor, state):
        """Advance one time step through the whole stack."""
        new_state = []
        cur = x
        for lw, (h, c) in zip(self.layers, state):
            h2, c2 = lstm_cell(cur, h, c, lw["w_ih"], lw["w_hh"], lw["b_ih"], lw["b_hh"])
            new_state.append((h2, c2))
            cur = h2
        return cur, new_state

    def named_parameters(self):
        out = []
        for li, lw in enumerate(self.layers):
            for key in ("w_ih", "w_hh", "b_ih", "b_hh"):
                out.append((f"l{li}.{key}", lw[key]))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]
