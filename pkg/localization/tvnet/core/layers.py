"""
TVNet - Network Layers
"""

import logging
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from tvnet.core.errors import CheckpointError, ShapeError
from tvnet.core.tensor import Tensor, conv1d, matmul, sigmoid, stack, tanh

logger = logging.getLogger(__name__)

LSTM_GATES = ("input", "forget", "cell", "output")


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, dtype: np.dtype) -> np.ndarray:
    """Draw from U(-1/sqrt(fan_in), +1/sqrt(fan_in))"""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Base class: finds parameters and sub-modules among the instance attributes"""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{name}.")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{name}.{index}.")

    def parameters(self) -> List[Tensor]:
        params = []
        for name, param in self.named_parameters():
            param.name = name
            params.append(param)
        return params

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        """
        Copy parameter values from a name -> array mapping

        Args:
            state: Parameter arrays keyed by dotted name
            strict: Reject missing or unexpected names

        Raises:
            CheckpointError: On a missing name or a shape mismatch
        """
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            if missing:
                raise CheckpointError(f"Checkpoint is missing parameters: {', '.join(missing)}")
        for name, param in own.items():
            if name not in state:
                continue
            values = np.asarray(state[name])
            if values.shape != param.shape:
                raise CheckpointError(
                    f"Parameter '{name}' has shape {param.shape}, checkpoint holds {values.shape}"
                )
            param.data = values.astype(param.dtype).copy()

    def num_parameters(self) -> int:
        return int(sum(param.size for param in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class Linear(Module):
    """Dense layer applied over the last axis"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype: np.dtype = np.float64):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(uniform_init(rng, (out_features, in_features), in_features, dtype), requires_grad=True)
        self.bias = Tensor(uniform_init(rng, (out_features,), in_features, dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"Linear expects {self.in_features} input features, got shape {x.shape}")
        if x.ndim == 1:
            return (matmul(x.reshape(1, -1), self.weight.T) + self.bias).reshape(self.out_features)
        return matmul(x, self.weight.T) + self.bias


class Conv1dLayer(Module):
    """
    1D convolution over (B, C_in, L) or (C_in, L) input

    Output length is (L + 2*padding - kernel_size) // stride + 1. With same=True the
    padding is chosen so the output keeps the input length, which needs an odd kernel.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, same: bool = False, dtype: np.dtype = np.float64):
        if kernel_size < 1 or stride < 1 or padding < 0:
            raise ShapeError(f"Invalid conv geometry: kernel={kernel_size}, stride={stride}, padding={padding}")
        if same:
            if kernel_size % 2 == 0:
                raise ShapeError(f"Same-length convolution needs an odd kernel, got {kernel_size}")
            if stride != 1:
                raise ShapeError("Same-length convolution needs stride 1")
            padding = (kernel_size - 1) // 2
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size
        self.weights = Tensor(uniform_init(rng, (out_channels, in_channels, kernel_size), fan_in, dtype),
                              requires_grad=True)
        self.bias = Tensor(uniform_init(rng, (out_channels,), fan_in, dtype), requires_grad=True)

    def output_length(self, length: int) -> int:
        return (length + 2 * self.padding - self.kernel_size) // self.stride + 1

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim == 2:
            out = conv1d(x.reshape(1, *x.shape), self.weights, self.bias, self.stride, self.padding)
            return out.reshape(out.shape[1:])
        return conv1d(x, self.weights, self.bias, self.stride, self.padding)


class LstmLayer(Module):
    """
    Single-layer LSTM with separate weights per gate

    Each gate g in (input, forget, cell, output) owns w_g (hidden, input),
    u_g (hidden, hidden) and b_g (hidden). The forget bias starts at 1.0.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator,
                 dtype: np.dtype = np.float64):
        self.input_size = input_size
        self.hidden_size = hidden_size
        for gate in LSTM_GATES:
            setattr(self, f"w_{gate}", Tensor(
                uniform_init(rng, (hidden_size, input_size), input_size, dtype), requires_grad=True))
            setattr(self, f"u_{gate}", Tensor(
                uniform_init(rng, (hidden_size, hidden_size), hidden_size, dtype), requires_grad=True))
            bias = uniform_init(rng, (hidden_size,), hidden_size, dtype)
            if gate == "forget":
                bias = np.ones(hidden_size, dtype=dtype)
            setattr(self, f"b_{gate}", Tensor(bias, requires_grad=True))

    def _gate(self, gate: str) -> Tuple[Tensor, Tensor, Tensor]:
        return getattr(self, f"w_{gate}"), getattr(self, f"u_{gate}"), getattr(self, f"b_{gate}")

    def forward(self, x: Tensor) -> Tensor:
        """
        Run the recurrence from a zero state

        Args:
            x: Inputs of shape (B, L, input_size) or (L, input_size)

        Returns:
            Tensor: Hidden states of shape (B, L, hidden_size) (or (L, hidden_size))
        """
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeError(f"LSTM expects (B, L, {self.input_size}) input, got {x.shape}")
        batch, length, _ = x.shape
        if length == 0:
            raise ShapeError("LSTM input sequence is empty")

        projected = {gate: matmul(x, self._gate(gate)[0].T) for gate in LSTM_GATES}
        h = Tensor(np.zeros((batch, self.hidden_size), dtype=x.dtype))
        c = Tensor(np.zeros((batch, self.hidden_size), dtype=x.dtype))
        hidden_states = []
        for step in range(length):
            pre = {}
            for gate in LSTM_GATES:
                _, u, b = self._gate(gate)
                pre[gate] = projected[gate][:, step, :] + matmul(h, u.T) + b
            input_gate = sigmoid(pre["input"])
            forget_gate = sigmoid(pre["forget"])
            candidate = tanh(pre["cell"])
            output_gate = sigmoid(pre["output"])
            c = forget_gate * c + input_gate * candidate
            h = output_gate * tanh(c)
            hidden_states.append(h)
        out = stack(hidden_states, axis=1)
        return out.reshape(out.shape[1:]) if squeeze else out


def conv1d_forward(layer: Conv1dLayer, x: Tensor) -> Tensor:
    """Apply a convolution layer to (C_in, L) or (B, C_in, L) input"""
    channel_axis = 0 if x.ndim == 2 else 1
    if x.shape[channel_axis] != layer.in_channels:
        raise ShapeError(
            f"Input has {x.shape[channel_axis]} channels, layer expects {layer.in_channels}"
        )
    return layer(x)


def lstm_forward(layer: LstmLayer, inputs: Sequence[Tensor]) -> List[Tensor]:
    """
    Run an LSTM over a sequence of per-step inputs

    Args:
        layer: The LSTM layer
        inputs: Per-step tensors of shape (input_size,) or (B, input_size)

    Returns:
        List[Tensor]: Hidden state per step, shaped like the inputs' batch layout
    """
    if len(inputs) == 0:
        raise ShapeError("LSTM input sequence is empty")
    batched = inputs[0].ndim == 2
    sequence = stack(list(inputs), axis=1 if batched else 0)
    hidden = layer(sequence)
    if batched:
        return [hidden[:, step, :] for step in range(len(inputs))]
    return [hidden[step] for step in range(len(inputs))]
