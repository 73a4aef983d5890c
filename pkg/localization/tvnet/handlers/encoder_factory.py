"""
TVNet - Voting Encoder Variants
"""

import logging

import numpy as np

from tvnet.config.settings import ENCODER_KINDS, VemConfig
from tvnet.core.errors import ConfigError, ShapeError
from tvnet.core.layers import Conv1dLayer, Linear, LstmLayer, Module
from tvnet.core.tensor import Tensor, relu, tanh

logger = logging.getLogger(__name__)


class VemEncoder(Module):
    """
    Base class for window encoders

    forward() maps a batch of windows (B, C, J) to per-frame relative
    distances (B, J) in (-1, 1).
    """

    kind = "base"

    def __init__(self, window_length: int, in_channels: int):
        self.window_length = window_length
        self.in_channels = in_channels

    def check_input(self, x: Tensor) -> None:
        if x.ndim != 3 or x.shape[1] != self.in_channels or x.shape[2] != self.window_length:
            raise ShapeError(
                f"{self.kind} encoder expects windows (B, {self.in_channels}, {self.window_length}), got {x.shape}"
            )


class LstmEncoder(VemEncoder):
    """Two same-length convolutions, an LSTM over the window and a per-frame linear head"""

    kind = "lstm"

    def __init__(self, window_length: int, in_channels: int, config: VemConfig,
                 rng: np.random.Generator, dtype=np.float64):
        super().__init__(window_length, in_channels)
        self.conv1 = Conv1dLayer(in_channels, config.conv_channels, config.kernel_size, rng, same=True, dtype=dtype)
        self.conv2 = Conv1dLayer(config.conv_channels, config.conv_channels, config.kernel_size, rng,
                                 same=True, dtype=dtype)
        self.lstm = LstmLayer(config.conv_channels, config.hidden_size, rng, dtype=dtype)
        self.head = Linear(config.hidden_size, 1, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        self.check_input(x)
        hidden = relu(self.conv2(relu(self.conv1(x))))
        sequence = self.lstm(hidden.swapaxes(1, 2))
        out = self.head(sequence)
        return tanh(out.reshape(x.shape[0], self.window_length))


class SrfEncoder(VemEncoder):
    """Receptive field of one frame: the same small MLP applied to every frame"""

    kind = "srf"

    def __init__(self, window_length: int, in_channels: int, config: VemConfig,
                 rng: np.random.Generator, dtype=np.float64):
        super().__init__(window_length, in_channels)
        self.hidden = Linear(in_channels, config.conv_channels, rng, dtype=dtype)
        self.head = Linear(config.conv_channels, 1, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        self.check_input(x)
        frames = x.swapaxes(1, 2)
        out = self.head(relu(self.hidden(frames)))
        return tanh(out.reshape(x.shape[0], self.window_length))


class SllEncoder(VemEncoder):
    """A single linear layer over the flattened window"""

    kind = "sll"

    def __init__(self, window_length: int, in_channels: int, config: VemConfig,
                 rng: np.random.Generator, dtype=np.float64):
        super().__init__(window_length, in_channels)
        self.linear = Linear(in_channels * window_length, window_length, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        self.check_input(x)
        return tanh(self.linear(x.reshape(x.shape[0], self.in_channels * self.window_length)))


class EncoderFactory:
    """Factory for creating voting encoders by kind"""

    _encoders = {
        "lstm": LstmEncoder,
        "srf": SrfEncoder,
        "sll": SllEncoder,
    }

    @staticmethod
    def create_encoder(kind: str, window_length: int, in_channels: int, config: VemConfig,
                       rng: np.random.Generator, dtype=np.float64) -> VemEncoder:
        """
        Create an encoder for the given kind

        Args:
            kind: One of ENCODER_KINDS
            window_length: J
            in_channels: Feature channels
            config: Layer sizes
            rng: Generator for the initial weights
            dtype: Parameter dtype

        Returns:
            VemEncoder: The new encoder
        """
        if kind not in EncoderFactory._encoders:
            raise ConfigError(f"Unknown encoder '{kind}'. Options: {', '.join(ENCODER_KINDS)}")
        encoder = EncoderFactory._encoders[kind](window_length, in_channels, config, rng, dtype)
        logger.debug(f"Created {kind} encoder for J={window_length} ({encoder.num_parameters()} parameters)")
        return encoder
