"""
TVNet - Shared Training Loop
"""

import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Union

import numpy as np
import pandas as pd

from tvnet.config.settings import StageSchedule
from tvnet.core.checkpoint import load_checkpoint, save_checkpoint
from tvnet.core.errors import CheckpointError
from tvnet.core.layers import Module
from tvnet.core.optim import AdamState, adam_step
from tvnet.core.tensor import Tensor, backward

logger = logging.getLogger(__name__)


def stage_seed(seed: int, stage: str, *extra: int) -> List[int]:
    """Entropy for numpy's default_rng, unique per (seed, stage, extra...)"""
    return [int(seed), zlib.crc32(stage.encode("utf-8")), *[int(value) for value in extra]]


def stage_rng(seed: int, stage: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(stage_seed(seed, stage, *extra))


@dataclass
class TrainResult:
    """Loss curve of one training run"""

    stage: str
    losses: List[float] = field(default_factory=list)
    epochs_completed: int = 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"epoch": np.arange(1, len(self.losses) + 1), "loss": self.losses})

    def save_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


class Trainer:
    """
    Epoch/batch loop with Adam and a per-epoch learning rate

    Shuffling uses a generator derived from (seed, stage, epoch), so a run
    resumed from its state file replays the same batches.
    """

    def __init__(self, stage: str, model: Module, schedule: StageSchedule, seed: int,
                 state_path: Optional[Union[str, Path]] = None):
        self.stage = stage
        self.model = model
        self.schedule = schedule
        self.seed = seed
        self.state_path = Path(state_path) if state_path else None
        self.params = model.parameters()
        self.optimizer = AdamState(learning_rate=schedule.learning_rate(0))
        self.result = TrainResult(stage)

    def save_state(self) -> Optional[Path]:
        """Write parameters, optimizer moments and progress"""
        if self.state_path is None:
            return None
        arrays = {f"model/{name}": values for name, values in self.model.state_dict().items()}
        arrays.update(self.optimizer.to_arrays())
        arrays["train/epoch"] = np.array([float(self.result.epochs_completed)])
        arrays["train/losses"] = np.array(self.result.losses, dtype=np.float64)
        return save_checkpoint(self.state_path, arrays)

    def load_state(self) -> bool:
        """Restore a previous run; returns False when there is nothing to resume"""
        if self.state_path is None or not self.state_path.exists():
            return False
        arrays = load_checkpoint(self.state_path)
        if "train/epoch" not in arrays:
            raise CheckpointError(f"{self.state_path}: not a training state file")
        model_state = {key[len("model/"):]: values for key, values in arrays.items() if key.startswith("model/")}
        self.model.load_state_dict(model_state)
        self.optimizer = AdamState.from_arrays(arrays)
        self.result.epochs_completed = int(arrays["train/epoch"][0])
        self.result.losses = [float(value) for value in arrays["train/losses"].reshape(-1)]
        logger.info(f"[{self.stage}] resumed after epoch {self.result.epochs_completed}")
        return True

    def fit(self, num_items: int, batch_loss: Callable[[np.ndarray], Tensor],
            resume: bool = False, max_epochs: Optional[int] = None) -> TrainResult:
        """
        Train for the scheduled number of epochs

        Args:
            num_items: Size of the training set
            batch_loss: Builds the scalar loss of a batch from its item indices
            resume: Continue from state_path when it exists
            max_epochs: Stop after this many total epochs (defaults to the schedule)

        Returns:
            TrainResult: Mean loss per epoch
        """
        if resume:
            self.load_state()
        total_epochs = self.schedule.epochs if max_epochs is None else min(max_epochs, self.schedule.epochs)
        if num_items == 0 and total_epochs > 0:
            raise ValueError(f"[{self.stage}] no training items")

        for epoch in range(self.result.epochs_completed, total_epochs):
            learning_rate = self.schedule.learning_rate(epoch)
            order = stage_rng(self.seed, self.stage, epoch).permutation(num_items)
            batch_losses = []
            batch_sizes = []
            for begin in range(0, num_items, self.schedule.batch_size):
                indices = order[begin:begin + self.schedule.batch_size]
                loss = batch_loss(indices)
                backward(loss, self.params)
                adam_step(self.optimizer, self.params, schedule=lambda _step: learning_rate)
                batch_losses.append(loss.item())
                batch_sizes.append(len(indices))
                logger.debug(f"[{self.stage}] epoch {epoch + 1} batch {len(batch_losses)} loss {loss.item():.6f}")
            epoch_loss = float(np.average(batch_losses, weights=batch_sizes))
            self.result.losses.append(epoch_loss)
            self.result.epochs_completed = epoch + 1
            logger.info(f"[{self.stage}] epoch {epoch + 1}/{total_epochs} lr={learning_rate:g} loss={epoch_loss:.6f}")
            self.save_state()
        return self.result
