"""
Variable-rate training loop.

Every step samples a mini-batch, runs the encoder once and the decoder at
each training rate with stochastic quantization, backpropagates
2 * L2 + L_MS through the straight-through quantizer and takes one Adam step.
"""

import csv
import logging
import math
from collections.abc import Callable
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from octave_codec.checkpoint import save_checkpoint
from octave_codec.exceptions import ConfigError
from octave_codec.losses import loss_terms
from octave_codec.metrics import MsSsimConfig, scales_for_size
from octave_codec.model import CodecModel
from octave_codec.optim import Adam, LinearDecaySchedule
from octave_codec.tensor import Tensor

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "epoch", "lr", "total", "l2", "msssim")


@dataclass(frozen=True)
class TrainSchedule:
    """
    `max_steps`, when set, replaces the epoch count as the run length; the
    learning rate then decays over those steps.
    """

    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 2e-5
    seed: int = 0
    max_steps: Optional[int] = None

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")

    def steps_per_epoch(self, dataset_size: int) -> int:
        return math.ceil(dataset_size / self.batch_size)

    def total_steps(self, dataset_size: int) -> int:
        if self.max_steps is not None:
            return self.max_steps
        return self.epochs * self.steps_per_epoch(dataset_size)


@dataclass(frozen=True)
class LossRecord:
    step: int
    epoch: int
    lr: float
    total: float
    l2: float
    msssim: float


@dataclass
class TrainResult:
    model: CodecModel
    log: list[LossRecord] = field(default_factory=list)
    best_loss: float = math.inf
    checkpoints: list[Path] = field(default_factory=list)


def train(
    dataset: np.ndarray,
    model: CodecModel,
    schedule: TrainSchedule,
    msssim: Optional[MsSsimConfig] = None,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    on_step: Optional[Callable[[LossRecord], None]] = None,
) -> TrainResult:
    """
    Train `model` in place on `dataset` (N x 3 x H x W reals in [0, 1]).

    With `checkpoint_dir` set, `last.occm` is written after every epoch and
    `best.occm` whenever the epoch's mean loss improves.
    """
    dataset = np.asarray(dataset)
    if dataset.ndim != 4 or dataset.shape[0] == 0:
        raise ConfigError(f"training needs a non-empty N x 3 x H x W dataset, got shape {dataset.shape}")
    n = dataset.shape[0]
    cfg = scales_for_size(min(dataset.shape[2:]), msssim or MsSsimConfig(scales=3))

    data_seq, quant_seq = np.random.SeedSequence(schedule.seed).spawn(2)
    data_rng = np.random.default_rng(data_seq)
    quant_rng = np.random.default_rng(quant_seq)

    total_steps = schedule.total_steps(n)
    optimizer = Adam(model.parameters(), LinearDecaySchedule(schedule.learning_rate, total_steps))
    result = TrainResult(model=model)
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    logger.info(
        f"Training on {n} images for {total_steps} steps "
        f"(batch {schedule.batch_size}, rates {model.config.rates}, MS-SSIM scales {cfg.scales})"
    )

    step = 0
    epoch = 0
    while step < total_steps:
        order = data_rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, schedule.batch_size):
            if step >= total_steps:
                break
            x = Tensor(dataset[order[start : start + schedule.batch_size]])
            recons = model.variable_rate_forward(x, mode="stochastic", rng=quant_rng)
            terms = loss_terms(x, recons, cfg)
            optimizer.zero_grad()
            terms.total.backward()
            lr = optimizer.lr
            optimizer.step()
            record = LossRecord(
                step=step,
                epoch=epoch,
                lr=lr,
                total=terms.total.item(),
                l2=terms.l2.item(),
                msssim=terms.msssim.item(),
            )
            result.log.append(record)
            epoch_losses.append(record.total)
            if on_step is not None:
                on_step(record)
            step += 1

        mean_loss = float(np.mean(epoch_losses))
        logger.info(f"Epoch {epoch}: mean loss {mean_loss:.5f} over {len(epoch_losses)} steps")
        meta = {"epoch": epoch, "step": step, "loss": mean_loss}
        if ckpt_dir is not None:
            result.checkpoints.append(save_checkpoint(model, ckpt_dir / "last.occm", meta))
        if mean_loss < result.best_loss:
            result.best_loss = mean_loss
            if ckpt_dir is not None:
                save_checkpoint(model, ckpt_dir / "best.occm", meta)
        epoch += 1
    return result


def write_loss_csv(log: list[LossRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=LOSS_COLUMNS)
        writer.writeheader()
        for record in log:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in asdict(record).items()})
    return path
