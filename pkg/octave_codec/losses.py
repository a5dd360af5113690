"""
Variable-rate training objective: 2 * L2 + L_MS, each summed over the rate set.
"""

from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Optional, Union

from octave_codec.exceptions import ContractError
from octave_codec.metrics import MsSsimConfig, ms_ssim
from octave_codec.tensor import Tensor

L2_WEIGHT = 2.0

Reconstructions = Union[Mapping[int, Tensor], Iterable[Tensor]]


def _as_list(recons: Reconstructions) -> list[Tensor]:
    items = list(recons.values()) if isinstance(recons, Mapping) else list(recons)
    if not items:
        raise ContractError("at least one reconstruction is required")
    return items


def loss_l2(x: Tensor, recons: Reconstructions) -> Tensor:
    """Sum over rates of the per-image Euclidean norm ||x - x_B||_2, averaged over the batch."""
    total: Optional[Tensor] = None
    for x_bar in _as_list(recons):
        if x_bar.shape != x.shape:
            raise ContractError(f"reconstruction {x_bar.shape} does not match input {x.shape}")
        diff = x - x_bar
        norms = (diff * diff).sum(axis=(1, 2, 3)).sqrt()
        term = norms.mean()
        total = term if total is None else total + term
    assert total is not None
    return total


def loss_msssim(x: Tensor, recons: Reconstructions, cfg: Optional[MsSsimConfig] = None) -> Tensor:
    """-sum over rates of MS-SSIM(x, x_B); bounded below by -len(rates)."""
    total: Optional[Tensor] = None
    for x_bar in _as_list(recons):
        term = -ms_ssim(x, x_bar, cfg)
        total = term if total is None else total + term
    assert total is not None
    return total


@dataclass
class LossTerms:
    total: Tensor
    l2: Tensor
    msssim: Tensor


def loss_terms(x: Tensor, recons: Reconstructions, cfg: Optional[MsSsimConfig] = None) -> LossTerms:
    items = _as_list(recons)
    l2 = loss_l2(x, items)
    ms = loss_msssim(x, items, cfg)
    return LossTerms(total=L2_WEIGHT * l2 + ms, l2=l2, msssim=ms)


def total_loss(x: Tensor, recons: Reconstructions, cfg: Optional[MsSsimConfig] = None) -> Tensor:
    return loss_terms(x, recons, cfg).total
