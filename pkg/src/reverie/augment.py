"""Image augmentations for representation learning: random shifts and
imagewise intensity jittering.

Both transforms act on float batches of shape (B, C, H, W) with values in
[0, 1] and draw one transformation per batch element, shared across all
channels of that element, so the geometry between stacked frames is
preserved. ``augment_pair`` applies independently drawn transformations to
the current and next observation batches, using separate torch generators
derived from the caller's generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class AugmentationSpec:
    max_shift: int = 3
    intensity_scale: float = 0.05
    enabled: bool = True

    def __post_init__(self) -> None:
        if not 0 <= self.max_shift <= 3:
            raise ValueError("max_shift must be in 0..3")
        if self.intensity_scale < 0:
            raise ValueError("intensity_scale must be >= 0")


def apply_shift(batch: torch.Tensor, shifts: torch.Tensor, max_shift: int) -> torch.Tensor:
    """Shift each image by (dy, dx) pixels via replicate padding and cropping.

    ``shifts`` is (B, 2) integer with entries in [-max_shift, max_shift];
    positive values move content down/right.
    """
    if max_shift == 0:
        return batch
    b, _, h, w = batch.shape
    padded = F.pad(batch, (max_shift,) * 4, mode="replicate")
    corner = max_shift - shifts  # crop corner in padded coordinates
    rows = corner[:, 0, None] + torch.arange(h, device=batch.device)
    cols = corner[:, 1, None] + torch.arange(w, device=batch.device)
    out = padded[torch.arange(b)[:, None, None], :, rows[:, :, None], cols[:, None, :]]
    return out.permute(0, 3, 1, 2).contiguous()


def random_shift(batch: torch.Tensor, rng: torch.Generator, max_shift: int) -> torch.Tensor:
    """Randomly shift each image by up to ``max_shift`` pixels per axis."""
    if max_shift == 0:
        return batch
    shifts = torch.randint(-max_shift, max_shift + 1, (batch.shape[0], 2), generator=rng)
    return apply_shift(batch, shifts, max_shift)


def apply_intensity(batch: torch.Tensor, noise: torch.Tensor, scale: float) -> torch.Tensor:
    """Scale each image by 1 + scale * clip(noise, -2, 2), clamped to [0, 1]."""
    mult = 1.0 + scale * noise.clamp(-2.0, 2.0)
    return (batch * mult.view(-1, 1, 1, 1)).clamp(0.0, 1.0)


def intensity_jitter(batch: torch.Tensor, rng: torch.Generator, scale: float) -> torch.Tensor:
    if scale == 0:
        return batch
    noise = torch.randn(batch.shape[0], generator=rng, dtype=batch.dtype)
    return apply_intensity(batch, noise, scale)


def _augment(batch: torch.Tensor, rng: torch.Generator, spec: AugmentationSpec) -> torch.Tensor:
    return intensity_jitter(random_shift(batch, rng, spec.max_shift), rng, spec.intensity_scale)


def augment_pair(
    obs: torch.Tensor,
    next_obs: torch.Tensor,
    rng: torch.Generator,
    spec: AugmentationSpec,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Apply independently drawn transformations to ``obs`` and ``next_obs``.

    When the spec is disabled both batches pass through unchanged. The two
    batches use separate child generators seeded from ``rng`` so their draws
    come from distinct streams.
    """
    if not spec.enabled:
        return obs, next_obs
    seeds = torch.randint(0, 2**62, (2,), generator=rng)
    rng_a = torch.Generator().manual_seed(int(seeds[0]))
    rng_b = torch.Generator().manual_seed(int(seeds[1]))
    return _augment(obs, rng_a, spec), _augment(next_obs, rng_b, spec)
