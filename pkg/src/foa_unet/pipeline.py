"""Enhancement chains built from the stage modules.

Each function maps a 4-channel mixture Spectrogram to a single-channel
estimate of the target's W channel.
"""

import numpy as np

from foa_unet.beamform import build_beamformers
from foa_unet.masks import apply_mask
from foa_unet.mwf import FilterWeights, apply_filter, gevd_rank1_filter, masked_covariances, mwf_filter


def mask_only(mix, mask):
    """Mask applied to the omnidirectional channel."""
    return apply_mask(mix.channel(0), mask)


def mask_filter(mix, mask, variant="gevd_rank1"):
    """Masked covariances followed by the (GEVD-)MWF."""
    cov = masked_covariances(mix, mask)
    weights = gevd_rank1_filter(cov) if variant == "gevd_rank1" else mwf_filter(cov)
    return apply_filter(mix, weights)


def beamformer_output(mix, target, interferers=()):
    """Pseudo-inverse beamformer steered at the target with nulls on the interferers."""
    b0 = build_beamformers(target, interferers).vectors[0]
    w = np.broadcast_to(b0, (mix.n_bins, mix.n_channels)).copy()
    return apply_filter(mix, FilterWeights(w, "beamformer"))
