"""Occlusion-mask blending and the composite interpolation loss."""

from . import autodiff as ad

ALPHA = 1e-3
BETA = 2e-3
EPS = 1e-6


def blend(warped_prev, warped_next, mask_prev, mask_next):
    """M_prev * warped_prev + M_next * warped_next, masks broadcast over channels."""
    return ad.add(ad.mul_mask(warped_prev, mask_prev), ad.mul_mask(warped_next, mask_next))


def memc_loss(final, blended, gt, mask_prev, mask_next, alpha=ALPHA, beta=BETA, eps=EPS):
    """Charbonnier loss on the final and blended frames plus a mask-sum penalty.

    Each penalty sums over every element of its tensor.
    """
    if not isinstance(gt, ad.Node):
        gt = ad.constant(gt)
    final_term = ad.charbonnier_sum(ad.sub(final, gt), eps)
    blend_term = ad.charbonnier_sum(ad.sub(blended, gt), eps)
    mask_term = ad.charbonnier_sum(ad.add_const(ad.add(mask_prev, mask_next), -1.0), eps)
    return ad.add(final_term, ad.add(ad.scale(blend_term, alpha), ad.scale(mask_term, beta)))
