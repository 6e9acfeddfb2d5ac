"""Deterministic inpainting of irregular holes in grayscale images.

Pipeline: harmonic coarse fill of the hole, feature-space patch swapping
against the surrounding context, then reconstruction by minimizing a
feature-matching energy with a left/right symmetry prior. Ships with the
evaluation stack (masked L1, SSIM, PSNR, mutual information), an irregular
mask generator, and a 2-D demons registration harness.
"""

__version__ = "0.1.0"

from .coarse import CoarseFillParams, diffusion_fill
from .core import read_image_any, read_mask_any, read_tensor, write_tensor
from .featnet import default_network, forward, load_network, write_network
from .inversion import InversionConfig, invert
from .maskgen import MaskGenParams, random_irregular_mask
from .metrics import compute_report, mean_l1, mutual_information, psnr, ssim
from .patchswap import SwapParams, downsample_mask, swap_fast, swap_naive
from .register2d import DemonsParams, compare_registration, demons_register, warp
from .symmetry import symmetry_grad, symmetry_loss
