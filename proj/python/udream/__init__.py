"""Python access to the udream C++ core.

Complex images are complex128 arrays of shape (H, W). Masks are float arrays of
whole rows of zeros and ones.
"""

from ._udream import (
    FormatError,
    adjoint,
    add_noise,
    cartesian_mask,
    fft2c,
    forward,
    ifft2c,
    phantom,
    psnr,
    random_field,
    run_cli,
    ssim,
    tv_reconstruct,
    warp,
)

__all__ = [
    "FormatError",
    "adjoint",
    "add_noise",
    "cartesian_mask",
    "fft2c",
    "forward",
    "ifft2c",
    "phantom",
    "psnr",
    "random_field",
    "run_cli",
    "ssim",
    "tv_reconstruct",
    "warp",
]
