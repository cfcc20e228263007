"""Hybrid-camera motion deblurring: a long-exposure wide image is deblurred
with per-pixel kernels traced from a simultaneous short-exposure
ultra-wide burst, then refined by merging the aligned burst."""

from .imaging import Homography, Image, downsample_avg, psnr, ssim, warp_image

__version__ = "0.1.0"

__all__ = ["Homography", "Image", "downsample_avg", "psnr", "ssim", "warp_image"]
