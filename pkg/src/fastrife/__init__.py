"""Frame interpolation with analytical optical flow (Gunnar-Farnebäck dense or
Shi-Tomasi + Lucas-Kanade sparse) feeding backward warping and fusion."""

from .flowfield import DenseFlow, read_flo, write_flo
from .fusion import FusionConfig
from .gf import GFParams, estimate_flow_gf
from .image import Image, load_image, save_image
from .lk import LKParams, ShiTomasiParams, estimate_flow_lk
from .metrics import interpolation_error, psnr, ssim
from .pipeline import PipelineConfig, interpolate, interpolate_many

__all__ = [
    "DenseFlow", "FusionConfig", "GFParams", "Image", "LKParams", "PipelineConfig",
    "ShiTomasiParams", "estimate_flow_gf", "estimate_flow_lk", "interpolate",
    "interpolate_many", "interpolation_error", "load_image", "psnr", "read_flo",
    "save_image", "ssim", "write_flo",
]
__version__ = "0.1.0"
