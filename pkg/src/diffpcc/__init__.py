"""Point-cloud geometry compression with a chunked vector-quantized latent and a diffusion decoder."""

from .codec import Bitstream, bpp, compress, decompress
from .diffusion import build_schedule, decode
from .geometry import PointCloud, gen_shape, load_point_cloud, normalize
from .metrics import chamfer, emd, evaluate, psnr_p2plane

__version__ = "0.1.0"

__all__ = [
    "Bitstream",
    "PointCloud",
    "bpp",
    "build_schedule",
    "chamfer",
    "compress",
    "decode",
    "decompress",
    "emd",
    "evaluate",
    "gen_shape",
    "load_point_cloud",
    "normalize",
    "psnr_p2plane",
]
