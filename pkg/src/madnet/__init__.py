"""Multi-scale dual-domain image denoising on a small numpy autograd engine."""

__version__ = "0.1.0"

from .model import MADNet, ModelConfig, build_model  # noqa: E402

__all__ = ["MADNet", "ModelConfig", "build_model", "__version__"]
