"""Physics-based degradation, expert routing and evaluation for native-space MRI enhancement."""

__version__ = "0.1.0"

from .volume import AcquisitionDescriptor, Reorientation, Volume, VolumeError, load_nifti, save_nifti  # noqa: E402
from .routing import BinCoord, ExpertGrid, curriculum, route  # noqa: E402

__all__ = [
    "__version__",
    "Volume",
    "VolumeError",
    "AcquisitionDescriptor",
    "Reorientation",
    "load_nifti",
    "save_nifti",
    "BinCoord",
    "ExpertGrid",
    "route",
    "curriculum",
]
