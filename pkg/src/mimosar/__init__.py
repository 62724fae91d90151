"""Near-field virtual MIMO-SAR imaging with FMCW radar."""
from . import calib, fileio, geometry, imaging, rangeproc, wavesim
from .calib import CalibrationProfile, apply_calibration, calibrate, residual_weights
from .config import load_config
from .errors import MimoSarError
from .geometry import builtin_layout, dedupe_elements, scan_positions, virtual_elements
from .imaging import ImageVolume, bp_reconstruct, reconstruct, rma_reconstruct
from .kernels import BACKEND
from .rangeproc import RangeProfileSet, range_align, range_compress
from .wavesim import ChannelError, ChirpConfig, DataCube, Scene, simulate_beat

__version__ = "0.1.0"
