"""Checkpoint and dataset exporter for the portable .bnm/.bnd containers."""

from .convert import (ExportManifest, VerificationError, export_dataset,
                      export_model, read_checkpoint, reference_forward)
from .idx import IdxFormatError, read_idx, write_idx
from .ir import LayerIR, UnsupportedLayerError

__version__ = "0.1.0"
