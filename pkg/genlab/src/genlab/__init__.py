"""Reference generation and training recipes.

Everything this package emits (image directories with sidecar metadata,
mask PNGs, prediction CSVs, epoch logs) follows the dermaudit toolkit's
file formats; everything it consumes (split manifests) comes from that
toolkit's CSV schema. The two packages share files, never imports.
"""

__version__ = "0.1.0"
