"""VGG-16 prefix to SFW1 weight exporter."""

from .export import (ChecksumError, ExportError, ExportManifest, TAP_NAME,
                     VGG_PREFIX, build_sfw1_bytes, export_vgg_prefix,
                     load_checkpoint, sha256_of_file)

__all__ = [
    "ChecksumError", "ExportError", "ExportManifest", "TAP_NAME",
    "VGG_PREFIX", "build_sfw1_bytes", "export_vgg_prefix",
    "load_checkpoint", "sha256_of_file",
]
