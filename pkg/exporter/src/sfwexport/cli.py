"""Command-line wrapper around the exporter.

Exit codes mirror the consumer tool: 0 success, 1 export failure,
2 usage error.
"""

import argparse
import sys

from .export import ExportError, export_vgg_prefix


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfwexport",
        description="Export the VGG-16 prefix (through relu3_1) to SFW1.")
    parser.add_argument("--out", required=True, help="output SFW1 path")
    parser.add_argument("--checkpoint",
                        help="local .pth state dict; omit to use the "
                             "torchvision model zoo")
    parser.add_argument("--checkpoint-sha256",
                        help="expected SHA-256 of the checkpoint file")
    parser.add_argument("--manifest",
                        help="manifest JSON path (default: OUT.manifest.json)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.checkpoint_sha256 and not args.checkpoint:
        print("error: --checkpoint-sha256 requires --checkpoint",
              file=sys.stderr)
        return 2
    try:
        manifest = export_vgg_prefix(
            args.out, checkpoint=args.checkpoint,
            expected_sha256=args.checkpoint_sha256,
            manifest_path=args.manifest)
    except ExportError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # zoo fetch can fail in many library-specific ways
        print(f"error: could not obtain pretrained weights: {e}",
              file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    print(f"source: {manifest.source}")
    print(f"layers: {', '.join(manifest.layers)} (tap {manifest.tap})")
    print(f"sha256: {manifest.sha256}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
