"""Command line entry point: ``itigen-export <subcommand> --manifest <path>``.

Subcommands
-----------
encoder   export text-tower weights plus a fixture bundle of reference
          (token ids, embedding) pairs
images    embed every manifest-declared reference image directory
anchors   embed category anchor texts
generate  optional diffusion hand-off; exits cleanly when no backend exists

Exit codes: 0 success (including a skipped generate), 2 manifest or
model-compatibility problems, 3 unreadable or degenerate input data
(missing files included), 1 anything else.
"""

from __future__ import annotations

import argparse
import sys

from .anchors import export_anchors
from .clip_export import export_text_encoder
from .errors import BridgeError
from .generate import handoff_generate
from .images import export_image_embeddings
from .manifest import load_manifest

__all__ = ["main"]


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="itigen-export",
        description="Export CLIP weights, reference embeddings, and anchors "
        "to self-describing tensor bundles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("encoder", "export text-encoder weights and parity fixtures"),
        ("images", "export reference-image embeddings per attribute"),
        ("anchors", "export category anchor embeddings"),
        ("generate", "run the optional image-generation hand-off"),
    ]:
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument(
            "--manifest", required=True, help="path to the export manifest JSON"
        )
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        manifest = load_manifest(args.manifest)
        if args.command == "encoder":
            encoder, fixtures = export_text_encoder(manifest)
            print(f"wrote {encoder}")
            print(f"wrote {fixtures}")
        elif args.command == "images":
            for attribute, path in export_image_embeddings(manifest).items():
                print(f"wrote {path} ({attribute})")
        elif args.command == "anchors":
            print(f"wrote {export_anchors(manifest)}")
        elif args.command == "generate":
            if handoff_generate(manifest):
                print(f"wrote images under {manifest.generated_out}")
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
