"""Error taxonomy for the export bridge.

Exit codes follow the toolchain convention: 2 for configuration problems
(bad manifests, incompatible model architectures), 3 for data problems
(missing or unreadable inputs).
"""

__all__ = [
    "BridgeError",
    "ManifestError",
    "UnsupportedModelError",
    "ExportDataError",
]


class BridgeError(Exception):
    """Base class for every failure the exporter raises on purpose."""

    exit_code = 1


class ManifestError(BridgeError):
    """The manifest document is malformed or inconsistent."""

    exit_code = 2


class UnsupportedModelError(BridgeError):
    """The named checkpoint is not a compatible text or vision tower."""

    exit_code = 2


class ExportDataError(BridgeError):
    """Input data is missing or unusable (empty categories, bad images)."""

    exit_code = 3
