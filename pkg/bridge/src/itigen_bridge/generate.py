"""Optional hand-off to an image-generation pipeline.

Everything upstream works with embeddings only; this step is the one
place a diffusion pipeline would be invoked on composed prompts. It is
strictly best-effort: when no pipeline backend is installed, the
hand-off reports itself skipped instead of failing, so embedding-only
installations stay fully functional.

The manifest's ``generation.prompts`` names a JSON file holding a list
of prompt strings, one per population combination.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ManifestError
from .manifest import ExportManifest

__all__ = ["handoff_generate"]


def handoff_generate(manifest: ExportManifest) -> bool:
    """Run generation when a pipeline is available; returns True if it ran."""
    if not manifest.generation:
        raise ManifestError("manifest declares no 'generation' section")
    for key in ("pipeline", "prompts"):
        if key not in manifest.generation:
            raise ManifestError(f"generation section is missing {key!r}")
    if manifest.generated_out is None:
        raise ManifestError("manifest outputs must name a 'generated' directory")
    try:
        import diffusers
    except ImportError:
        print(
            "generation skipped: no diffusion pipeline backend is installed "
            "(install the 'diffusers' package to enable this step)"
        )
        return False

    prompts_path = Path(manifest.generation["prompts"])
    if not prompts_path.is_absolute():
        prompts_path = manifest.base_dir / prompts_path
    prompts = json.loads(prompts_path.read_text())
    if not isinstance(prompts, list) or not all(
        isinstance(p, str) for p in prompts
    ):
        raise ManifestError(f"{prompts_path}: expected a JSON list of strings")

    pipeline = diffusers.DiffusionPipeline.from_pretrained(
        manifest.generation["pipeline"]
    )
    manifest.generated_out.mkdir(parents=True, exist_ok=True)
    per = int(manifest.generation.get("per_combination", 1))
    for index, prompt in enumerate(prompts):
        for copy in range(per):
            image = pipeline(prompt).images[0]
            image.save(manifest.generated_out / f"{index:05d}_{copy:02d}.png")
    return True
