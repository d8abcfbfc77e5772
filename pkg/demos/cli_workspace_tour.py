"""Tour of the command-line workflow on a generated workspace.

Builds a complete set of input files in ./demo_workspace (a run config,
an encoder bundle, a template bundle, and reference bundles for two
attributes), then drives every subcommand the way a shell user would:

    itigen train    -> checkpoint + loss history CSV
    itigen compose  -> all six prompt matrices under the template
    itigen sample   -> a balanced 60-row category plan
    itigen eval     -> discrepancy report (JSON + histogram CSV)
    itigen inspect  -> a look inside the checkpoint file
    itigen sweep-q  -> token-length comparison table

Run:  python3 demos/cli_workspace_tour.py
"""

import json
import shutil
from pathlib import Path

import numpy as np

import itigen
from itigen.cli import main as itigen_main
from itigen.config import (
    write_reference_bundle,
    write_template_bundle,
    write_toy_encoder_bundle,
    write_anchors_bundle,
)
from itigen.sampling import prompt_anchors

WORKSPACE = Path(__file__).parent / "demo_workspace"

ATTRIBUTES = {
    "eyewear": ("glasses", "no_glasses"),
    "age_group": ("young", "middle", "older"),
}


def build_workspace():
    if WORKSPACE.exists():
        shutil.rmtree(WORKSPACE)
    WORKSPACE.mkdir()
    rng = np.random.default_rng(2)
    dim = 16
    basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))

    write_toy_encoder_bundle(
        WORKSPACE / "encoder.itb", np.linalg.qr(rng.normal(size=(dim, dim)))[0]
    )
    write_template_bundle(
        WORKSPACE / "template.itb",
        0.6 * basis[:, 10:14].T,
        source_text="a headshot of a person",
    )
    col = 0
    for name, categories in ATTRIBUTES.items():
        rows = {}
        for cat in categories:
            noisy = basis[:, col] + 0.05 * rng.normal(size=(25, dim))
            rows[cat] = noisy / np.linalg.norm(noisy, axis=1, keepdims=True)
            col += 1
        write_reference_bundle(
            WORKSPACE / f"refs_{name}.itb", rows, attribute=name
        )

    config = {
        "attributes": [
            {"name": name, "categories": list(cats)}
            for name, cats in ATTRIBUTES.items()
        ],
        "template": {"bundle": "template.itb"},
        "encoder": {"kind": "toy", "bundle": "encoder.itb"},
        "references": {
            name: f"refs_{name}.itb" for name in ATTRIBUTES
        },
        "train": {"epochs": 20, "seed": 2},
        "evaluation": {"sigma": 0.05, "mode": "centered"},
    }
    (WORKSPACE / "run.json").write_text(json.dumps(config, indent=2) + "\n")
    print(f"workspace ready: {sorted(p.name for p in WORKSPACE.iterdir())}")


def run(argv):
    print(f"\n$ itigen {' '.join(argv)}")
    code = itigen_main(argv)
    if code != 0:
        raise SystemExit(f"command failed with exit code {code}")


def main():
    print("== building input bundles ==")
    build_workspace()
    ws = str(WORKSPACE)

    run(["train", "--config", f"{ws}/run.json", "--out", f"{ws}/model.itb"])
    run(["compose", "--checkpoint", f"{ws}/model.itb",
         "--template", f"{ws}/template.itb", "--out", f"{ws}/prompts.itb"])
    run(["sample", "--checkpoint", f"{ws}/model.itb", "--n", "60",
         "--out", f"{ws}/plan.csv"])
    print("first rows of the plan:")
    for line in (WORKSPACE / "plan.csv").read_text().splitlines()[:4]:
        print(f"  {line}")

    checkpoint = itigen.Checkpoint.load(WORKSPACE / "model.itb")
    write_anchors_bundle(
        WORKSPACE / "anchors.itb",
        prompt_anchors(checkpoint.prompt_set(), checkpoint.require_encoder()),
    )
    run(["eval", "--checkpoint", f"{ws}/model.itb",
         "--anchors", f"{ws}/anchors.itb", "--sigma", "0.05",
         "--report", f"{ws}/report.json", "--ascii-hist"])
    run(["inspect", "--bundle", f"{ws}/model.itb"])
    run(["sweep-q", "--config", f"{ws}/run.json", "--q", "1..3",
         "--report", f"{ws}/sweep.csv"])
    print("sweep table:")
    for line in (WORKSPACE / "sweep.csv").read_text().splitlines():
        print(f"  {line}")


if __name__ == "__main__":
    main()
