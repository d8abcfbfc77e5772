"""Command-line interface.

Subcommands::

    itigen train    --config <path> --out <checkpoint.itb> [--seed N]
    itigen compose  --checkpoint <path> --template <path> --out <prompts.itb>
    itigen sample   --checkpoint <path> --n N [--dist <path>] --out <plan.csv>
    itigen eval     --checkpoint <path> --anchors <path> [--sigma F]
                    --report <path.json> [--ascii-hist]
    itigen inspect  --bundle <path>
    itigen sweep-q  --config <path> --q 1..8 --report <path.csv>

Exit codes: 0 success, 2 configuration or schema error, 3 data error
(corrupt bundles, degenerate geometry, missing files), 4 numerical error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .attributes import parameter_count, transplant
from .bundle import read_bundle, write_bundle
from .config import (
    load_anchors,
    load_baseline_rows,
    load_encoder,
    load_reference_source,
    load_run_config,
    load_template,
    template_from_token_ids,
)
from .errors import SchemaError, ToolchainError
from .sampling import SamplingPlan, evaluate, plan_samples, prompt_anchors
from .training import Checkpoint, train

__all__ = ["main"]


def _load_run_inputs(cfg):
    encoder = load_encoder(cfg.encoder_kind, cfg.encoder_path)
    if cfg.template_path is not None:
        template = load_template(cfg.template_path)
    else:
        template = template_from_token_ids(encoder, cfg.template_token_ids)
    references = {
        name: load_reference_source(path, expect_attribute=name)
        for name, path in cfg.reference_paths.items()
    }
    baselines = {
        name: load_baseline_rows(path) for name, path in cfg.baseline_paths.items()
    }
    return template, encoder, references, baselines


def _write_losses_csv(checkpoint: Checkpoint, out_path: Path) -> Path:
    csv_path = Path(str(out_path) + ".losses.csv")
    csv_path.write_text("\n".join(checkpoint.history_csv_rows()) + "\n")
    return csv_path


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    train_cfg = cfg.train if args.seed is None else replace(cfg.train, seed=args.seed)
    template, encoder, references, baselines = _load_run_inputs(cfg)
    checkpoint = train(
        train_cfg, encoder, cfg.attribute_set, references, template,
        baseline_references=baselines,
    )
    checkpoint.save(args.out)
    csv_path = _write_losses_csv(checkpoint, args.out)
    print(f"trained {checkpoint.steps} iterations over "
          f"{len(cfg.attribute_set)} attribute(s)")
    print(f"checkpoint: {args.out}")
    print(f"loss history: {csv_path}")
    return 0


def _cmd_compose(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    template = load_template(args.template)
    prompt_set = transplant(
        checkpoint.table, template, mode=checkpoint.config.aggregation
    )
    tensors = {
        f"prompts/{i:05d}": prompt.matrix
        for i, prompt in enumerate(prompt_set)
    }
    metadata = {
        "format": "composed-prompts",
        "version": 1,
        "aggregation": checkpoint.config.aggregation,
        "template_length": template.length,
        "token_span": prompt_set.prompts[0].token_span,
        "labels": [p.label for p in prompt_set],
        "combos": [list(c) for c in prompt_set.combos],
        "template_fingerprint": template.fingerprint(),
        "attribute_fingerprint": checkpoint.attribute_set.fingerprint(),
    }
    write_bundle(args.out, tensors, metadata)
    print(f"composed {len(prompt_set)} prompts -> {args.out}")
    return 0


def _cmd_sample(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    attribute_set = checkpoint.attribute_set
    combos = list(attribute_set.combinations())
    distribution = None
    seed = checkpoint.config.seed
    method = "exact_quota"
    if args.dist:
        raw = json.loads(Path(args.dist).read_text())
        if isinstance(raw, list):
            distribution = tuple(float(p) for p in raw)
        elif isinstance(raw, dict):
            if "distribution" in raw:
                distribution = tuple(float(p) for p in raw["distribution"])
            seed = int(raw.get("seed", seed))
            method = raw.get("method", method)
        else:
            raise SchemaError(
                f"{args.dist}: expected a JSON list or object, got {type(raw).__name__}"
            )
    plan = SamplingPlan(
        total=args.n, distribution=distribution, seed=seed, method=method
    )
    samples = plan_samples(plan, combos)
    header = ["sample"] + [spec.name for spec in attribute_set]
    lines = [",".join(header)]
    for idx, combo in enumerate(samples):
        names = [
            spec.categories[k] for spec, k in zip(attribute_set, combo)
        ]
        lines.append(",".join([str(idx)] + names))
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"planned {len(samples)} samples over {len(combos)} combinations "
          f"({plan.method}) -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    anchors = load_anchors(args.anchors)
    report = evaluate(checkpoint, anchors, sigma=args.sigma)
    report_path = Path(args.report)
    report_path.write_text(report.to_json() + "\n")
    hist_path = report_path.with_suffix(".hist.csv")
    hist_path.write_text(report.histogram_csv())
    print(report.table_text())
    if args.ascii_hist:
        print(report.ascii_histogram())
    print(f"evaluated {report.total} proxies (sigma={report.sigma}); "
          f"joint KL {report.joint_kl:.6f} nats -> {args.report} "
          f"(histograms: {hist_path.name})")
    return 0


def _cmd_inspect(args) -> int:
    bundle = read_bundle(args.bundle)
    meta = bundle.metadata
    print(f"bundle: {args.bundle}")
    print(f"format: {meta.get('format', '<none>')}  "
          f"default dtype: {bundle.default_dtype}  integrity: crc ok")
    if bundle.tensors:
        name_width = max(len(n) for n in bundle.tensors)
        total = 0
        for name in sorted(bundle.tensors):
            arr = bundle.tensors[name]
            total += arr.nbytes
            shape = "x".join(str(s) for s in arr.shape) or "scalar"
            print(f"  {name.ljust(name_width)}  {shape:>12}  {arr.dtype.name:>8}  "
                  f"{arr.nbytes:>10} bytes")
        print(f"  {len(bundle.tensors)} tensors, {total} payload bytes")
    else:
        print("  no tensors")
    keys = [k for k in sorted(meta) if k not in ("format",)]
    if keys:
        print("metadata keys: " + ", ".join(keys))
    return 0


def _parse_q_range(text: str) -> list[int]:
    values: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            values.extend(range(int(lo), int(hi) + 1))
        elif part:
            values.append(int(part))
    if not values or any(q < 1 for q in values):
        raise SchemaError(f"invalid token-length range {text!r}")
    return values


def _cmd_sweep_q(args) -> int:
    cfg = load_run_config(args.config)
    template, encoder, references, baselines = _load_run_inputs(cfg)
    sigma = float(cfg.evaluation.get("sigma", 0.05))
    mode = cfg.evaluation.get("mode", "centered")
    lines = ["token_length,parameters,final_direction_loss,"
             "final_semantic_loss,joint_kl"]
    for q in _parse_q_range(args.q):
        train_cfg = replace(cfg.train, token_length=q)
        checkpoint = train(
            train_cfg, encoder, cfg.attribute_set, references, template,
            baseline_references=baselines,
        )
        prompt_set = checkpoint.prompt_set()
        anchors = prompt_anchors(prompt_set, encoder)
        plan = cfg.sampling_plan(
            len(prompt_set), default_total=100 * len(prompt_set)
        )
        report = evaluate(
            checkpoint, anchors, plan=plan, sigma=sigma, mode=mode
        )
        params = parameter_count(
            cfg.attribute_set, q, encoder.embed_dim
        )
        tail = checkpoint.history[
            checkpoint.history[:, 0] >= checkpoint.steps - len(cfg.attribute_set)
        ]
        final_dir = float(tail[:, 4].mean()) if tail.size else float("nan")
        final_sem = float(tail[:, 5].mean()) if tail.size else float("nan")
        lines.append(
            f"{q},{params},{final_dir!r},{final_sem!r},{report.joint_kl!r}"
        )
        print(f"q={q}: {params} parameters, joint KL {report.joint_kl:.6f}")
    Path(args.report).write_text("\n".join(lines) + "\n")
    print(f"sweep report -> {args.report}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="itigen",
        description="Learn inclusive prompt tokens and audit sample plans.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="learn a token table from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("compose", help="compose prompts under a new template")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compose)

    p = sub.add_parser("sample", help="write a category sampling plan")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dist", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("eval", help="audit proxy samples against the plan")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--report", required=True)
    p.add_argument("--ascii-hist", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("inspect", help="describe a bundle file")
    p.add_argument("--bundle", required=True)
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("sweep-q", help="train and audit across token lengths")
    p.add_argument("--config", required=True)
    p.add_argument("--q", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_sweep_q)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ToolchainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON input ({exc})", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
