"""Command-line entry points.

Subcommands:
    corpus generate | corrupt | validate
    attr encode
    denoise
    train
    eval score | ablation | grid | plot
    audit
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np


def _cmd_corpus(args) -> int:
    from . import corpus

    if args.corpus_cmd == "generate":
        spec = corpus.ShapeSpec(num_classes=args.classes)
        manifests = corpus.generate_synthetic_dataset(
            spec, args.per_class, args.seed, args.root
        )
        for split, m in manifests.items():
            print(f"{split}: {m.sample_count} samples, classes {m.class_ids}")
    elif args.corpus_cmd == "corrupt":
        corpus.corrupt_attributes(args.root, args.out, args.flip_rate, args.seed)
        print(f"corrupted copy written to {args.out}")
    elif args.corpus_cmd == "validate":
        sizes = corpus.validate_dataset(args.root)
        for split, count in sizes.items():
            print(f"{split}: {count} samples ok")
    return 0


def _cmd_attr(args) -> int:
    from .attr_encoder import AttributeEncoder, load_encoder, tokenize_attributes

    bits = np.array([int(ch) for ch in args.attrs], dtype=np.int8)
    tokens = tokenize_attributes(bits)
    if args.checkpoint:
        encoder = load_encoder(args.checkpoint)
    else:
        import torch

        torch.manual_seed(args.seed)
        encoder = AttributeEncoder(len(bits))
    emb = encoder.encode(tokens)
    print("tokens", " ".join(str(t) for t in emb.token_ids))
    print("global", " ".join(f"{v:.6f}" for v in emb.global_vec.tolist()))
    for t, row in zip(emb.token_ids, emb.local_mat):
        print(f"local[{t}]", " ".join(f"{v:.6f}" for v in row.tolist()))
    return 0


def _cmd_denoise(args) -> int:
    from . import attr_denoise, corpus

    samples, manifest = corpus.load_dataset(args.root, "train")
    images = np.stack([s.image for s in samples])
    masks = np.stack([s.mask for s in samples])
    table = attr_denoise.factor_statistics(images, masks, [s.sample_id for s in samples])
    labels = corpus.label_matrix(samples)
    params = attr_denoise.DenoiseParams(seed=args.seed)
    corrected, report = attr_denoise.denoise_labels(table, labels, params)

    out = Path(args.out)
    out_dir = out / "train"
    out_dir.mkdir(parents=True, exist_ok=True)
    src = Path(args.root) / "train"
    for i, s in enumerate(samples):
        for suffix in (".png", ".mask.png"):
            (out_dir / f"{s.sample_id}{suffix}").write_bytes(
                (src / f"{s.sample_id}{suffix}").read_bytes()
            )
        (out_dir / f"{s.sample_id}.attr.txt").write_text(
            " ".join(str(int(b)) for b in corrected[i]) + "\n"
        )
    corpus.write_manifest(manifest, out_dir / "manifest.txt")
    test_manifest = Path(args.root) / "test" / "manifest.txt"
    if test_manifest.is_file():
        (out / "test").mkdir(exist_ok=True)
        for p in (Path(args.root) / "test").iterdir():
            (out / "test" / p.name).write_bytes(p.read_bytes())
    report_path = Path(args.report)
    attr_denoise.write_report(report, report_path, report_path.with_suffix(".csv"))
    print(f"total flips: {report.total_flips}; cleaned dataset at {out}")
    return 0


def _cmd_train(args) -> int:
    from .trainer import TrainConfig, train

    config = TrainConfig.from_file(args.config)
    result = train(config, resume=args.resume)
    print(f"checkpoint: {result['checkpoint']}")
    print(f"metrics: {result['metrics']}")
    return 0


def _cmd_eval(args) -> int:
    from . import evalkit

    if args.eval_cmd == "score":
        import torch

        from .corpus import image_to_unit

        from PIL import Image

        paths = sorted(Path(args.images).glob("*.png"))
        images = np.stack(
            [image_to_unit(np.asarray(Image.open(p).convert("RGB"))) for p in paths]
        )
        blob = torch.load(args.scorer, map_location="cpu", weights_only=True)
        scorer = evalkit.ScorerNet(blob["num_classes"])
        scorer.load_state_dict(blob["state"])
        result = evalkit.inception_score(images, scorer, n_splits=args.splits)
        print(f"IS {result.mean:.4f} +- {result.std:.4f} ({result.n_images} images)")
    elif args.eval_cmd == "ablation":
        arms = {}
        for entry in args.arms:
            name, _, ckpt = entry.partition("=")
            arms[name] = ckpt
        rows = evalkit.run_ablation(arms, args.root, args.out_csv, args.out_png)
        for r in rows:
            print(f"{r['arm']}: IS {r['is_mean']:.4f} +- {r['is_std']:.4f}")
    elif args.eval_cmd == "grid":
        from PIL import Image

        from .corpus import image_to_unit

        paths = sorted(Path(args.images).glob("*.png"))
        images = np.stack(
            [image_to_unit(np.asarray(Image.open(p).convert("RGB"))) for p in paths]
        )
        evalkit.emit_grid(images, args.rows, args.cols, args.out)
        print(f"grid written to {args.out}")
    elif args.eval_cmd == "plot":
        names = evalkit.emit_metric_plot(args.metrics, args.out)
        print(f"plotted {len(names)} series to {args.out}")
    return 0


def _cmd_audit(args) -> int:
    from .attr_report import audit_attribute

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sheet = audit_attribute(
        args.before,
        args.after,
        args.attr,
        grid_path=out / f"attr_{args.attr:03d}.png",
        csv_path=out / f"attr_{args.attr:03d}.csv",
    )
    print(
        f"attribute {sheet.attribute_id}: {sheet.flips} flips, "
        f"{len(sheet.holders_before)} -> {len(sheet.holders_after)} holders"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amgan")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_corpus = sub.add_parser("corpus", help="synthetic corpus management")
    corpus_sub = p_corpus.add_subparsers(dest="corpus_cmd", required=True)
    p_gen = corpus_sub.add_parser("generate")
    p_gen.add_argument("--root", required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--classes", type=int, default=10)
    p_gen.add_argument("--per-class", type=int, default=20)
    p_cor = corpus_sub.add_parser("corrupt")
    p_cor.add_argument("--root", required=True)
    p_cor.add_argument("--out", required=True)
    p_cor.add_argument("--flip-rate", type=float, required=True)
    p_cor.add_argument("--seed", type=int, default=0)
    p_val = corpus_sub.add_parser("validate")
    p_val.add_argument("--root", required=True)
    p_corpus.set_defaults(func=_cmd_corpus)

    p_attr = sub.add_parser("attr", help="attribute encoder inspection")
    attr_sub = p_attr.add_subparsers(dest="attr_cmd", required=True)
    p_enc = attr_sub.add_parser("encode")
    p_enc.add_argument("--attrs", required=True, help="bitstring, e.g. 0100100...")
    p_enc.add_argument("--checkpoint", default=None)
    p_enc.add_argument("--seed", type=int, default=0)
    p_attr.set_defaults(func=_cmd_attr)

    p_den = sub.add_parser("denoise", help="attribute label denoising")
    p_den.add_argument("--root", required=True)
    p_den.add_argument("--out", required=True)
    p_den.add_argument("--report", required=True)
    p_den.add_argument("--seed", type=int, default=0)
    p_den.set_defaults(func=_cmd_denoise)

    p_train = sub.add_parser("train", help="adversarial training")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--resume", default=None)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="scoring and reporting")
    eval_sub = p_eval.add_subparsers(dest="eval_cmd", required=True)
    p_score = eval_sub.add_parser("score")
    p_score.add_argument("--images", required=True)
    p_score.add_argument("--scorer", required=True)
    p_score.add_argument("--splits", type=int, default=10)
    p_abl = eval_sub.add_parser("ablation")
    p_abl.add_argument("--root", required=True)
    p_abl.add_argument("--arms", nargs="+", required=True, help="name=checkpoint pairs")
    p_abl.add_argument("--out-csv", required=True)
    p_abl.add_argument("--out-png", default=None)
    p_grid = eval_sub.add_parser("grid")
    p_grid.add_argument("--images", required=True)
    p_grid.add_argument("--rows", type=int, required=True)
    p_grid.add_argument("--cols", type=int, required=True)
    p_grid.add_argument("--out", required=True)
    p_plot = eval_sub.add_parser("plot")
    p_plot.add_argument("--metrics", required=True)
    p_plot.add_argument("--out", required=True)
    p_eval.set_defaults(func=_cmd_eval)

    p_audit = sub.add_parser("audit", help="before/after label audit")
    p_audit.add_argument("--before", required=True)
    p_audit.add_argument("--after", required=True)
    p_audit.add_argument("--attr", type=int, required=True)
    p_audit.add_argument("--out", default="audit_out")
    p_audit.set_defaults(func=_cmd_audit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
