"""Command-line front end.

Four subcommands cover the whole workflow:

  bend train          optimize a bending module from a JSON config
  bend generate       render a seeded gallery from a checkpoint
  bend compare        train two variants on shared seeds, report side by side
  bend inspect-layers list the tappable layers of a generator

Exit codes: 0 success, 2 configuration/user error, 3 runtime or model error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch

from . import __version__
from .bending import BendingConfig, BendingModule, make_bm
from .errors import (
    BendError,
    CheckpointError,
    CheckpointVersionError,
    ConfigError,
    InvalidLayerError,
)
from .generator import (
    LayeredGenerator,
    build_toy_generator,
    forward_with_injection,
    list_layers,
    load_external_generator,
)
from .images import export_grid, export_png
from .manifest import write_manifest
from .objectives import Embedder, LossConfig, ToyEmbedder, load_external_embedder
from .report import (
    save_loss_curve,
    save_similarity_figure,
    variant_similarity,
    write_loss_history,
    write_similarity_csv,
)
from .training import (
    TrainConfig,
    load_checkpoint,
    load_run_metadata,
    sample_latents,
    save_checkpoint,
    train_bm,
)

# config keys allowed to differ between the two variants of `bend compare`;
# family and loss-kind axes drag their family/loss-specific knobs along.
COMPARE_AXES = frozenset(
    {
        "bending.family",
        "bending.sort_axis",
        "bending.steepness",
        "bending.include_r",
        "train.loss.kind",
        "train.loss.temperature",
    }
)


def _reject_unknown_keys(cls, data: dict, where: str) -> None:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


@dataclass(frozen=True)
class GeneratorSource:
    """Where the frozen generator comes from: built-in toy or external archive."""

    kind: str = "toy"
    seed: int = 0
    layer_channels: tuple[int, ...] = (32, 16)
    latent_dim: int = 64
    path: str | None = None
    adapter: str = "butterflygan"

    def validate(self) -> None:
        if self.kind not in ("toy", "external"):
            raise ConfigError(f"generator.kind must be 'toy' or 'external', got {self.kind!r}")
        if self.kind == "external" and not self.path:
            raise ConfigError("generator.kind 'external' requires generator.path")

    def build(self) -> LayeredGenerator:
        self.validate()
        if self.kind == "toy":
            return build_toy_generator(
                seed=self.seed, layer_channels=self.layer_channels, latent_dim=self.latent_dim
            )
        return load_external_generator(self.path, self.adapter)


@dataclass(frozen=True)
class EmbedderSource:
    kind: str = "toy"
    seed: int = 0
    dim: int = 32
    path: str | None = None
    adapter: str | None = None

    def validate(self) -> None:
        if self.kind not in ("toy", "external"):
            raise ConfigError(f"embedder.kind must be 'toy' or 'external', got {self.kind!r}")
        if self.kind == "external" and not (self.path and self.adapter):
            raise ConfigError("embedder.kind 'external' requires embedder.path and embedder.adapter")

    def build(self) -> Embedder:
        self.validate()
        if self.kind == "toy":
            return ToyEmbedder(seed=self.seed, dim=self.dim)
        return load_external_embedder(self.path, self.adapter)


@dataclass(frozen=True)
class BendingSpec:
    """Bending module settings minus the channel count, which is read off the
    tapped layer at run time."""

    family: str
    activation: str = "relu"
    include_r: bool = False
    sort_axis: str | None = None
    steepness: float | None = None
    sin_frequency: float = 1.0
    seed: int | None = None  # None: reuse the training seed

    def to_config(self, channels: int) -> BendingConfig:
        cfg = BendingConfig(
            family=self.family,
            channels=channels,
            activation=self.activation,
            include_r=self.include_r,
            sort_axis=self.sort_axis,
            steepness=self.steepness,
            sin_frequency=self.sin_frequency,
        )
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class RunConfig:
    prompt: str
    output_dir: str
    bending: BendingSpec
    train: TrainConfig
    generator: GeneratorSource = field(default_factory=GeneratorSource)
    embedder: EmbedderSource = field(default_factory=EmbedderSource)

    def to_dict(self) -> dict:
        # JSON round-trip turns tuples into lists, matching the file format
        return json.loads(json.dumps(dataclasses.asdict(self)))


def run_config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be an object, got {type(data).__name__}")
    _reject_unknown_keys(RunConfig, data, "config")
    for key in ("prompt", "output_dir", "bending", "train"):
        if key not in data:
            raise ConfigError(f"config is missing required key {key!r}")
    try:
        gen_data = dict(data.get("generator", {}))
        _reject_unknown_keys(GeneratorSource, gen_data, "generator")
        if "layer_channels" in gen_data:
            gen_data["layer_channels"] = tuple(int(c) for c in gen_data["layer_channels"])
        generator = GeneratorSource(**gen_data)

        emb_data = dict(data.get("embedder", {}))
        _reject_unknown_keys(EmbedderSource, emb_data, "embedder")
        embedder = EmbedderSource(**emb_data)

        bend_data = dict(data["bending"])
        _reject_unknown_keys(BendingSpec, bend_data, "bending")
        bending = BendingSpec(**bend_data)

        train_data = dict(data["train"])
        _reject_unknown_keys(TrainConfig, train_data, "train")
        loss_data = dict(train_data.pop("loss", {}))
        _reject_unknown_keys(LossConfig, loss_data, "train.loss")
        train = TrainConfig(loss=LossConfig(**loss_data), **train_data)
    except TypeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    if not isinstance(data["prompt"], str) or not data["prompt"]:
        raise ConfigError("prompt must be a non-empty string")
    generator.validate()
    embedder.validate()
    train.validate()
    return RunConfig(
        prompt=data["prompt"],
        output_dir=str(data["output_dir"]),
        bending=bending,
        train=train,
        generator=generator,
        embedder=embedder,
    )


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return run_config_from_dict(data)


def parse_seed_spec(text: str) -> list[int]:
    """Seed list syntax: a single integer, `lo..hi` inclusive, or a comma list."""
    text = text.strip()
    try:
        if ".." in text:
            lo_text, hi_text = text.split("..")
            lo, hi = int(lo_text), int(hi_text)
            if hi < lo:
                raise ConfigError(f"seed range {text!r} is empty")
            return list(range(lo, hi + 1))
        if "," in text:
            seeds = [int(part) for part in text.split(",")]
        else:
            seeds = [int(text)]
    except ValueError as exc:
        raise ConfigError(f"cannot parse seed spec {text!r}") from exc
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"seed spec {text!r} contains duplicates")
    return seeds


def _prepare_out_dir(path: Path, force: bool) -> None:
    path.mkdir(parents=True, exist_ok=True)
    if any(path.iterdir()) and not force:
        raise ConfigError(f"output directory {path} is not empty; pass --force to reuse it")


def _resolve_bm(cfg: RunConfig, generator: LayeredGenerator) -> BendingModule:
    if not 1 <= cfg.train.layer_index <= generator.layer_count:
        raise ConfigError(
            f"train.layer_index {cfg.train.layer_index} outside 1..{generator.layer_count}"
        )
    channels = generator.layer_channels[cfg.train.layer_index - 1]
    seed = cfg.train.seed if cfg.bending.seed is None else cfg.bending.seed
    return make_bm(cfg.bending.to_config(channels), seed=seed)


def _train_run(cfg: RunConfig, out_dir: Path) -> dict:
    """Shared body of `train` and each `compare` variant; returns a summary."""
    generator = cfg.generator.build()
    embedder = cfg.embedder.build()
    bm = _resolve_bm(cfg, generator)
    result = train_bm(generator, bm, embedder, cfg.prompt, cfg.train)

    echo = cfg.to_dict()
    with open(out_dir / "config.json", "w", encoding="utf-8") as handle:
        json.dump(echo, handle, indent=2, sort_keys=True)
        handle.write("\n")
    save_checkpoint(bm, cfg.train, out_dir / "checkpoint.npz", extra={"run": echo})
    write_loss_history(result.loss_history, out_dir / "loss_history.csv")
    save_loss_curve(result.loss_history, out_dir / "loss_curve.png")
    summary = {"config": echo, "wall_time": result.wall_time}
    if result.loss_history:
        summary["first_loss"] = result.loss_history[0][1]
        summary["final_loss"] = result.loss_history[-1][1]
    return summary


def _gallery(
    generator: LayeredGenerator, bm: BendingModule, layer_index: int, seeds: Sequence[int]
) -> torch.Tensor:
    """One image per seed, each from latent stream `seed`, stacked [N, 3, H, W]."""
    images = []
    with torch.no_grad():
        for seed in seeds:
            z = sample_latents(seed, batch=1, latent_dim=generator.latent_dim)
            out, _ = forward_with_injection(generator, z, layer_index, bm)
            images.append(out[0])
    return torch.stack(images)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=args.seed))
    out_dir = Path(cfg.output_dir)
    _prepare_out_dir(out_dir, args.force)
    summary = _train_run(cfg, out_dir)
    write_manifest(out_dir, "train", summary["config"], [cfg.train.seed], __version__)
    if "final_loss" in summary:
        print(
            f"trained {cfg.train.iterations} iterations in {summary['wall_time']:.1f}s, "
            f"loss {summary['first_loss']:.6f} -> {summary['final_loss']:.6f}"
        )
    print(f"run directory: {out_dir}")
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    if args.count < 1:
        raise ConfigError(f"--count must be >= 1, got {args.count}")
    bm, train_cfg = load_checkpoint(args.checkpoint)
    run_meta = load_run_metadata(args.checkpoint)
    if "run" not in run_meta:
        raise CheckpointError(
            f"{args.checkpoint}: no run metadata; cannot reconstruct the generator"
        )
    run_cfg = run_config_from_dict(run_meta["run"])
    generator = run_cfg.generator.build()

    out_dir = Path(args.out)
    _prepare_out_dir(out_dir, args.force)
    seeds = list(range(args.first_seed, args.first_seed + args.count))
    images = _gallery(generator, bm, train_cfg.layer_index, seeds)
    for seed, image in zip(seeds, images):
        export_png(image, out_dir / f"sample_{seed}.png")
    columns = math.ceil(math.sqrt(args.count))
    export_grid(images, columns, out_dir / "grid.png")
    config = {
        "checkpoint": str(args.checkpoint),
        "count": args.count,
        "first_seed": args.first_seed,
        "run": run_meta["run"],
    }
    write_manifest(out_dir, "generate", config, seeds, __version__)
    print(f"wrote {len(seeds)} samples and grid.png to {out_dir}")
    return 0


def _flatten(obj, prefix: str = "") -> dict:
    if isinstance(obj, dict):
        out = {}
        for key, value in obj.items():
            out.update(_flatten(value, f"{prefix}.{key}" if prefix else key))
        return out
    return {prefix: obj}


def _check_compare_axes(dict_a: dict, dict_b: dict) -> None:
    flat_a, flat_b = _flatten(dict_a), _flatten(dict_b)
    differing = {
        key
        for key in set(flat_a) | set(flat_b)
        if flat_a.get(key) != flat_b.get(key) and not key.startswith("output_dir")
    }
    off_axis = sorted(differing - COMPARE_AXES)
    if off_axis:
        raise ConfigError(
            "compare configs may differ only in "
            f"{', '.join(sorted(COMPARE_AXES))}; also differ in: {', '.join(off_axis)}"
        )


def cmd_compare(args: argparse.Namespace) -> int:
    cfg_a = load_run_config(args.config_a)
    cfg_b = load_run_config(args.config_b)
    _check_compare_axes(cfg_a.to_dict(), cfg_b.to_dict())
    seeds = parse_seed_spec(args.seeds)
    out_dir = Path(args.out)
    _prepare_out_dir(out_dir, args.force)

    variants = []
    galleries = []
    for label, cfg in (("variant_a", cfg_a), ("variant_b", cfg_b)):
        sub_dir = out_dir / label
        sub_dir.mkdir(exist_ok=True)
        cfg = dataclasses.replace(cfg, output_dir=str(sub_dir))
        _train_run(cfg, sub_dir)
        bm, train_cfg = load_checkpoint(sub_dir / "checkpoint.npz")
        generator = cfg.generator.build()
        images = _gallery(generator, bm, train_cfg.layer_index, seeds)
        for seed, image in zip(seeds, images):
            export_png(image, sub_dir / f"sample_{seed}.png")
        embedder = cfg.embedder.build()
        variants.append(variant_similarity(label, seeds, embedder.embed_images(images)))
        galleries.append(images)

    # both variants must see bitwise-identical noise for a fair comparison
    for seed in seeds:
        za = sample_latents(seed, batch=1, latent_dim=cfg_a.generator.latent_dim)
        zb = sample_latents(seed, batch=1, latent_dim=cfg_b.generator.latent_dim)
        assert torch.equal(za.values, zb.values), f"latent streams diverged at seed {seed}"

    export_grid(torch.cat(galleries), len(seeds), out_dir / "composite.png")
    write_similarity_csv(variants, out_dir / "similarity.csv")
    save_similarity_figure(variants, out_dir / "similarity.png")
    config = {"config_a": cfg_a.to_dict(), "config_b": cfg_b.to_dict(), "seeds": seeds}
    write_manifest(out_dir, "compare", config, seeds, __version__)
    for variant in variants:
        print(f"{variant.label}: mean pairwise cosine {variant.overall:.6f}")
    print(f"comparison sheet: {out_dir}")
    return 0


def _generator_for_inspection(args: argparse.Namespace) -> LayeredGenerator:
    if args.toy:
        return GeneratorSource().build()
    path = Path(args.checkpoint)
    try:
        meta = load_run_metadata(path)
    except CheckpointVersionError:
        raise
    except CheckpointError:
        # not a training checkpoint; try it as a bare generator archive
        return load_external_generator(path, args.adapter)
    if "run" not in meta:
        raise CheckpointError(f"{path}: no run metadata; cannot reconstruct the generator")
    return run_config_from_dict(meta["run"]).generator.build()


def cmd_inspect_layers(args: argparse.Namespace) -> int:
    generator = _generator_for_inspection(args)
    print(f"{'index':>5}  {'channels':>8}  {'height':>6}  {'width':>5}")
    for desc in list_layers(generator):
        print(f"{desc.index:>5}  {desc.channels:>8}  {desc.height:>6}  {desc.width:>5}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bend",
        description="Train and apply bending modules inside a frozen image generator.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="optimize a bending module from a JSON config")
    p_train.add_argument("--config", required=True, help="path to a run config (JSON)")
    p_train.add_argument("--seed", type=int, default=None, help="override the training seed")
    p_train.add_argument(
        "--force", action="store_true", help="allow writing into a non-empty output directory"
    )
    p_train.set_defaults(func=cmd_train)

    p_gen = sub.add_parser("generate", help="render a seeded gallery from a checkpoint")
    p_gen.add_argument("--checkpoint", required=True, help="checkpoint written by `bend train`")
    p_gen.add_argument("--count", type=int, default=16, help="number of seeds (default 16)")
    p_gen.add_argument("--first-seed", type=int, default=0, help="first seed (default 0)")
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.add_argument("--force", action="store_true")
    p_gen.set_defaults(func=cmd_generate)

    p_cmp = sub.add_parser("compare", help="train two configs, report them side by side")
    p_cmp.add_argument("--config-a", required=True)
    p_cmp.add_argument("--config-b", required=True)
    p_cmp.add_argument("--seeds", default="0..15", help="seed spec, e.g. 0..15 or 0,2,5")
    p_cmp.add_argument("--out", required=True, help="output directory")
    p_cmp.add_argument("--force", action="store_true")
    p_cmp.set_defaults(func=cmd_compare)

    p_ins = sub.add_parser("inspect-layers", help="list tappable layers of a generator")
    source = p_ins.add_mutually_exclusive_group(required=True)
    source.add_argument("--toy", action="store_true", help="the built-in toy generator")
    source.add_argument("--checkpoint", help="a training checkpoint or generator archive")
    p_ins.add_argument(
        "--adapter", default="butterflygan", help="adapter for bare generator archives"
    )
    p_ins.set_defaults(func=cmd_inspect_layers)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidLayerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BendError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
