"""Command-line entry point: ``spatial-fsod <command> ...``.

Every command writes into its ``--out`` directory a resolved ``config.txt``,
a ``seed.txt`` and a ``checksums.json`` holding the SHA-256 of each artifact
it produced. Exit codes: 0 success, 2 config error, 3 data or I/O error,
4 numeric divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from .checkpoint import Checkpoint, CheckpointError
from .config import CONFIG_ENV, ConfigError, RunConfig, load_config
from .evaluation import checkpoint_config, evaluate
from .numerics import NumericError
from .scenegen import CategorySpace, GenerationError, SceneSet, build_category_space, make_splits, sample_fewshot
from .train import DataError, TrainingDivergence, base_train, finetune, replace_classifier

log = logging.getLogger("spatial_fsod")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4
DATA_META = "data.json"


class CliDataError(Exception):
    """Missing or malformed input named by path."""


# ---------------------------------------------------------------------------
# output directory helpers


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _prepare_out(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _finish(out: Path, config: RunConfig, artifacts: Sequence[str]) -> None:
    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    (out / "seed.txt").write_text(f"{config.seed}\n", encoding="utf-8")
    names = sorted(set(artifacts) | {"config.txt", "seed.txt"})
    sums = {name: _sha256(out / name) for name in names}
    (out / "checksums.json").write_text(json.dumps(sums, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliDataError(f"{what} not found: {p}")
    return p


def _load_checkpoint(path: str) -> Checkpoint:
    return Checkpoint.load(_require(path, "checkpoint"))


# ---------------------------------------------------------------------------
# data directory layout


def _fewshot_name(k: int) -> str:
    return f"fewshot_k{k}.jsonl"


def _write_data(out: Path, config: RunConfig, shots: Sequence[int]) -> list[str]:
    space = build_category_space(config, config.seed)
    splits = make_splits(space, config, config.seed, k=shots[0])
    space.save(out / "space.json")
    splits.base.save_jsonl(out / "base.jsonl")
    splits.test.save_jsonl(out / "test.jsonl")
    written = ["space.json", "base.jsonl", "test.jsonl"]
    for k in shots:
        fs = splits.fewshot if k == splits.k else sample_fewshot(space, config, k, config.seed)
        fs.save_jsonl(out / _fewshot_name(k))
        written.append(_fewshot_name(k))
    meta = {"seed": config.seed, "shots": list(shots), "base_ids": space.base_ids, "novel_ids": space.novel_ids}
    (out / DATA_META).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return written + [DATA_META]


class DataDir:
    """Read side of a ``gen-data`` output directory."""

    def __init__(self, path: str):
        self.path = _require(path, "data directory")
        meta_path = _require(self.path / DATA_META, "data manifest")
        try:
            self.meta = json.loads(meta_path.read_text(encoding="utf-8"))
            self.seed = int(self.meta["seed"])
        except (ValueError, KeyError) as exc:
            raise CliDataError(f"malformed data manifest: {meta_path}") from exc
        space_path = _require(self.path / "space.json", "category space")
        try:
            self.space = CategorySpace.load(space_path)
        except (ValueError, KeyError) as exc:
            raise CliDataError(f"malformed category space: {space_path}") from exc

    def split(self, name: str) -> SceneSet:
        file = _require(self.path / f"{name}.jsonl", f"{name} split")
        visible = self.space.base_ids if name == "base" else None
        try:
            return SceneSet.load_jsonl(file, name, self.seed, visible=visible)
        except (ValueError, KeyError) as exc:
            raise CliDataError(f"malformed scenes in {file}: {exc}") from exc

    def fewshot(self, k: int) -> SceneSet:
        file = _require(self.path / _fewshot_name(k), f"{k}-shot split")
        try:
            return SceneSet.load_jsonl(file, f"fewshot{k}", self.seed)
        except (ValueError, KeyError) as exc:
            raise CliDataError(f"malformed scenes in {file}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args, config: RunConfig) -> None:
    out = _prepare_out(args.out)
    shots = args.shots or [config.k]
    _finish(out, config, _write_data(out, config, shots))


def cmd_base_train(args, config: RunConfig) -> None:
    data = DataDir(args.data)
    config = config.replace(seed=data.seed)
    out = _prepare_out(args.out)
    ckpt, hist = base_train(data.space, data.split("base"), config, data.seed)
    ckpt.save(out / "checkpoint.fsrs")
    (out / "loss.csv").write_text(
        "step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(hist.losses)), encoding="utf-8")
    _finish(out, config, ["checkpoint.fsrs", "loss.csv"])


def cmd_finetune(args, config: RunConfig) -> None:
    base = _load_checkpoint(args.checkpoint)
    k = args.shots
    if args.data:
        data = DataDir(args.data)
        space, shots, seed = data.space, data.fewshot(k), data.seed
    else:
        seed = config.seed
        space = build_category_space(config, seed)
        shots = sample_fewshot(space, config, k, seed)
    config = config.replace(seed=seed, k=k)
    out = _prepare_out(args.out)
    ckpt = replace_classifier(base, space.novel_ids, config, seed)
    tuned, hist = finetune(ckpt, space, shots, config, seed)
    tuned.save(out / "checkpoint.fsrs")
    (out / "loss.csv").write_text(
        "step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(hist.losses)), encoding="utf-8")
    _finish(out, config, ["checkpoint.fsrs", "loss.csv"])


def cmd_eval(args, config: RunConfig | None) -> None:
    ckpt = _load_checkpoint(args.checkpoint)
    data = DataDir(args.data)
    config = (config or checkpoint_config(ckpt)).replace(seed=data.seed)
    out = _prepare_out(args.out)
    report = evaluate(ckpt, data.space, data.split(args.split), config)
    report.write_csv(out / "metrics.csv")
    _finish(out, config, ["metrics.csv"])
    print(f"nAP50={report.nAP50:.4f} bAP50={report.bAP50:.4f} mAP50={report.mAP50:.4f}")


def cmd_ablate(args, config: RunConfig) -> None:
    from .experiments import ABLATIONS, Runner, grid_rows, run_grid, write_rows
    from .plots import plot_ablation

    names = args.only or list(ABLATIONS)
    unknown = [n for n in names if n not in ABLATIONS]
    if unknown:
        raise ConfigError("only", f"unknown ablation(s) {unknown}; choose from {sorted(ABLATIONS)}")
    seeds = args.seeds if args.seeds is not None else list(config.ablation_seeds)
    shots = args.shots or [1, 5]
    out = _prepare_out(args.out)
    runner = Runner(config)
    artifacts = []
    for name in names:
        rows = grid_rows(name, run_grid(runner, ABLATIONS[name](config), seeds, shots))
        write_rows(out / f"{name}.csv", rows)
        plot_ablation(rows, out / f"{name}.svg", line=(name == "augment_T_sweep"))
        artifacts += [f"{name}.csv", f"{name}.svg"]
    _finish(out, config, artifacts)


# ---------------------------------------------------------------------------
# argument parsing


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spatial-fsod", description="Few-shot detection with learned spatial graphs on synthetic scenes.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key=value config file (default: $SPATIAL_FSOD_CONFIG or built-in)")
        p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(fn=fn)
        return p

    p = command("gen-data", cmd_gen_data, "generate the category space and scene splits")
    p.add_argument("--shots", type=_int_list, help="few-shot sizes to write (default: config k)")

    p = command("base-train", cmd_base_train, "train on base categories")
    p.add_argument("--data", required=True, help="directory written by gen-data")

    p = command("finetune", cmd_finetune, "replace the classifier and fine-tune on k shots")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--shots", type=int, required=True)
    p.add_argument("--data", help="directory written by gen-data (default: regenerate from the seed)")

    p = command("eval", cmd_eval, "score a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["test", "base"])

    p = command("ablate", cmd_ablate, "run the ablation grids and write CSV and SVG results")
    p.add_argument("--seeds", type=_int_list, help="seeds (default: config ablation_seeds)")
    p.add_argument("--shots", type=_int_list, help="few-shot sizes (default: 1,5)")
    p.add_argument("--only", type=lambda s: [x.strip() for x in s.split(",") if x.strip()],
                   help="comma-separated subset of ablations")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        config = load_config(args.config)
        if args.fn is cmd_eval and args.config is None and CONFIG_ENV not in os.environ:
            config = None  # fall back to the config stored in the checkpoint
        args.fn(args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergence, NumericError) as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (CliDataError, DataError, CheckpointError, GenerationError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
