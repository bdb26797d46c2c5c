import csv
import json

import pytest

from spatial_fsod.cli import main
from spatial_fsod.config import shipped_config

TINY_CFG = str(shipped_config("tiny"))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, base, ft, ev = (str(root / n) for n in ("data", "base", "ft", "ev"))
    assert main(["gen-data", "--config", TINY_CFG, "--out", data, "--shots", "1,2"]) == 0
    assert main(["base-train", "--config", TINY_CFG, "--data", data, "--out", base]) == 0
    assert main(["finetune", "--config", TINY_CFG, "--checkpoint", f"{base}/checkpoint.fsrs", "--shots", "1",
                 "--data", data, "--out", ft]) == 0
    assert main(["eval", "--checkpoint", f"{ft}/checkpoint.fsrs", "--data", data, "--out", ev]) == 0
    return root


def test_every_output_directory_is_self_describing(pipeline):
    for name in ("data", "base", "ft", "ev"):
        d = pipeline / name
        sums = json.loads((d / "checksums.json").read_text())
        assert {"config.txt", "seed.txt"} <= set(sums)
        assert (d / "seed.txt").read_text().strip() == "0"
        for f in sums:
            assert (d / f).exists()


def test_metrics_csv_schema(pipeline):
    with open(pipeline / "ev" / "metrics.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["row", "split", "AP50", "AP75"]
    assert [r[0] for r in rows[-3:]] == ["nAP", "bAP", "mAP"]


def test_rerun_gives_identical_checksums(pipeline, tmp_path):
    data = str(pipeline / "data")
    assert main(["base-train", "--config", TINY_CFG, "--data", data, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "checksums.json").read_text() == (pipeline / "base" / "checksums.json").read_text()


def test_finetune_regenerates_shots_without_data(pipeline, tmp_path):
    out = tmp_path / "ft"
    assert main(["finetune", "--config", TINY_CFG, "--checkpoint", str(pipeline / "base" / "checkpoint.fsrs"),
                 "--shots", "1", "--out", str(out)]) == 0
    # generated data and regenerated data agree, so the fine-tuned checkpoints do too
    a = json.loads((out / "checksums.json").read_text())["checkpoint.fsrs"]
    b = json.loads((pipeline / "ft" / "checksums.json").read_text())["checkpoint.fsrs"]
    assert a == b


def test_untrained_checkpoint_evaluates(pipeline, tmp_path):
    from spatial_fsod.config import TINY
    from spatial_fsod.model import initial_checkpoint
    from spatial_fsod.scenegen import CategorySpace
    space = CategorySpace.load(pipeline / "data" / "space.json")
    initial_checkpoint(TINY, space.base_ids, 0).save(tmp_path / "init.fsrs")
    assert main(["eval", "--checkpoint", str(tmp_path / "init.fsrs"), "--data", str(pipeline / "data"),
                 "--out", str(tmp_path / "ev")]) == 0
    with open(tmp_path / "ev" / "metrics.csv", newline="") as fh:
        rows = {r[0]: r for r in csv.reader(fh)}
    assert rows["bAP"][2] != "" and rows["nAP"][2] != ""


def test_ablate_single_seed(tmp_path):
    out = tmp_path / "ab"
    assert main(["ablate", "--config", TINY_CFG, "--out", str(out), "--seeds", "0", "--shots", "1",
                 "--only", "reasoning_x_augmentation"]) == 0
    with open(out / "reasoning_x_augmentation.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 4
    svg = (out / "reasoning_x_augmentation.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense_key=1\n")
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "nonsense_key" in capsys.readouterr().err
    assert main(["gen-data", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "x")]) == 3
    assert "missing.cfg" in capsys.readouterr().err
    assert main(["base-train", "--config", TINY_CFG, "--data", str(tmp_path / "nodata"),
                 "--out", str(tmp_path / "y")]) == 3
    assert "nodata" in capsys.readouterr().err
    assert main(["ablate", "--config", TINY_CFG, "--out", str(tmp_path / "z"), "--only", "nope"]) == 2


def test_divergence_exit_code(pipeline, tmp_path):
    cfg = tmp_path / "hot.cfg"
    cfg.write_text(shipped_config("tiny").read_text() + "base_schedule=50:1e6\n")
    assert main(["base-train", "--config", str(cfg), "--data", str(pipeline / "data"),
                 "--out", str(tmp_path / "hot")]) == 4
