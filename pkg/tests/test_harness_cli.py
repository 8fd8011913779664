import hashlib
import json
import shutil
import struct

import numpy as np
import pytest

from smspace import harness
from smspace.cli import main
from smspace.exploration import generate_dataset, load_dataset, save_dataset
from smspace.harness import ConfigError, ExperimentConfig, RunFailed
from smspace.neural import load_checkpoint
from smspace.plotting import PlotInputError, curves_svg, points_svg, read_aggregate, read_points

TINY = dict(world="discrete", regime="MM", encoder="8,8", predictor="16", k="600", probe="100",
            batch="20", epochs="30", decay_epochs="20", cadence="10", runs="2", seed="3")


def tiny(**kw):
    values = {**TINY, **{k: str(v) for k, v in kw.items()}}
    cfg = ExperimentConfig.from_mapping(values)
    cfg.validate()
    return cfg


def tiny_flags(**kw):
    values = {**TINY, **kw}
    out = []
    for k, v in values.items():
        out += [f"--{k.replace('_', '-')}", str(v)]
    return out


@pytest.fixture(scope="module")
def tiny_dataset():
    return generate_dataset("discrete", "MM", 600, 11)


def poison_after(monkeypatch, steps):
    """Make training blow up: a parameter turns NaN after ``steps`` updates."""
    real = harness.train_step
    count = [0]

    def step(model, *args, **kw):
        count[0] += 1
        if count[0] > steps:
            model.flat[0] = np.nan
        return real(model, *args, **kw)

    monkeypatch.setattr(harness, "train_step", step)


# ---------------------------------------------------------------- config

def test_config_defaults():
    cfg = ExperimentConfig()
    assert (cfg.n_h, cfg.encoder, cfg.predictor, cfg.epochs, cfg.decay_epochs, cfg.batch, cfg.runs) == \
        (3, (150, 100, 50), (200, 150, 100), 100_000, 80_000, 100, 50)
    assert cfg.transitions == 150_000
    assert ExperimentConfig(world="arm4").transitions == 300_000
    assert ExperimentConfig.from_mapping({"encoder": "large"}).encoder == (500, 400, 300, 200)
    cfg.validate()


@pytest.mark.parametrize("bad", [
    {"decay_epochs": "40"}, {"batch": "501"}, {"batch": "0"}, {"encoder": "8,0"},
    {"world": "maze"}, {"regime": "XYZ"}, {"activation": "tanh"}, {"n_h": "0"},
    {"epochs": "-1"}, {"cadence": "0"}, {"k": "0"}, {"bogus": "1"}, {"n_h": "three"},
])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        tiny(**bad) if "bogus" not in bad else ExperimentConfig.from_mapping(bad)


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# campaign\nworld = arm\nregime=mme  # trailing\nn_h = 25\n")
    cfg = harness.load_config(path, {"n_h": "4", "seed": None})
    assert (cfg.world, cfg.regime, cfg.n_h) == ("arm", "MME", 4)
    path.write_text("world = arm\nthis line is wrong\n")
    with pytest.raises(ConfigError, match=r"c\.cfg:2"):
        harness.load_config(path)
    with pytest.raises(ConfigError):
        harness.load_config(tmp_path / "missing.cfg")


# ---------------------------------------------------------------- single runs

def test_epochs_zero_initial_report_only(tmp_path, tiny_dataset):
    art = harness.train_run(tiny(epochs=0, decay_epochs=0), tiny_dataset, 1, tmp_path)
    assert [r.epoch for r in art.reports] == [0]
    assert len(harness.read_curve(art.curve_path)) == 1


def test_curve_rows_and_artifacts(tmp_path, tiny_dataset):
    cfg = tiny()
    art = harness.train_run(cfg, tiny_dataset, 1, tmp_path)
    rows = harness.read_curve(art.curve_path)
    assert len(rows) == 1 + cfg.epochs // cfg.cadence
    assert [r.epoch for r in rows] == [0, 10, 20, 30]
    assert rows == art.reports
    assert art.curve_path.read_text().splitlines()[0] == "epoch,loss,d_topo,d_metric,affine_residual"
    model, epoch, adam, header = load_checkpoint(art.checkpoint_paths[-1])
    assert epoch == 30 and adam is not None and header["run_seed"] == 1
    assert np.array_equal(model.encode(np.zeros((1, 3))), model.encode(np.zeros((1, 3))))
    pts = read_points(art.points_path)
    assert {len(pts[k]) for k in ("m", "h", "hp", "p")} == {125}


def test_final_epoch_reported_off_cadence(tmp_path, tiny_dataset):
    art = harness.train_run(tiny(epochs=25), tiny_dataset, 1, tmp_path)
    assert [r.epoch for r in art.reports] == [0, 10, 20, 25]


def test_training_is_deterministic(tmp_path, tiny_dataset):
    a = harness.train_run(tiny(), tiny_dataset, 5, tmp_path / "a")
    b = harness.train_run(tiny(), tiny_dataset, 5, tmp_path / "b")
    assert a.curve_path.read_bytes() == b.curve_path.read_bytes()
    c = harness.train_run(tiny(), tiny_dataset, 6, tmp_path / "c")
    assert a.curve_path.read_bytes() != c.curve_path.read_bytes()


def test_resume_matches_uninterrupted(tmp_path, tiny_dataset):
    cfg = tiny(checkpoint_every=10)
    full = harness.train_run(cfg, tiny_dataset, 7, tmp_path / "full")
    part_dir = tmp_path / "part"
    first = harness.train_run(cfg, tiny_dataset, 7, part_dir)
    ckpt = tmp_path / "epoch-10.ckpt"
    shutil.copy(part_dir / "epoch-10.ckpt", ckpt)
    (part_dir / "final.ckpt").unlink()
    resumed = harness.train_run(cfg, tiny_dataset, 7, part_dir, resume=ckpt)
    assert first.reports == full.reports
    assert resumed.curve_path.read_bytes() == full.curve_path.read_bytes()
    assert np.array_equal(resumed.H, full.H)
    assert (part_dir / "final.ckpt").read_bytes() == (tmp_path / "full" / "final.ckpt").read_bytes()


def test_resume_rejects_other_dataset(tmp_path, tiny_dataset):
    cfg = tiny(checkpoint_every=10)
    harness.train_run(cfg, tiny_dataset, 7, tmp_path)
    other = generate_dataset("discrete", "MM", 600, 12)
    with pytest.raises(ConfigError, match="different dataset"):
        harness.train_run(cfg, other, 7, tmp_path / "x", resume=tmp_path / "epoch-10.ckpt")


def test_divergence_writes_diagnostic_checkpoint(tmp_path, tiny_dataset, monkeypatch):
    poison_after(monkeypatch, 5)
    with pytest.raises(RunFailed, match="epoch 5") as info:
        harness.train_run(tiny(), tiny_dataset, 1, tmp_path)
    assert info.value.checkpoint is not None and info.value.checkpoint.exists()
    assert info.value.checkpoint.name == "diverged.ckpt"


def test_world_mismatch(tmp_path, tiny_dataset):
    with pytest.raises(ConfigError):
        harness.train_run(tiny(world="arm"), tiny_dataset, 1, tmp_path)


# ---------------------------------------------------------------- campaigns

def test_single_run_aggregate_equals_run(tmp_path):
    res = harness.cmd_experiment(tiny(runs=1), tmp_path, log=lambda m: None)
    run = res.completed[0].reports
    assert [r["epoch"] for r in res.aggregate] == [r.epoch for r in run]
    for row, rep in zip(res.aggregate, run):
        assert row["loss_mean"] == rep.loss and row["d_topo_mean"] == rep.d_topo
        assert row["d_metric_std"] == 0.0
    assert read_aggregate(res.aggregate_path)[-1]["loss_mean"] == run[-1].loss
    assert res.svg_path.read_text().startswith("<svg")


def test_fixed_dataset_shares_digest(tmp_path):
    res = harness.cmd_experiment(tiny(runs=3, fixed_dataset=True), tmp_path, log=lambda m: None)
    assert len({o.dataset_digest for o in res.outcomes}) == 1
    redrawn = harness.cmd_experiment(tiny(runs=3), tmp_path / "r", log=lambda m: None)
    assert len({o.dataset_digest for o in redrawn.outcomes}) == 3


def test_serial_parallel_identical(tmp_path):
    a = harness.cmd_experiment(tiny(runs=3), tmp_path / "serial", log=lambda m: None)
    b = harness.cmd_experiment(tiny(runs=3, workers=2), tmp_path / "parallel", log=lambda m: None)
    assert a.aggregate_path.read_bytes() == b.aggregate_path.read_bytes()
    assert a.svg_path.read_bytes() == b.svg_path.read_bytes()
    for i in range(3):
        name = f"run-{i:03d}/curve.csv"
        assert (a.out_dir / name).read_bytes() == (b.out_dir / name).read_bytes()


def test_failed_runs_are_reported(tmp_path, monkeypatch):
    poison_after(monkeypatch, 5)
    with pytest.raises(RunFailed, match="every run failed"):
        harness.cmd_experiment(tiny(runs=2), tmp_path, log=lambda m: None)


# ---------------------------------------------------------------- CLI

def test_cli_generate_deterministic(tmp_path, capsys):
    args = ["generate", "--world", "discrete", "--regime", "mm", "--k", "1000", "--seed", "7"]
    assert main(args + ["-o", str(tmp_path / "a.smds")]) == 0
    assert main(args + ["-o", str(tmp_path / "b.smds")]) == 0
    out = capsys.readouterr().out.split()
    assert out[0] == out[2] == hashlib.sha256((tmp_path / "a.smds").read_bytes()).hexdigest()
    raw = (tmp_path / "a.smds").read_bytes()
    assert struct.unpack_from("<5IQ", raw, 8) == (1, 1, 3, 4, 1000, 7)
    assert main(["generate", "--regime", "mme", "--k", "10", "-o", str(tmp_path / "c.smds")]) == 0
    assert load_dataset(tmp_path / "c.smds").regime.name == "MME"


def test_cli_output_root_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SMSPACE_OUT", str(tmp_path))
    assert main(["generate", "--k", "5", "-o", "sub/d.smds"]) == 0
    assert (tmp_path / "sub" / "d.smds").exists()


def test_cli_validation_exit_codes(tmp_path, capsys):
    assert main(["generate", "--regime", "sideways"]) == 1
    assert main(["experiment", *tiny_flags(decay_epochs=99)]) == 1
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["check-invariants", "x.smds", "--mu", "small"])
    assert info.value.code == 1
    bad = tmp_path / "bad.smds"
    bad.write_bytes(b"NOTADATASET")
    assert main(["check-invariants", str(bad)]) == 1
    assert main(["plot", "curves", str(bad), "-o", str(tmp_path / "x.svg")]) == 1


def test_cli_runtime_exit_codes(tmp_path, capsys, monkeypatch):
    assert main(["check-invariants", str(tmp_path / "missing.smds")]) == 2
    ds = tmp_path / "d.smds"
    save_dataset(generate_dataset("discrete", "MM", 600, 1), ds)
    poison_after(monkeypatch, 5)
    assert main(["train", str(ds), *tiny_flags(out=str(tmp_path / "run"))]) == 2


def test_cli_train_and_plot(tmp_path, capsys):
    ds = tmp_path / "d.smds"
    save_dataset(generate_dataset("discrete", "MM", 600, 1), ds)
    run = tmp_path / "run"
    assert main(["train", str(ds), *tiny_flags(out=str(run), checkpoint_every=10)]) == 0
    out = capsys.readouterr().out
    assert "epoch 30:" in out and "epoch-10.ckpt" in out
    assert main(["train", str(ds), *tiny_flags(out=str(run)), "--resume", str(run / "epoch-20.ckpt")]) == 0
    assert main(["plot", "points", str(run / "points.csv"), "-o", str(tmp_path / "p.svg")]) == 0
    assert (tmp_path / "p.svg").read_text().count("<line") == 125


def test_cli_experiment_and_curves_plot(tmp_path, capsys):
    out = tmp_path / "exp"
    assert main(["experiment", *tiny_flags(out=str(out), runs=2)]) == 0
    assert (out / "aggregate.csv").exists() and (out / "curves.svg").exists()
    assert main(["plot", "curves", f"{out / 'aggregate.csv'}:MM", f"{out / 'aggregate.csv'}:again",
                 "-o", str(tmp_path / "c.svg")]) == 0
    svg = (tmp_path / "c.svg").read_text()
    assert ">MM<" in svg and ">again<" in svg and svg.count("<polygon") == 6


def test_cli_check_invariants(tmp_path, capsys):
    mm = tmp_path / "mm.smds"
    mem = tmp_path / "mem.smds"
    save_dataset(generate_dataset("discrete", "MM", 3000, 1), mm)
    save_dataset(generate_dataset("discrete", "MEM", 3000, 1), mem)
    assert main(["check-invariants", str(mm), "--strict"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["topo"]["violations"] == 0 and report["metric"]["candidates"] == 0
    assert main(["check-invariants", str(mem), "--which", "topo", "--strict"]) == 2
    assert json.loads(capsys.readouterr().out)["topo"]["violations"] > 0


# ---------------------------------------------------------------- plotting

AGG = "epoch,loss_mean,loss_std,d_topo_mean,d_topo_std,d_metric_mean,d_metric_std\n" \
      "0,1.0,0.1,0.5,0.05,0.4,0.1\n10,0.5,0.1,0.2,0.05,0.2,0.0\n"


def test_curves_svg_deterministic(tmp_path):
    (tmp_path / "a.csv").write_text(AGG)
    rows = read_aggregate(tmp_path / "a.csv")
    assert curves_svg([("MM", rows)]) == curves_svg([("MM", read_aggregate(tmp_path / "a.csv"))])
    assert curves_svg([("MM", rows)]).count("<polyline") == 3


def test_curves_svg_empty_input():
    with pytest.raises(PlotInputError):
        curves_svg([])
    with pytest.raises(PlotInputError):
        curves_svg([("MM", [])])


def test_malformed_csv_reports_line(tmp_path):
    (tmp_path / "a.csv").write_text(AGG + "20,0.1,oops,0,0,0,0\n")
    with pytest.raises(PlotInputError, match=r"a\.csv:4"):
        read_aggregate(tmp_path / "a.csv")
    (tmp_path / "b.csv").write_text(AGG + "20,0.1\n")
    with pytest.raises(PlotInputError, match=r"b\.csv:4"):
        read_aggregate(tmp_path / "b.csv")
    (tmp_path / "c.csv").write_text("epoch,loss_mean\n")
    with pytest.raises(PlotInputError, match=r"c\.csv:1"):
        read_aggregate(tmp_path / "c.csv")


def test_points_svg_connectors():
    rng = np.random.default_rng(0)
    P = rng.uniform(size=(37, 2)).tolist()
    Hp = rng.uniform(size=(37, 2)).tolist()
    svg = points_svg({"p": P, "hp": Hp})
    assert svg.count("<line") == 37
    assert svg == points_svg({"p": P, "hp": Hp})
    with pytest.raises(PlotInputError):
        points_svg({"p": P, "hp": Hp[:-1]})
    with pytest.raises(PlotInputError):
        points_svg({"p": P})
