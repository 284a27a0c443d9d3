import json

import numpy as np
import pytest

from hbhlab.experiments import (
    ExperimentConfig,
    NetGrid,
    code_hash,
    config_from_dict,
    dump_config,
    load_config,
    load_records,
    required_parameter_count,
    run_ablation_table,
    run_alpha_sweep,
    run_ratio_study,
    run_required_params,
)
from hbhlab.experiments.cli import main
from hbhlab.optimize import TrainConfig


def tiny(tmp_path, **kw):
    base = dict(
        shapes=((3, 2),),
        particles=(2,),
        alphas=(0.0, 0.3),
        net=NetGrid(widths=(4,), cnn_widths=(2,)),
        train=TrainConfig(max_steps=15, eval_interval=5, batch_size=32, learning_rate=1e-2),
        width_ladder=(2, 4, 8),
        output_dir=str(tmp_path),
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(alphas=())
    with pytest.raises(ValueError):
        ExperimentConfig(shapes=((2, 2),), particles=(5,))
    with pytest.raises(ValueError):
        ExperimentConfig(ablations=("dropout",))
    with pytest.raises(ValueError):
        config_from_dict({"train": {"nonsense": 1}})


def test_config_roundtrip(tmp_path):
    cfg = tiny(tmp_path)
    dump_config(cfg, tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back == cfg
    data = json.loads((tmp_path / "c.json").read_text())
    # every field is resolved explicitly
    assert set(data["train"]) == set(TrainConfig.__dataclass_fields__)
    assert set(data["net"]) == set(NetGrid.__dataclass_fields__)


def test_full_network_grid_size():
    grid = NetGrid(architectures=("mlp", "cnn"), depths=(2, 3, 4), widths=(32, 64, 128), cnn_widths=(10, 20, 44))
    assert len(grid.configs()) == 18


def test_required_parameter_count_cases():
    counts = [100, 400, 1600]
    assert required_parameter_count(counts, [0.01, 0.001, 1e-4], 0.1) == (100.0, "exact")
    n, status = required_parameter_count(counts, [1.0, 0.1, 0.01], np.sqrt(0.1 * 0.01))
    assert status == "interpolated" and n == pytest.approx(np.sqrt(400 * 1600))
    assert required_parameter_count(counts, [1.0, 0.5, 0.2], 0.1) == (None, "unbounded")
    # monotone non-increasing in the allowed error
    errs = [1.0, 0.3, 0.05, 0.01]
    ns = [required_parameter_count([10, 20, 40, 80], errs, t)[0] for t in (0.02, 0.05, 0.1, 0.5)]
    assert all(b <= a for a, b in zip(ns, ns[1:]))


def test_alpha_sweep_records_every_point(tmp_path):
    cfg = tiny(tmp_path, methods=("supervised", "sr", "site"), alphas=(0.0, 0.1, 0.3))
    recs = run_alpha_sweep(cfg)
    assert len(recs) == 9
    assert all(r.status == "ok" for r in recs)
    assert all(r.metrics["energy_error"] >= -1e-10 for r in recs)
    on_disk = load_records(tmp_path / "sweep_alpha" / "records.jsonl")
    assert len(on_disk) == 9 and on_disk[0].code_version == code_hash()
    assert (tmp_path / "sweep_alpha" / "sweep_alpha.csv").exists()
    assert load_config(tmp_path / "sweep_alpha" / "config.json") == cfg


def test_sweep_reproducible(tmp_path):
    a = run_alpha_sweep(tiny(tmp_path / "a", alphas=(0.3,)))
    b = run_alpha_sweep(tiny(tmp_path / "b", alphas=(0.3,)))
    strip = lambda r: {k: v for k, v in r.metrics.items() if k != "wall_time"}  # noqa: E731
    assert strip(a[0]) == strip(b[0])


def test_degenerate_points_are_skipped(tmp_path):
    cfg = tiny(tmp_path, shapes=((2, 2),), particles=(1,), alphas=(0.5,))
    recs = run_alpha_sweep(cfg)
    assert recs[0].status == "skipped" and "degenerate" in recs[0].flags[0]


def test_ratio_study(tmp_path):
    cfg = tiny(tmp_path, net=NetGrid(architectures=("mlp", "cnn"), widths=(4,), cnn_widths=(2,)))
    rows = run_ratio_study(cfg)
    assert len(rows) == 4
    assert {r["architecture"] for r in rows} == {"mlp", "cnn"}
    assert all(r["ratio"] == r["n_params"] / r["dim"] for r in rows)


def test_required_params(tmp_path):
    rows = run_required_params(tiny(tmp_path, alphas=(0.1,)))
    assert len(rows) == 1
    r = rows[0]
    assert r["delta_e_req"] == pytest.approx(0.1 * r["gap"])
    assert r["status"] in ("exact", "interpolated", "unbounded")


def test_ablation_table(tmp_path):
    cfg = tiny(tmp_path, ablations=("baseline", "float64", "curriculum"), curriculum_alphas=(0.0, 0.15, 0.3))
    table = run_ablation_table(cfg)
    assert [r["modification"] for r in table] == ["baseline", "float64", "curriculum"]
    assert table[2]["alpha=0"] is None and table[2]["alpha=0.3"] is not None
    assert all(table[0][k] is not None for k in ("alpha=0", "alpha=0.3"))
    assert (tmp_path / "ablations" / "ablations.csv").read_text().startswith("modification,alpha=0,alpha=0.3")


def test_cli_ed_and_train_and_analyze(tmp_path, capsys):
    assert main(["ed", "--lx", "3", "--ly", "2", "-n", "2", "--alpha", "0.2", "--out", str(tmp_path / "ed"), "--export-hamiltonian"]) == 0
    summary = json.loads((tmp_path / "ed" / "ed.json").read_text())
    assert summary["dim"] == 15 and len(summary["energies"]) == 2
    assert (tmp_path / "ed" / "hamiltonian.coo").exists()

    cfg = tiny(tmp_path / "run")
    dump_config(cfg, tmp_path / "cfg.json")
    with pytest.raises(SystemExit):
        main(["train", "--config", str(tmp_path / "cfg.json")])  # --seed is mandatory
    assert main(["train", "--config", str(tmp_path / "cfg.json"), "--seed", "3", "--alpha", "0.2"]) == 0
    rec = json.loads((tmp_path / "run" / "train" / "record.json").read_text())
    assert rec["seed"] == 3 and rec["status"] == "ok"
    ck = rec["checkpoint_path"]
    out = tmp_path / "an"
    assert main(["analyze", ck, "--what", "elements,surface,hessian,newton", "--grid", "5", "--out", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["surface_center"] == pytest.approx(-np.log((1 - s["overlap_deviation"]) ** 2), abs=1e-6)
    assert (out / "hessian.csv").exists() and (out / "elements.csv").exists()
    capsys.readouterr()


def test_cli_init_config(tmp_path):
    assert main(["init-config", str(tmp_path / "d.json")]) == 0
    assert load_config(tmp_path / "d.json") == ExperimentConfig()


def test_parallel_workers_match_serial(tmp_path, monkeypatch):
    strip = lambda r: {k: v for k, v in r.metrics.items() if k != "wall_time"}  # noqa: E731
    serial = run_alpha_sweep(tiny(tmp_path / "s"))
    monkeypatch.setenv("HBH_WORKERS", "2")
    parallel = run_alpha_sweep(tiny(tmp_path / "p"))
    assert [strip(r) for r in serial] == [strip(r) for r in parallel]
    assert len(load_records(tmp_path / "p" / "sweep_alpha" / "records.jsonl")) == len(serial)
