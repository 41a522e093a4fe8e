import json

import numpy as np
import pytest
import yaml

from popmjp.cli import main
from popmjp.config import ConfigError, build_sampler, load_config
from popmjp.diagnostics import Trace


def write(tmp_path, cfg, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def bd_config(tmp_path, **run):
    cfg = {"model": {"kind": "birth_death", "capacity": 10, "horizon": 5.0, "params": {"lam": 1.0, "mu": 0.2}},
           "data": {"kind": "noisy", "count": 5, "sigma": 1.0},
           "sampler": {"variant": "nonstationary"},
           "run": {"sweeps": 30, "burn_in": 0, "seed": 5, "output": str(tmp_path / "out")}}
    cfg["run"].update(run)
    return cfg


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["infer"]) == 1
    assert main(["verify", "nonsense"]) == 1
    assert main(["verify", "lemma1", "--seed", "-1"]) == 1


def test_unknown_key_is_config_error(tmp_path):
    cfg = bd_config(tmp_path)
    cfg["sampler"]["colour"] = "red"
    assert main(["infer", "--config", write(tmp_path, cfg)]) == 2
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, cfg))


def test_invalid_values_are_config_errors(tmp_path):
    cfg = bd_config(tmp_path)
    cfg["model"]["params"]["beta"] = 1.0
    assert main(["infer", "--config", write(tmp_path, cfg)]) == 2
    cfg = bd_config(tmp_path)
    cfg["sampler"] = {"variant": "stationary"}  # seasonal kernel
    assert main(["infer", "--config", write(tmp_path, cfg)]) == 2
    assert main(["infer", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_simulate_is_deterministic(tmp_path):
    cfg = bd_config(tmp_path)
    path = write(tmp_path, cfg)
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "b")]) == 0
    for f in ("trajectory.csv", "observations.csv"):
        assert (tmp_path / "a" / f).read_text() == (tmp_path / "b" / f).read_text()
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "c"), "--seed", "6"]) == 0
    assert (tmp_path / "c" / "trajectory.csv").read_text() != (tmp_path / "a" / "trajectory.csv").read_text()


def test_infer_outputs_and_manifest_roundtrip(tmp_path):
    cfg = bd_config(tmp_path)
    assert main(["infer", "--config", write(tmp_path, cfg)]) == 0
    out = tmp_path / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 5 and set(manifest["files"]) == {"trace.csv", "band.csv"}
    assert "numpy" in manifest["versions"]
    trace = Trace.from_csv(out / "trace.csv")
    assert len(trace) == 30
    again = tmp_path / "again"
    assert main(["infer", "--config", str(out / "manifest.json"), "--out", str(again)]) == 0
    a = Trace.from_csv(out / "trace.csv")
    b = Trace.from_csv(again / "trace.csv")
    assert np.array_equal(np.array(a.params), np.array(b.params))
    assert a.log_density == b.log_density
    assert main(["diagnose", "--config", write(tmp_path, cfg)]) == 0
    assert (out / "diagnostics.txt").exists() and (out / "acf.csv").exists()


def test_zero_sweeps_writes_manifest_only(tmp_path):
    cfg = bd_config(tmp_path, sweeps=0)
    assert main(["infer", "--config", write(tmp_path, cfg)]) == 0
    out = tmp_path / "out"
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json"]
    assert json.loads((out / "manifest.json").read_text())["files"] == []


def test_zero_observations(tmp_path):
    cfg = bd_config(tmp_path, sweeps=5)
    cfg["data"]["count"] = 0
    assert main(["infer", "--config", write(tmp_path, cfg)]) == 0


def test_sir_trace_columns(tmp_path):
    cfg = {"model": {"kind": "sir", "capacity": 20, "params": {"beta": 0.1, "gamma": 1.0}},
           "data": {"kind": "removals", "final_removed": 10},
           "sampler": {"variant": "nonstationary"},
           "run": {"sweeps": 10, "seed": 2, "output": str(tmp_path / "out")}}
    assert main(["infer", "--config", write(tmp_path, cfg)]) == 0
    header = (tmp_path / "out" / "trace.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["sweep", "beta", "gamma"]


def test_infeasible_data_is_runtime_error(tmp_path):
    data = tmp_path / "obs.csv"
    data.write_text("time,kind,value_0\n1.0,exact,3\n1.0001,exact,9\n")
    cfg = bd_config(tmp_path, sweeps=3)
    cfg["data"] = {"kind": "exact", "path": str(data)}
    assert main(["infer", "--config", write(tmp_path, cfg)]) == 3


def test_compare_runs(tmp_path):
    cfg = bd_config(tmp_path, sweeps=120)
    del cfg["sampler"]
    cfg["samplers"] = [{"variant": "vanilla"}, {"variant": "nonstationary"}]
    cfg["compare"] = {"benchmark": "vanilla", "replicates": 2}
    assert main(["compare", "--config", write(tmp_path, cfg)]) == 0
    text = (tmp_path / "out" / "compare.csv").read_text().splitlines()
    assert text[0].startswith("replicate,sampler,parameter") and len(text) == 5
    cfg["compare"]["benchmark"] = "nobody"
    assert main(["compare", "--config", write(tmp_path, cfg)]) == 2


def test_verify_suites():
    assert main(["verify", "lemma1", "--seed", "1"]) == 0
    assert main(["verify", "prop1"]) == 0


def test_build_sampler_mapping():
    from popmjp.config import SamplerBlock
    cfg = build_sampler(SamplerBlock(variant="naive", psi="half-exit",
                                     envelope={"kind": "gamma", "mu": 1.0, "sigma": 0.5, "kappa": 0.5, "lag": 5}))
    assert cfg.variant == "naive" and cfg.psi.scale == 0.5 and cfg.envelope.lag == 5
    with pytest.raises(ConfigError):
        build_sampler(SamplerBlock(envelope={"kind": "gamma", "mu": 1.0, "sigma": 0.5}))
