import csv
import json

import pytest
import yaml

from valleywalk import cli
from valleywalk import experiments as ex
from valleywalk.errors import ConfigError

MODEL = {"family": "beta", "alpha": 3.0, "beta": 1.5}


def _cfg(kind, **kw):
    data = {"kind": kind, "seed": 7, "model": MODEL}
    data.update(kw)
    return ex.ExperimentConfig.from_mapping(data)


def _strip(records):
    return [{k: v for k, v in r.items() if k != "wall_time"} for r in records]


@pytest.mark.parametrize("data, message", [
    ({"kind": "simulate", "model": MODEL, "n": [10]}, "seed"),
    ({"kind": "simulate", "seed": 1, "model": MODEL, "n": [10], "replicates": 0}, "replicates"),
    ({"kind": "simulate", "seed": 1, "model": MODEL}, "at least one n"),
    ({"kind": "good_env", "seed": 1, "model": MODEL, "ladder": []}, "ladder"),
    ({"kind": "simulate", "seed": 1, "model": MODEL, "n": [10], "bogus": 3}, "unknown options"),
    ({"kind": "simulate", "seed": 1, "model": dict(MODEL, kappa=1.2), "n": [10]}, "inconsistent"),
    ({"kind": "teleport", "seed": 1, "model": MODEL}, "unknown experiment"),
    ({"kind": "simulate", "seed": -1, "model": MODEL, "n": [10]}, "nonnegative"),
])
def test_config_validation(data, message):
    with pytest.raises(ConfigError, match=message):
        ex.ExperimentConfig.from_mapping(data)


def test_config_model_string_and_digest():
    a = ex.ExperimentConfig.from_mapping({"experiment": "simulate", "seed": 1, "model": "beta:3,1.5", "n": 100})
    b = _cfg("simulate", seed=1, n=[100], workers=8)
    assert a.n == (100,) and a.digest() == b.digest()
    assert a.digest() != _cfg("simulate", seed=2, n=[100]).digest()
    assert a.left_environment == "iid" and _cfg("z_tail").left_environment == "conditioned"


def test_load_config_yaml_and_json(tmp_path):
    body = {"kind": "valley_stats", "seed": 3, "model": MODEL, "n": [1000], "replicates": 2, "q_samples": 1000}
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(body))
    (tmp_path / "c.json").write_text(json.dumps(body))
    a = ex.load_config(tmp_path / "c.yaml")
    b = ex.load_config(tmp_path / "c.json", seed=4)
    assert a.options["q_samples"] == 1000 and b.seed == 4
    (tmp_path / "bad.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        ex.load_config(tmp_path / "bad.yaml")


@pytest.mark.parametrize("workers", [2, 4])
def test_tau_replicates_independent_of_workers(workers):
    one = ex.run(_cfg("simulate", n=[500, 2000], replicates=6))
    many = ex.run(_cfg("simulate", n=[500, 2000], replicates=6, workers=workers))
    assert _strip(one.replicates) == _strip(many.replicates)
    assert one.digest == many.digest


def test_z_tail_independent_of_workers():
    opts = dict(samples=60_000, batch=20_000, min_exceedances=50)
    a = ex.run(_cfg("z_tail", **opts))
    b = ex.run(_cfg("z_tail", workers=3, **opts))
    assert [m.estimate for m in a.metrics] == [m.estimate for m in b.metrics]


def test_every_metric_carries_sample_size():
    rec = ex.run(_cfg("simulate", n=[300], replicates=4))
    assert all(m.samples > 0 for m in rec.metrics)
    assert all(m.stderr is None or m.stderr >= 0 for m in rec.metrics)


def test_outputs_carry_schema_headers(tmp_path):
    rec = ex.run(_cfg("valley_stats", n=[2000], replicates=3, q_samples=20_000))
    paths = rec.write(tmp_path)
    lines = paths["replicates"].read_text().splitlines()
    head = json.loads(lines[0])
    assert head["schema"] == ex.REPLICATE_SCHEMA and head["digest"] == rec.digest and len(lines) == 4
    text = paths["summary_csv"].read_text().splitlines()
    assert text[0].startswith("# schema: %s" % ex.SUMMARY_SCHEMA)
    rows = list(csv.DictReader(text[1:]))
    assert {"metric", "estimate", "stderr", "exact", "samples", "censored"} <= set(rows[0])
    summary = json.loads(paths["summary_json"].read_text())
    assert summary["schema"] == ex.RUN_SCHEMA and "passed" in summary


def _cli(tmp_path, argv, body=None):
    if body is not None:
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump(body))
        argv = argv + ["--config", str(path)]
    return cli.main(argv + ["--quiet"])


def test_cli_exit_codes(tmp_path):
    ok = {"kind": "quenched_gate", "model": MODEL, "windows": 20}
    assert _cli(tmp_path, ["quenched-check", "--seed", "1", "--out", str(tmp_path / "a")], ok) == 0
    assert (tmp_path / "a" / "quenched_gate.json").exists()
    strict = dict(ok, tolerance=1e-300)
    assert _cli(tmp_path, ["quenched-check", "--seed", "1"], strict) == 2
    assert _cli(tmp_path, ["quenched-check"], ok) == 1                                   # no seed
    assert _cli(tmp_path, ["valleys", "--seed", "1"], ok) == 1                          # wrong kind
    assert _cli(tmp_path, ["simulate", "--seed", "1", "--model", "beta:3,1.5", "--n", "200",
                           "--replicates", "2", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "simulate.jsonl").exists()


def test_cli_config_from_args():
    args = cli.build_parser().parse_args(["valleys", "--seed", "3", "--model", "beta:2,1", "--n", "1e3,1e4",
                                          "--gamma", "0.5"])
    cfg = cli.config_from_args(args)
    assert cfg.kind == "valley_stats" and cfg.n == (1000, 10000) and cfg.options["gamma"] == 0.5


def test_good_env_trend_and_omega1_at_full_ladder():
    rec = ex.run(_cfg("good_env"))                 # ladder 1e4, 1e5, 1e6
    assert rec.gate("omega1_failure[t=1e+06]").value < 1e-3
    assert all(rec.gate("omega%d_nonincreasing" % i).passed for i in (1, 2, 3))


def test_interarrival_diagnostic():
    rec = ex.run(_cfg("interarrival_diag", n=[1000, 10_000, 100_000], replicates=200))
    assert rec.gate("tau_ia_subtime").passed
    assert rec.gate("tau_ia_without_valleys").passed
    iqr = [rec.metric("iqr[n=%d]" % n).estimate for n in (1000, 10_000, 100_000)]
    # not observed at this ladder (pre-asymptotic); left failing, see README "Known limitations"
    assert iqr[0] > iqr[1] > iqr[2], iqr


def test_interarrival_rejects_kappa_outside_range():
    with pytest.raises(ConfigError):
        ex.run(_cfg("interarrival_diag", model={"family": "beta", "alpha": 2.5, "beta": 2.0}, n=[100]))
