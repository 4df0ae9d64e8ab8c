import json

import pytest

from lorentzgas import cli
from lorentzgas.errors import LorentzGasError
from lorentzgas.output import config_hash, read_csv, read_jsonl


def run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = cli.main(list(args) + ["--out", str(out)])
    return code, out


def test_simulate_dump_first_row_at_origin(tmp_path):
    code, out = run(tmp_path, "simulate", "--eps", "0.1", "--T", "5", "--v0", "1,0,0", "--dump")
    assert code == 0
    head, rows = read_csv(out / "trajectories.csv")
    assert any(h.startswith("config_hash") for h in head)
    first = rows[0]
    assert float(first["t"]) == 0 and [float(first[c]) for c in "xyz"] == [0, 0, 0]
    man = json.loads((out / "manifest.json").read_text())
    assert man["manifest_version"] == 1 and set(man["files"]) == {"summary.csv",
                                                                   "trajectories.csv"}


def test_mismatch_summary(tmp_path):
    code, out = run(tmp_path, "mismatch", "--eps", "0.05", "--T", "20", "--N", "2", "--beta",
                    "0.5", "--replicas", "2000", "--seed", "7", "--jobs", "1")
    assert code == 0
    head, rows = read_csv(out / "summary.csv")
    assert len(rows) == 1
    row = rows[0]
    p, hw, bound = float(row["p_hat"]), float(row["ci_half_width"]), float(row["bound"])
    assert 0 <= p <= 1 and hw > 0 and bound > 0
    hdr, recs = read_jsonl(out / "replicas.jsonl")
    assert len(recs) == 2000 and hdr["config_hash"] == config_hash(cli.hashed(
        cli.resolve_config(["mismatch", "--eps", "0.05", "--T", "20", "--N", "2", "--beta",
                            "0.5", "--replicas", "2000", "--seed", "7"])))
    assert sum(r["mismatch"] for r in recs) == round(p * 2000)


def data_files(out):
    return {f.name: f.read_bytes() for f in sorted(out.iterdir()) if f.name != "manifest.json"}


def test_quenched_repeat_byte_identical(tmp_path):
    args = ["quenched", "--n-min", "3", "--n-max", "7", "--seed", "7", "--force",
            "--wiener-paths", "500"]
    c1, o1 = run(tmp_path, *args, "--jobs", "1", name="a")
    c2, o2 = run(tmp_path, *args, "--jobs", "2", name="b")
    assert c1 == c2 == 0
    assert data_files(o1) == data_files(o2)
    m1 = json.loads((o1 / "manifest.json").read_text())
    m2 = json.loads((o2 / "manifest.json").read_text())
    m1.pop("wall_time_s"), m2.pop("wall_time_s")
    assert m1 == m2


def test_mismatch_parallel_byte_identical(tmp_path):
    args = ["mismatch", "--eps", "0.1", "--T", "3", "--N", "2", "--beta", "0.5",
            "--replicas", "60", "--seed", "3"]
    _, o1 = run(tmp_path, *args, "--jobs", "1", name="a")
    _, o2 = run(tmp_path, *args, "--jobs", "3", name="b")
    assert data_files(o1) == data_files(o2)


def test_inadmissible_schedule_exit_2(tmp_path, capsys):
    code, out = run(tmp_path, "quenched", "--n-min", "3", "--n-max", "7")
    assert code == 2 and "not admissible" in capsys.readouterr().err
    assert (out / "schedule.csv").exists()


@pytest.mark.parametrize("args", [
    ["nonsense"],
    ["mismatch", "--eps", "1.5"],
    ["mismatch", "--beta", "2"],
    ["mismatch", "--eps", "0.5", "--T", "10"],          # r T > 1
    ["simulate", "--v0", "1,1,0"],
    ["mismatch", "--replicas", "0"],
    ["mismatch", "--bogus-flag", "1"],
])
def test_validation_exit_2(tmp_path, args):
    assert run(tmp_path, *args)[0] == 2


def test_force_allows_large_rT(tmp_path):
    code, _ = run(tmp_path, "simulate", "--eps", "0.5", "--T", "10", "--force")
    assert code == 0


def test_runtime_error_exit_3(tmp_path, monkeypatch):
    def boom(cfg, outdir, jobs):
        raise LorentzGasError("boom")
    monkeypatch.setitem(cli.RUNNERS, "simulate", boom)
    assert run(tmp_path, "simulate")[0] == 3


def test_config_file_env_and_flags(tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# demo\nexperiment = simulate\neps = 0.2\nT = 3\nout = ignored\n")
    monkeypatch.setenv(cli.ENV_OUTPUT, str(tmp_path / "env"))
    c = cli.resolve_config(["--config", str(cfg), "--T", "4"])
    assert c["experiment"] == "simulate" and c["eps"] == [0.2] and c["T"] == [4.0]
    assert c["out"] == str(tmp_path / "env")
    c = cli.resolve_config(["--config", str(cfg), "--out", "flag"])
    assert c["out"] == "flag"


def test_config_file_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("experiment = simulate\ncolour = blue\n")
    with pytest.raises(cli.ConfigError):
        cli.resolve_config(["--config", str(cfg)])


@pytest.mark.parametrize("exp,extra", [
    ("couple", ["--eps", "0.2", "--T", "3", "--N", "2", "--replicas", "5", "--dump"]),
    ("events", ["--r", "0.01", "--T", "5", "--w", "0.2", "--replicas", "2000"]),
    ("green", ["--R", "3", "--replicas", "500", "--horizon", "50"]),
    ("donsker", ["--T", "20", "--replicas", "500", "--wiener-paths", "500", "--n-steps", "100"]),
])
def test_other_experiments_run(tmp_path, exp, extra):
    code, out = run(tmp_path, exp, "--jobs", "1", *extra)
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    for f in man["files"]:
        text = (out / f).read_text()
        assert text.startswith("# lorentzgas") or text.startswith('{"header"')
