import csv
import json

import numpy as np
import pytest

from wpmec import cli
from wpmec.cli import ConfigError, ExperimentSpec, main, parse_config, read_config
from wpmec.model import SystemConfig
from wpmec.stochastic import RandomStream, generate_topology


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_empty_file_gives_defaults(tmp_path):
    c = parse_config(write(tmp_path, "# nothing here\n\n"))
    d = SystemConfig()
    assert c.as_dict() == d.as_dict()


def test_values_sections_and_aliases(tmp_path):
    c, exp = read_config(write(tmp_path, """
[system]
penalty_v = 8   ; inline comments are fine
n = 3
swipt_enabled = no
[wd]
f_max = 1e8, 2e8, 3e8
[arrivals]
lambda = 5e4
[channel]
coverage_radius = inf
[experiment]
schedulers = proposed, lco
seeds = 1, 2
"""))
    assert c.penalty_v == 8.0 and c.n_wd == 3 and c.swipt_enabled is False
    assert c.f_max.tolist() == [1e8, 2e8, 3e8]
    assert np.all(c.arrival_rate == 5e4)
    assert exp == {"schedulers": ("proposed", "lco"), "seeds": (1, 2)}


@pytest.mark.parametrize("text, line, fragment", [
    ("[wd]\nkappa = 1e-28\nmu = 1.5\n", 3, "mu"),
    ("[system]\nfoo = 1\n", 2, "unknown key"),
    ("[system]\npenalty_v 3\n", 2, "key = value"),
    ("penalty_v = 3\n", 1, "outside"),
    ("[nope]\n", 1, "section"),
    ("[system]\npenalty_v = 1\nv = 2\n", 3, "duplicate"),
    ("[system]\npenalty_v =\n", 2, "missing value"),
    ("[system]\npenalty_v = abc\n", 2, "bad value"),
])
def test_config_errors_name_the_line(tmp_path, text, line, fragment):
    path = write(tmp_path, text)
    with pytest.raises(ConfigError) as err:
        read_config(path)
    assert err.value.lineno == line
    assert f":{line}:" in str(err.value) and fragment in str(err.value)


def test_config_error_exit_code(tmp_path, capsys):
    path = write(tmp_path, "[wd]\nmu = 1.5\n")
    assert main(["--config", str(path), "--out", str(tmp_path / "o")]) == 1
    assert ":2:" in capsys.readouterr().err


def test_single_run_summary(tmp_path):
    out = tmp_path / "o"
    assert main(["--slots", "10", "--out", str(out)]) == 0
    r = rows(out / "summary.csv")
    assert [x["seed"] for x in r] == ["0", "mean"]
    assert r[0]["sweep_axis"] == "" and r[0]["scheduler"] == "proposed"
    assert list(r[0]) == cli.SUMMARY_COLUMNS
    info = json.loads((out / "run_info.json").read_text())
    assert info["delay_estimator"] == "little"


def test_sweep_writes_one_row_per_cell_and_means(tmp_path):
    out = tmp_path / "o"
    code = main(["--sweep-v", "1,2,4", "--scheduler", "proposed,lco,fo", "--seeds", "0,1",
                 "--slots", "20", "--out", str(out), "--emit-slots"])
    assert code == 0
    r = rows(out / "summary.csv")
    data = [x for x in r if x["seed"] != "mean"]
    means = [x for x in r if x["seed"] == "mean"]
    assert len(data) == 18 and len(means) == 9
    assert {x["sweep_value"] for x in data} == {"1.0", "2.0", "4.0"}
    # mean rows are the arithmetic mean of their seeds
    for m in means:
        cell = [float(x["avg_ap_energy_J_per_slot"]) for x in data
                if x["sweep_value"] == m["sweep_value"] and x["scheduler"] == m["scheduler"]]
        assert float(m["avg_ap_energy_J_per_slot"]) == pytest.approx(sum(cell) / 2, rel=1e-12)
    slot_rows = rows(out / "V2.0_lco_seed1.csv")
    assert len(slot_rows) == 20 and list(slot_rows[0]) == cli.SLOT_COLUMNS


def test_csv_values_round_trip_exactly(tmp_path):
    from wpmec.engine import run
    out = tmp_path / "o"
    assert main(["--slots", "30", "--seeds", "3", "--scheduler", "fo", "--out", str(out)]) == 0
    rec = run(SystemConfig(horizon=30), "fo", seed=3)
    r = rows(out / "summary.csv")[0]
    assert float(r["avg_ap_energy_J_per_slot"]) == rec.avg_ap_energy
    assert float(r["avg_queue_bits"]) == rec.avg_queue
    assert r["stable"] == ("true" if rec.stable else "false")


def test_reruns_are_byte_identical(tmp_path):
    args = ["--sweep-n", "2,4", "--scheduler", "proposed,fo", "--seeds", "0,5", "--slots", "25"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    assert (tmp_path / "a/summary.csv").read_bytes() == (tmp_path / "b/summary.csv").read_bytes()


def test_sweep_axes_from_config_file(tmp_path):
    path = write(tmp_path, "[experiment]\nsweep_m = 1, 2\nseeds = 0\n")
    out = tmp_path / "o"
    assert main(["--config", str(path), "--slots", "5", "--out", str(out)]) == 0
    assert [x["sweep_value"] for x in rows(out / "summary.csv")] == ["1", "2", "1", "2"]
    path = write(tmp_path, "[experiment]\nsweep_m = 1\nsweep_v = 2\n", "two.cfg")
    assert main(["--config", str(path), "--out", str(out)]) == 1


def test_run_failure_exit_code_and_marker(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("solver exploded")
    monkeypatch.setattr(cli, "run", boom)
    out = tmp_path / "o"
    assert main(["--slots", "5", "--out", str(out)]) == 2
    last = rows(out / "summary.csv")[-1]
    assert last["avg_ap_energy_J_per_slot"] == "FAILED"
    assert "solver exploded" in last["avg_delay_slots"]


def test_fixed_topology(tmp_path):
    c = SystemConfig(n_wd=4, m_ap=2)
    topo_path = tmp_path / "topo.txt"
    generate_topology(c, RandomStream(99)).save(topo_path)
    cfg = write(tmp_path, "[system]\nn_wd = 4\nm_ap = 2\n")
    out = tmp_path / "o"
    base = ["--config", str(cfg), "--slots", "20", "--topology", str(topo_path)]
    assert main(base + ["--seeds", "0", "--out", str(out / "a")]) == 0
    assert main(base + ["--seeds", "0", "--out", str(out / "b")]) == 0
    assert (out / "a/summary.csv").read_bytes() == (out / "b/summary.csv").read_bytes()
    # wrong size for the placement file
    assert main(["--slots", "5", "--topology", str(topo_path), "--out", str(out / "c")]) == 2
    assert main(["--topology", str(tmp_path / "missing"), "--out", str(out / "d")]) == 1


def test_trace_output(tmp_path):
    out = tmp_path / "o"
    assert main(["--slots", "7", "--trace", "--out", str(out)]) == 0
    lines = (out / "proposed_seed0.jsonl").read_text().splitlines()
    assert len(lines) == 7 and json.loads(lines[3])["t"] == 3


@pytest.mark.parametrize("kw", [dict(axis="X", values=(1,)), dict(axis="V"),
                                dict(axis="N", values=(1.5,)), dict(schedulers=("magic",)),
                                dict(seeds=(-1,)), dict(schedulers=())])
def test_bad_experiment_spec(kw):
    with pytest.raises(ValueError):
        ExperimentSpec(SystemConfig(), **kw)
