import csv
import json
import shutil
import subprocess
import sys

import pytest
import yaml

from annealtails import harness
from annealtails.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main
from annealtails.instances import read_instance


@pytest.fixture
def solved(tmp_path):
    inst = tmp_path / "inst"
    assert main(["generate", "--seed", "3", "--L", "1", "--count", "40", "--out", str(inst)]) == EXIT_OK
    ground = tmp_path / "ground.csv"
    assert main(["solve", "--instances", str(inst), "--out", str(ground)]) == EXIT_OK
    return inst, ground


def ground_map(path):
    return {int(r["instance_id"]): int(r["E0"]) for r in csv.DictReader(open(path))}


def test_generate_and_solve(solved):
    inst, ground = solved
    files = sorted(inst.glob("*.txt"))
    assert len(files) == 40 and files[0].name == "00000.txt"
    assert read_instance(files[0], 0).graph.n == 8
    e0 = ground_map(ground)
    assert sorted(e0) == list(range(40)) and all(-16 <= e <= -4 for e in e0.values())


def test_anneal_uses_tts_streams(solved, tmp_path, capsys):
    inst, ground = solved
    E0 = ground_map(ground)[2]
    args = ["anneal", "--seed", "5", "--instance", str(inst / "00002.txt"), "--algorithm", "mfa",
            "--beta", "1", "--t-a", "3", "--repetitions", "30"]
    assert main(args + ["--E0", str(E0)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "run_index,success_fraction,final_energy" and len(lines) == 31
    assert all(int(l.split(",")[2]) >= E0 for l in lines[1:])
    # E0 is solved when omitted; --out writes the same table
    out = tmp_path / "a.csv"
    assert main(args + ["--out", str(out)]) == EXIT_OK
    assert out.read_text().splitlines() == lines
    # tts capped at 30 repetitions sees exactly these runs
    single = tmp_path / "single"
    single.mkdir()
    shutil.copy(inst / "00002.txt", single)
    tts = tmp_path / "t.csv"
    assert main(["tts", "--seed", "5", "--instances", str(single), "--ground", str(ground),
                 "--algorithm", "mfa", "--beta", "1", "--t-a", "3", "--cap", "30",
                 "--target-successes", "30", "--out", str(tts)]) == EXIT_OK
    rec = harness.read_tts_csv(tts)[0]
    assert rec.repetitions == 30
    assert rec.successes == sum(float(l.split(",")[1]) for l in lines[1:])


def test_tts_scan_and_fit(solved, tmp_path):
    inst, ground = solved
    common = ["--seed", "1", "--instances", str(inst), "--ground", str(ground), "--target-successes", "5",
              "--cap", "1000"]
    tts = tmp_path / "tts.csv"
    assert main(["tts", *common, "--algorithm", "mfa", "--beta", "2", "--t-a", "4", "--out", str(tts),
                 "--threads", "3"]) == EXIT_OK
    recs = harness.read_tts_csv(tts)
    assert [r.instance_id for r in recs] == list(range(40))

    scan = tmp_path / "scan.json"
    assert main(["scan-ta", *common, "--algorithm", "sa", "--grid", "2,4,8", "--n-boot", "20",
                 "--out", str(scan)]) == EXIT_OK
    payload = json.loads(scan.read_text())
    assert payload["axis"] == "t_a" and payload["t_a_opt"] in (2, 4, 8)

    bscan = tmp_path / "bscan.json"
    assert main(["scan-beta", *common, "--algorithm", "mfa", "--grid", "2,4", "--beta-grid", "1,2",
                 "--n-boot", "20", "--out", str(bscan)]) == EXIT_OK
    payload = json.loads(bscan.read_text())
    assert payload["axis"] == "beta" and payload["optimum"] in (1.0, 2.0)

    tail = tmp_path / "tail"
    code = main(["fit-tail", "--tts", str(tts), "--scan", "30,39,50", "--out", str(tail)])
    rows = json.loads((tail / "scan.json").read_text())
    assert [r["k"] for r in rows] == [50, 39, 30] and "error" in rows[0]
    assert code == EXIT_OK


def test_fit_tail_writes_fit_and_diagnostics(tmp_path):
    import numpy as np
    from annealtails import evt

    taus = 1 + evt.gpd_quantile(evt.GpdParams(0.5, 0.0, 1.0), np.random.default_rng(0).random(400))
    recs = [harness.TtsRecord(i, 1 / t, t, 10, 10 / t) for i, t in enumerate(taus)]
    path = tmp_path / "t.csv"
    harness.write_tts_csv(recs, path)
    assert main(["fit-tail", "--tts", str(path), "--k", "200", "--out", str(tmp_path / "o")]) == EXIT_OK
    fit = json.loads((tmp_path / "o" / "fit.json").read_text())
    assert fit["k"] == 200 and abs(fit["xi"] - 0.5) < 3 * fit["xi_se"]
    assert len((tmp_path / "o" / "pp.csv").read_text().splitlines()) == 201
    assert len((tmp_path / "o" / "qq.csv").read_text().splitlines()) == 201
    # too few exceedances is a stage failure
    assert main(["fit-tail", "--tts", str(path), "--k", "10", "--out", str(tmp_path / "p")]) == EXIT_STAGE


def write_config(tmp_path, **changes):
    cfg = {"seed": 2, "sizes": [1], "instances": 20, "target_successes": 5, "cap": 500, "n_boot": 20,
           "algorithms": [{"name": "sa", "algorithm": "sa", "t_a_grid": [2, 4]}],
           "tail": {"k_grid": [5]}, **changes}
    p = tmp_path / "campaign.yaml"
    p.write_text(yaml.safe_dump(cfg))
    return p


def test_pipeline_resume_and_report(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["pipeline", str(cfg), "--out", str(out), "--stop-after", "tts"]) == EXIT_OK
    assert json.loads((out / "manifest.json").read_text())["stages"] == ["generate", "solve", "tts"]
    assert main(["resume", str(cfg), "--out", str(out)]) == EXIT_OK
    capsys.readouterr()
    assert main(["report", str(cfg), "--out", str(out)]) == EXIT_OK
    assert capsys.readouterr().out.startswith("algorithm,N,t_a,median_tau")

    again = tmp_path / "again"
    assert main(["pipeline", str(cfg), "--out", str(again), "--threads", "4"]) == EXIT_OK
    assert (again / "manifest.json").read_bytes() == (out / "manifest.json").read_bytes()

    # editing the config is refused on resume; --seed overrides the file
    assert main(["resume", str(write_config(tmp_path, cap=600)), "--out", str(out)]) == EXIT_CONFIG
    assert main(["resume", str(cfg), "--seed", "9", "--out", str(out)]) == EXIT_CONFIG


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["generate", "--L", "1"],
    ["generate", "--seed", "1", "--L", "0"],
    ["anneal", "--seed", "1", "--instance", "x", "--algorithm", "sqa", "--t-a", "5"],
    ["tts", "--seed", "1", "--instances", "x", "--ground", "g", "--algorithm", "sa", "--t-a", "x"],
    ["fit-tail", "--tts", "x"],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == EXIT_CONFIG


def test_config_errors_exit_2(tmp_path):
    assert main(["pipeline", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [unclosed\n")
    assert main(["pipeline", str(bad)]) == EXIT_CONFIG
    assert main(["pipeline", str(write_config(tmp_path, sizes=[7]))]) == EXIT_CONFIG


def test_stage_errors_exit_3(solved, tmp_path):
    inst, ground = solved
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / "00000.txt").write_text("chimera 1 8 0\n0 4 5\n")
    assert main(["solve", "--instances", str(broken), "--out", str(tmp_path / "g.csv")]) == EXIT_STAGE
    assert main(["solve", "--instances", str(inst), "--max-L", "0", "--out", str(tmp_path / "g.csv")]) == EXIT_STAGE
    assert main(["anneal", "--seed", "1", "--instance", str(tmp_path / "nope.txt"), "--algorithm", "sa",
                 "--t-a", "5"]) == EXIT_STAGE


def test_console_script(tmp_path):
    exe = shutil.which("annealtails") or pytest.skip("console script not installed")
    res = subprocess.run([exe, "generate", "--seed", "1", "--L", "2", "--count", "2", "--out",
                          str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0 and "wrote 2 instances" in res.stdout
    res = subprocess.run([sys.executable, "-m", "annealtails.cli", "pipeline"], capture_output=True)
    assert res.returncode == EXIT_CONFIG
