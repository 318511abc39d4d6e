import csv
import json
import os

import numpy as np
import pytest

from hardyhall.cli import main, read_config
from hardyhall.sections import Section, Window, hall_certificate
from hardyhall.specfun import theta


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_paircorr_gue_only(tmp_path, capsys):
    assert main(["paircorr", "--f", "sinc2", "--gue-only", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out.strip()
    assert out == "0.333333" and abs(float(out) - 1 / 3) <= 1e-6


def test_zeros_core_window(tmp_path):
    assert main(["zeros", "--n", "100", "--source", "zero", "--out", str(tmp_path)]) == 0
    want = round((theta(202.0) - theta(200.0)) / np.pi)
    assert len(rows(tmp_path / "zeros.csv")) == want


def test_zeros_acc_certified(tmp_path):
    assert main(["zeros", "--n", "50", "--source", "acc", "--out", str(tmp_path)]) == 0
    info = json.loads((tmp_path / "hall.json").read_text())
    assert info[0]["hall"]["certified"] is True


def test_zeros_random_fig1(tmp_path):
    argv = ["zeros", "--lo", "755", "--hi", "965", "--order", "300", "--source", "random", "--seed", "7"]
    assert main(argv + ["--out", str(tmp_path)]) == 0
    assert abs(len(rows(tmp_path / "zeros.csv")) - 164) <= 2


def test_range_and_workers_multiset(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    base = ["zeros", "--n", "60:66", "--source", "ones", "--pad-lo", "1", "--pad-hi", "1"]
    assert main(base + ["--out", str(a)]) == 0
    assert main(base + ["--out", str(b), "--workers", "2"]) == 0
    ra = (a / "zeros.csv").read_text().splitlines()
    rb = (b / "zeros.csv").read_text().splitlines()
    assert sorted(ra) == sorted(rb) and len({r.split(",")[0] for r in ra[1:]}) == 6


def test_invalid_config_exit_3(tmp_path, capsys):
    assert main(["zeros", "--n", "10", "--out", str(tmp_path)]) == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "invalid_config"
    assert main(["zeros", "--source", "bogus", "--n", "100", "--out", str(tmp_path)]) == 3
    assert main([]) == 3
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("command = zeros\nnonsense = 1\n")
    assert main(["zeros", "--config", str(cfg), "--out", str(tmp_path)]) == 3


def test_certification_failure_exit_2(tmp_path, capsys):
    N = next(n for n in range(100, 200) if not hall_certificate(Section.ones(n), Window.critical(n)).certified)
    assert main(["hall-check", "--n", str(N), "--source", "ones", "--out", str(tmp_path)]) == 2
    assert main(["hall-check", "--n", "100", "--source", "ones", "--out", str(tmp_path / "ok")]) == 0


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\ncommand = zeros\nn = 100\nsource = ones\npad-lo = 1.5\n")
    assert read_config(cfg)["pad_lo"] == "1.5"
    out = tmp_path / "o"
    assert main(["zeros", "--config", str(cfg), "--source", "zero", "--out", str(out)]) == 0
    man = read_config(out / "manifest.cfg")
    assert man["source"] == "zero" and man["n"] == "100" and man["pad_lo"] == "1.5"
    # Replaying the manifest reproduces the CSV byte for byte.
    out2 = tmp_path / "o2"
    assert main(["zeros", "--config", str(out / "manifest.cfg"), "--out", str(out2)]) == 0
    assert (out / "zeros.csv").read_bytes() == (out2 / "zeros.csv").read_bytes()


def test_dbm_then_spacings(tmp_path, capsys):
    d = tmp_path / "d"
    assert main(["dbm", "--m", "200", "--count", "100000", "--seed", "1", "--out", str(d)]) == 0
    capsys.readouterr()
    assert main(["spacings", "--input", str(d / "spacings.csv"), "--out", str(tmp_path / "s")]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["count"] == 100000 and res["ks_surmise"] <= 0.03
    hist = rows(tmp_path / "s" / "histogram.csv")
    assert len(hist) == 40


def test_spacings_from_zeros(tmp_path, capsys):
    z = tmp_path / "z"
    assert main(["zeros", "--n", "100", "--pad-lo", "10", "--pad-hi", "10", "--source", "ones", "--out", str(z)]) == 0
    capsys.readouterr()
    assert main(["spacings", "--input", str(z / "zeros.csv"), "--out", str(tmp_path / "s")]) == 0
    assert json.loads(capsys.readouterr().out)["mean"] == pytest.approx(1.0)


def test_simulate_and_paircorr(tmp_path, capsys):
    s = tmp_path / "sim"
    assert main(["simulate", "--n", "50", "--horizon", "0.0002", "--trajectories", "2", "--out", str(s)]) == 0
    assert sorted(os.listdir(s)) == ["brackets.csv", "manifest.cfg", "traj_0000", "traj_0001"]
    assert main(["paircorr", "--n", "100:104", "--source", "ones", "--f", "bump:2", "--out", str(tmp_path / "pc")]) == 0
    assert len(rows(tmp_path / "pc" / "paircorr.csv")) == 4


def test_report_subset(tmp_path):
    assert main(["report", "--suite", "acceptance", "--criteria", "10,4", "--out", str(tmp_path)]) == 0
    summ = json.loads((tmp_path / "summary.json").read_text())
    assert summ["total"] == 2 and all("passed" in r for r in summ["results"])
    assert main(["report", "--suite", "nope", "--out", str(tmp_path)]) == 3
