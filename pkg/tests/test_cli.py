import csv
import json

import pytest

from conftest import scaled_config
from vrlab.cli import build_parser, main
from vrlab.pipeline import emit_report
from vrlab.radiation import RadiationReport


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "small.cfg"
    cfg_path.write_text(scaled_config("plasma_dipole", particles=500).text)
    code = main(["run", str(cfg_path), "--out", str(root / "out"), "--threads", "2"])
    return root, cfg_path, root / "out", code


def test_parser_subcommands():
    p = build_parser()
    args = p.parse_args(["run", "plasma_dipole", "--seed", "4", "--tolerance-scale", "2"])
    assert args.command == "run" and args.seed == 4 and args.tolerance_scale == 2.0
    with pytest.raises(SystemExit):
        p.parse_args(["frobnicate"])


def test_run_writes_artifacts(small_run):
    _, cfg_path, out, code = small_run
    for name in ("scenario.cfg", "summary.json", "report.json", "report.csv", "identities.csv",
                 "history/frames.bin", "history/moments.bin", "history/scalars.csv", "history/meta.json"):
        assert (out / name).exists(), name
    assert (out / "scenario.cfg").read_text() == cfg_path.read_text()
    summary = json.loads((out / "summary.json").read_text())
    assert code == (0 if summary["passed"] else 1)
    with open(out / "identities.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert summary["identity_rows"] == len(rows)
    assert summary["identities_passed"] == sum(r["pass"] == "true" for r in rows)
    assert summary["scan_points"] == len((out / "report.csv").read_text().splitlines()) - 1
    assert summary["n_particles"] == 1000


def test_report_command(small_run, capsys):
    _, _, out, _ = small_run
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "dipole radiation (EM)" in text and "== identities:" in text and "overall:" in text
    assert text == emit_report(out)


def test_report_without_scan_points(small_run, tmp_path):
    _, _, out, _ = small_run
    for name in ("summary.json", "report.csv", "identities.csv"):
        (tmp_path / name).write_bytes((out / name).read_bytes())
    rep = RadiationReport.from_json((out / "report.json").read_text())
    rep.points, rep.fits = [], []
    (tmp_path / "report.json").write_text(rep.to_json())
    assert "no scan points" in emit_report(tmp_path)


def test_report_missing_files(tmp_path, capsys):
    (tmp_path / "summary.json").write_text("{}")
    assert main(["report", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "report.json" in err and "identities.csv" in err and "summary.json" not in err.split("missing:")[1]


def test_identities_and_scan_commands(small_run, tmp_path, capsys):
    _, cfg_path, out, _ = small_run
    code = main(["identities", str(out / "history"), "--out", str(tmp_path / "ids.csv")])
    assert (tmp_path / "ids.csv").read_text() == (out / "identities.csv").read_text()
    assert code in (0, 1)
    assert main(["scan", str(out / "history"), str(cfg_path), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "report.csv").read_text() == (out / "report.csv").read_text()
    assert "r_exponent" in capsys.readouterr().out


def test_run_rejects_invalid_config(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text(scaled_config("plasma_dipole").text.replace("c = 8, 16, 32", "c = 0.1, 16"))
    assert main(["run", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "c ≥ 2P1" in capsys.readouterr().err
    assert main(["run", "no_such_scenario"]) == 2


def test_default_output_root(small_run, tmp_path, monkeypatch):
    _, cfg_path, _, _ = small_run
    monkeypatch.setenv("VRL_DATA_DIR", str(tmp_path))
    main(["run", str(cfg_path)])
    assert (tmp_path / "plasma_dipole" / "summary.json").exists()
