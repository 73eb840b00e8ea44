import json

from click.testing import CliRunner

from actcluster.cli import main, build_config, _parse_config_file


def _synth(runner, path, **kw):
    args = ["synth", "--out", path,
            "--classes", str(kw.get("classes", 2)),
            "--subjects", str(kw.get("subjects", 2)),
            "--span-len", "512", "--spans", str(kw.get("spans", 6)),
            "--seed", "0"]
    if "offset_scale" in kw:
        args += ["--offset-scale", str(kw["offset_scale"])]
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output
    return result


def test_synth_writes_canonical(tmp_path):
    runner = CliRunner()
    path = str(tmp_path / "synth.csv")
    result = _synth(runner, path)
    assert "2 subjects" in result.output
    header = open(path, encoding="utf-8").readline().strip()
    assert header == "subject,label,t,c0,c1,c2"


def test_adapt_wisdm(tmp_path):
    raw = tmp_path / "raw.txt"
    raw.write_text("33,Jogging,1,0.1,0.2,0.3;\nbroken\n", encoding="utf-8")
    out = str(tmp_path / "canon.csv")
    result = CliRunner().invoke(main, ["adapt-wisdm", str(raw), out])
    assert result.exit_code == 0, result.output
    assert "1 rows" in result.output
    assert "skipped 1" in result.output


def test_run_baseline_end_to_end(tmp_path):
    runner = CliRunner()
    data = str(tmp_path / "d.csv")
    _synth(runner, data)
    out = str(tmp_path / "res.json")
    result = runner.invoke(main, ["run", "--data", data, "--baseline",
                                  "--seed", "0", "--out", out])
    assert result.exit_code == 0, result.output
    assert "window-wise" in result.output
    assert "point-wise" in result.output
    parsed = json.load(open(out, encoding="utf-8"))
    assert set(parsed["metrics"]) == {"window", "point"}
    for v in parsed["metrics"]["window"].values():
        assert 0.0 <= v <= 100.0


def test_table2_four_columns(tmp_path):
    runner = CliRunner()
    data = str(tmp_path / "d.csv")
    _synth(runner, data, spans=4)
    out = str(tmp_path / "t2.json")
    result = runner.invoke(main, ["table2", "--data", data, "--seed", "0",
                                  "--out", out])
    assert result.exit_code == 0, result.output
    parsed = json.load(open(out, encoding="utf-8"))
    cols = set(parsed["results"])
    assert cols == {"window-wise subject-dependent",
                    "point-wise subject-dependent",
                    "window-wise subject-independent",
                    "point-wise subject-independent"}
    for line in ("ACC", "NMI", "ARI", "F1"):
        assert line in result.output


def test_config_file_parsing_and_override(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# comment\nstep = 50\nseed = 7\nuse_gmm = true\n",
                        encoding="utf-8")
    values = _parse_config_file(str(cfg_file))
    assert values == {"step": "50", "seed": "7", "use_gmm": "true"}
    config = build_config(str(cfg_file), seed=9)
    assert config.step == 50
    assert config.seed == 9  # explicit flag wins
    assert config.use_gmm is True


def test_config_file_unknown_key(tmp_path):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("no_such_option = 1\n", encoding="utf-8")
    result = CliRunner().invoke(main, ["run", "--data", str(cfg_file),
                                       "--config", str(cfg_file)])
    assert result.exit_code != 0
    assert "unknown config key" in result.output


def test_config_file_malformed_line(tmp_path):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("just words\n", encoding="utf-8")
    result = CliRunner().invoke(main, ["run", "--data", str(cfg_file),
                                       "--config", str(cfg_file)])
    assert result.exit_code != 0
    assert "expected key = value" in result.output
