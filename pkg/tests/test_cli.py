import json

import pytest

from singbsde.cli import (ConfigError, emit_plot_data, load_config, main, output_root,
                          parse_config, run_experiment)

MINIMAL = """\
experiment: ladder-deterministic
q: 2
T: 1
k_list: [1, 10, 100]
"""

SMALL = {
    "ladder-deterministic": "experiment: ladder-deterministic\nn_paths: 200\nn_steps: 50\n",
    "ladder-exit": ("experiment: ladder-exit\nn_paths: 2000\nn_steps: 100\nt_max: 4\n"
                    "k_list: [5, 10]\nn_list: [1, 2]\n"),
    "xi2": "experiment: xi2\nn_paths: 2000\nn_steps: 100\nt_max: 4\nk_list: [5, 10]\nstride: 5\n",
    "pde-crosscheck": "experiment: pde-crosscheck\nm: 199\n",
    "oracle-table": "experiment: oracle-table\nn_list: [5, 50]\n",
}


def test_minimal_config_is_valid():
    cfg = parse_config(MINIMAL)
    assert cfg.q == 2.0 and cfg.t_max == 1.0 and cfg.k_list == (1.0, 10.0, 100.0)
    assert cfg.experiment == "ladder-deterministic"


def test_bad_q_rejected():
    with pytest.raises(ConfigError, match="q must exceed 1"):
        parse_config(MINIMAL.replace("q: 2", "q: 0.5"))


def test_unknown_key_named_with_line():
    with pytest.raises(ConfigError, match=r"line 5: unknown key 'qq'"):
        parse_config(MINIMAL + "qq: 3\n")


def test_type_mismatch_reports_line():
    with pytest.raises(ConfigError, match=r"line 4: key 'k_list'"):
        parse_config(MINIMAL.replace("[1, 10, 100]", "lots"))


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="line 5"):
        parse_config(MINIMAL + "q: 3\n")


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "nope.yaml")


def test_output_root(monkeypatch, tmp_path):
    monkeypatch.setenv("SINGBSDE_OUT", str(tmp_path / "env"))
    assert output_root() == tmp_path / "env"
    assert output_root(tmp_path / "cli") == tmp_path / "cli"
    monkeypatch.delenv("SINGBSDE_OUT")
    assert str(output_root()) == "runs"


def _bodies(directory):
    return {name: (directory / name).read_bytes() for name in ("summary.csv", "curves.csv", "checks.csv")}


@pytest.mark.parametrize("kind", sorted(SMALL))
def test_runs_are_byte_identical(kind, tmp_path):
    cfg = parse_config(SMALL[kind])
    a = run_experiment(cfg, tmp_path / "a", threads=1)
    b = run_experiment(cfg, tmp_path / "b", threads=4)
    assert _bodies(a.directory) == _bodies(b.directory)
    meta = json.loads((a.directory / "meta.json").read_text())
    assert meta["seed"] == cfg.seed and meta["config"]["experiment"] == kind


def test_pde_crosscheck_passes(tmp_path):
    art = run_experiment(parse_config("experiment: pde-crosscheck\n"), tmp_path)
    assert art.passed
    assert art.checks and all(passed for _, _, _, passed in art.checks)


def test_oracle_table_reports_vstar(tmp_path):
    art = run_experiment(parse_config(SMALL["oracle-table"]), tmp_path)
    limit = [row for row in art.summary if row[0] == float("inf")]
    assert limit and limit[0][1] == pytest.approx(1.31102877714606, abs=1e-10)
    assert art.passed


def test_emit_plot_data(tmp_path):
    art = run_experiment(parse_config(SMALL["ladder-deterministic"]), tmp_path)
    paths = emit_plot_data(art.directory)
    names = {p.name for p in paths}
    assert "ladder.dat" in names
    rows = [l for l in (art.directory / "ladder.dat").read_text().splitlines() if not l.startswith("#")]
    assert len(rows) == 4 and rows[0].split()[0] == "0.0"


def test_emit_plot_data_three_points(tmp_path):
    d = tmp_path / "run"
    d.mkdir()
    (d / "summary.csv").write_text("k,y0,stderr,oracle,oracle_source,rel_error\n")
    (d / "curves.csv").write_text("curve_id,t,value,stderr\nc,0.0,1.0,0.1\nc,0.5,0.5,0.1\nc,1.0,0.1,0.05\n"
                                  "e,0.0,nan,nan\n")
    (d / "meta.json").write_text(json.dumps({"curves": ["c", "empty"]}))
    with pytest.warns(UserWarning, match="no points"):
        paths = emit_plot_data(d)
    body = [l.split() for l in (d / "c.dat").read_text().splitlines() if not l.startswith("#")]
    assert len(body) == 3
    assert float(body[0][2]) == pytest.approx(0.8) and float(body[0][3]) == pytest.approx(1.2)
    empty = (d / "empty.dat").read_text().splitlines()
    assert all(l.startswith("#") for l in empty)
    assert len(paths) == 2


def test_emit_plot_data_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        emit_plot_data(tmp_path)


def test_main_exit_codes(tmp_path, capsys):
    assert main(["pde", "--m", "199", "--out", str(tmp_path)]) == 0
    bad = tmp_path / "bad.yaml"
    bad.write_text(MINIMAL + "qq: 1\n")
    assert main(["experiment", str(bad), "--out", str(tmp_path)]) == 2
    assert "qq" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "missing")]) == 2
    # a coarse mesh misses the finite-difference tolerance
    assert main(["pde", "--m", "9", "--out", str(tmp_path)]) == 1


def test_main_simulate(tmp_path):
    assert main(["simulate", "--n-paths", "50", "--n-steps", "20", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "simulate" / "bundle.bin").is_file()
