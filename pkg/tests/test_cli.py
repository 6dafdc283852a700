import json

import pytest
from click.testing import CliRunner

from dampwave.cli import main
from dampwave.io import read_csv


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


def _report(out_dir, kind: str) -> dict:
    return json.loads((out_dir / kind / "report.json").read_text())


def test_spectrum_constant_damping(runner, tmp_path) -> None:
    res = runner.invoke(main, ["spectrum", "-K", "16", "--damping", "constant", "--damping-param", "c=1.0",
                               "--output-dir", str(tmp_path), "-q"])
    assert res.exit_code == 0, res.output
    rep = _report(tmp_path, "spectrum")
    assert rep["summary"]["n_eigenvalues"] == 66
    assert rep["summary"]["n_upper_half_plane"] == 33
    _, header, body = read_csv(tmp_path / "spectrum" / "eigenvalues.csv")
    assert header == ["re", "im"]
    assert body.shape == (66, 2)
    assert body[:, 0].tolist() == pytest.approx([-0.5] * 66)


def test_run_from_config_file(runner, tmp_path) -> None:
    cfg = tmp_path / "scan.toml"
    cfg.write_text(
        'kind = "scan"\n'
        f'output_dir = "{tmp_path / "out"}"\n'
        "[manifold]\nK = 8\n"
        '[damping]\nfamily = "bump"\n[damping.params]\nradius = 2.0\n'
        "[params]\nn = 51\n"
    )
    res = runner.invoke(main, ["run", str(cfg)])
    assert res.exit_code == 0, res.output
    assert "PASS  scan-symmetric" in res.output
    rep = _report(tmp_path / "out", "scan")
    assert rep["config"]["damping"]["params"] == {"radius": 2.0}
    assert rep["artifacts"][-1]["sha256"] is None


def test_config_error_exit_code(runner, tmp_path) -> None:
    res = runner.invoke(main, ["scan", "-K", "0", "--output-dir", str(tmp_path)])
    assert res.exit_code == 2
    assert "manifold.K" in res.output
    res = runner.invoke(main, ["scan", "--set", "n=1", "--output-dir", str(tmp_path)])
    assert res.exit_code == 2
    assert "params.n" in res.output


def test_kind_mismatch_is_config_error(runner, tmp_path) -> None:
    cfg = tmp_path / "c.toml"
    cfg.write_text('kind = "scan"\n')
    res = runner.invoke(main, ["evolve", str(cfg)])
    assert res.exit_code == 2


def test_infeasible_exit_code(runner, tmp_path) -> None:
    res = runner.invoke(main, ["mix-scan", "-K", "16", "--damping", "bump", "--output-dir", str(tmp_path)])
    assert res.exit_code == 3
    assert "needs K >=" in res.output


def test_environment_override(runner, tmp_path) -> None:
    env_dir = tmp_path / "env"
    res = runner.invoke(main, ["gcc", "-K", "4", "-q"], env={"DAMPWAVE_OUTPUT_DIR": str(env_dir)})
    assert res.exit_code == 0, res.output
    assert (env_dir / "gcc" / "report.json").exists()
    flag_dir = tmp_path / "flag"
    res = runner.invoke(main, ["gcc", "-K", "4", "-q", "--output-dir", str(flag_dir)],
                        env={"DAMPWAVE_OUTPUT_DIR": str(env_dir)})
    assert (flag_dir / "gcc" / "report.json").exists()


def test_rerun_is_byte_identical(runner, tmp_path) -> None:
    args = ["evolve", "-K", "6", "--damping", "bump", "--set", "T=2.0", "--set", "n_states=2",
            "--seed", "5", "--output-dir", str(tmp_path), "-q"]
    assert runner.invoke(main, args).exit_code == 0
    first = {p.name: p.read_bytes() for p in (tmp_path / "evolve").glob("*.csv")}
    assert runner.invoke(main, args).exit_code == 0
    second = {p.name: p.read_bytes() for p in (tmp_path / "evolve").glob("*.csv")}
    assert first == second and len(first) == 2


def test_workers_give_same_tables(runner, tmp_path) -> None:
    base = ["mollify", "--damping", "hoelder", "--set", "eps_grid=[0.25, 0.125]", "--set", "grid=4096", "-q"]
    assert runner.invoke(main, base + ["--output-dir", str(tmp_path / "a")]).exit_code == 0
    assert runner.invoke(main, base + ["--workers", "2", "--output-dir", str(tmp_path / "b")]).exit_code == 0
    a = (tmp_path / "a" / "mollify" / "mollify.csv").read_text().split("\n")
    b = (tmp_path / "b" / "mollify" / "mollify.csv").read_text().split("\n")
    # only the echoed config (workers, output_dir) differs
    assert [l for l in a if not l.startswith("#")] == [l for l in b if not l.startswith("#")]


def test_version(runner) -> None:
    res = runner.invoke(main, ["--version"])
    assert res.exit_code == 0
    assert "0.1.0" in res.output
