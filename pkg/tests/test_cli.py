import numpy as np
import pytest

from singular_control_hub.cli.interface import CLIInterface, parse_config, render_config
from singular_control_hub.core import usecases
from singular_control_hub.core.exceptions import ConfigurationError
from singular_control_hub.infra.storage import ArtifactStorage

COARSE = ["--dx", "0.1", "--control", "3", "--steps", "10"]


def run_cli(argv):
    lines = []
    status = CLIInterface(printer=lines.append).run(argv)
    return status, "\n".join(lines)


def test_empty_config_names_missing_subcommand():
    with pytest.raises(ConfigurationError) as info:
        parse_config("")
    assert info.value.key == "subcommand"


def test_negative_dx_is_rejected_with_its_bound():
    with pytest.raises(ConfigurationError) as info:
        parse_config("subcommand = solve\ndx = -0.01\n")
    assert info.value.key == "dx"
    assert "> 0" in info.value.reason


@pytest.mark.parametrize(
    "text, key",
    [
        ("subcommand = solve\nsubcommand = check\n", "subcommand"),
        ("subcommand = solve\nspeed = 3\n", "speed"),
        ("subcommand = solve\nproblem.sigma = 1\n", "problem.sigma"),
        ("subcommand = solve\nsteps = 0\n", "steps"),
        ("subcommand = solve\nx_min = 1\nx_max = 0\n", "x_min"),
        ("subcommand = check\nchecks = jump,magic\n", "checks"),
        ("subcommand = solve\nproblem = nope\n", "problem"),
        ("subcommand = solve\njust text\n", "line 2"),
    ],
)
def test_strict_parsing_errors(text, key):
    with pytest.raises(ConfigurationError) as info:
        parse_config(text)
    assert info.value.key == key


def test_render_then_parse_gives_same_config():
    config = parse_config(
        "# пример\n"
        "subcommand = check\n"
        "problem = linear_fk\n"
        "problem.c = 2\n"
        "dx = 0.05\n"
        "dt = auto\n"
        "point = 0,0.5\n"
        "checks = jump,inaction\n"
    )
    assert config.checks == ("inaction", "jump")
    assert config.params == {"c": 2.0}
    assert config.dt is None
    assert parse_config(render_config(config)) == config


def test_flags_override_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("subcommand = solve\ndx = 0.5\nproblem = wang\n", encoding="utf-8")
    config = CLIInterface().load_config(["--config", str(path), "--dx", "0.1", "--param", "mu=0.5"])
    assert config.subcommand == "solve"
    assert config.dx == 0.1
    assert config.problem == "wang"
    assert config.params == {"mu": 0.5}


def test_solve_writes_terminal_row_equal_to_terminal_function(tmp_path):
    status, output = run_cli(["solve", "--problem", "section4", *COARSE, "--output-dir", str(tmp_path)])
    assert status == 0, output
    header, table = ArtifactStorage(tmp_path).read_table("surface.csv")
    assert header == ["t", "x_1", "u"]
    terminal = table[table[:, 0] == 1.0]
    assert terminal.shape[0] == 41
    assert np.array_equal(terminal[:, 2], terminal[:, 1])
    assert (tmp_path / "inaction.csv").exists()
    assert "inaction_fraction" in ArtifactStorage(tmp_path).read_report()


def test_solve_output_is_reproducible(tmp_path):
    for name in ("first", "second"):
        status, _ = run_cli(["solve", "--problem", "linear_fk", *COARSE, "--output-dir", str(tmp_path / name)])
        assert status == 0
    first = (tmp_path / "first" / "surface.csv").read_bytes()
    assert first == (tmp_path / "second" / "surface.csv").read_bytes()


def test_example_prints_closed_form_value(tmp_path):
    status, output = run_cli(["example", "--point", "0,1", *COARSE, "--output-dir", str(tmp_path)])
    assert status == 0
    assert "0.36788" in output
    assert output.startswith("example [section4]")


def test_selected_checks_pass_on_section4(tmp_path):
    status, output = run_cli(
        ["check", "--check", "jump", "--check", "inaction", *COARSE, "--output-dir", str(tmp_path)]
    )
    assert status == 0, output
    report = ArtifactStorage(tmp_path).read_report()
    assert report["check.jump.passed"] == "1"
    assert report["checks_passed"] == "1"
    assert "check.viscosity.passed" not in report


def test_failed_check_exits_with_two(tmp_path, monkeypatch):
    monkeypatch.setitem(usecases._CHECKS, "jump", lambda ctx: (False, {"forced": 1}))
    status, output = run_cli(["check", "--check", "jump", *COARSE, "--output-dir", str(tmp_path)])
    assert status == 2
    assert "check.jump.forced" in output


def test_simulate_and_oracle_subcommands(tmp_path):
    status, _ = run_cli(["simulate", "--problem", "linear_fk", "--paths", "500", "--mc-steps", "10",
                         "--point", "0,0.5", "--output-dir", str(tmp_path)])
    assert status == 0
    report = ArtifactStorage(tmp_path).read_report()
    assert abs(float(report["cost"]) - 1.5) <= 3.0 * float(report["cost_se"]) + 1e-9
    assert (tmp_path / "paths.csv").exists()

    status, _ = run_cli(["oracle", "--problem", "linear_fk", *COARSE, "--output-dir", str(tmp_path)])
    assert status == 0
    assert float(ArtifactStorage(tmp_path).read_report()["max_interior_error"]) <= 1e-2


@pytest.mark.parametrize(
    "argv, fragment",
    [
        (["solve", "--dx", "-0.01"], "dx"),
        (["solve", "--problem", "nope"], "nope"),
        (["solve", "--bogus"], "Использование"),
        ([], "subcommand"),
    ],
)
def test_errors_exit_with_one(argv, fragment, tmp_path):
    status, output = run_cli([*argv, "--output-dir", str(tmp_path)])
    assert status == 1
    assert fragment in output
