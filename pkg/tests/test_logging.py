import json
import logging

import pytest

from singular_control_hub.core.exceptions import ConfigurationError
from singular_control_hub.core.grids import SpaceGrid, TimeGrid
from singular_control_hub.decorators import log_action
from singular_control_hub.logging_config import HumanReadableFormatter, JSONFormatter


@log_action("DEMO")
def demo_solver(spec, tgrid, sgrid, fail=False):
    if fail:
        raise ConfigurationError("max_substeps", "бюджет исчерпан")
    return (0, {})


class _Named:
    name = "section4"


def action_records(caplog):
    return [record for record in caplog.records if hasattr(record, "action_data")]


def test_successful_call_is_logged_with_grid_sizes(caplog):
    with caplog.at_level(logging.INFO, logger="singular_control_hub"):
        demo_solver(_Named(), TimeGrid(0.0, 1.0, 20), SpaceGrid.uniform([-2.0], [2.0], 0.05))
    data = action_records(caplog)[-1].action_data
    assert data["action"] == "DEMO"
    assert data["result"] == "OK"
    assert data["problem"] == "section4"
    assert data["params"]["tgrid.N"] == 20
    assert data["params"]["sgrid.counts"] == "81"
    assert data["metrics"] == {"exit_code": 0}


def test_failure_is_logged_and_reraised(caplog):
    with caplog.at_level(logging.INFO, logger="singular_control_hub"):
        with pytest.raises(ConfigurationError):
            demo_solver(_Named(), TimeGrid(0.0, 1.0, 2), SpaceGrid.uniform([0.0], [1.0], 0.5), fail=True)
    record = action_records(caplog)[-1]
    assert record.levelno == logging.ERROR
    assert record.action_data["error_type"] == "ConfigurationError"


def test_formatters_render_action_data():
    record = logging.LogRecord("singular_control_hub", logging.INFO, "", 0, "SOLVE", (), None)
    record.action_data = {"action": "SOLVE", "result": "OK", "problem": "wang", "params": {"dx": 0.1},
                          "elapsed_ms": 12.345}
    human = HumanReadableFormatter().format(record)
    assert "action=SOLVE" in human and "problem='wang'" in human and "elapsed_ms=12.3" in human
    payload = json.loads(JSONFormatter().format(record))
    assert payload["action"] == "SOLVE"
    assert payload["params"] == {"dx": 0.1}
