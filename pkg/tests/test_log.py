import json
import logging

import structlog

from src.td_regularization.log import configure_logging


def test_json_logs_go_through_the_root_logger(caplog):
    configure_logging("DEBUG", json_output=True)
    with caplog.at_level(logging.DEBUG):
        structlog.get_logger("td_regularization.test").info("evaluation", step=3, expected_return=-1.5)
    event = json.loads(caplog.records[-1].getMessage())
    assert event["event"] == "evaluation"
    assert event["step"] == 3
    assert event["level"] == "info"


def test_level_filters_debug_events(caplog):
    configure_logging("WARNING")
    with caplog.at_level(logging.WARNING):
        structlog.get_logger("td_regularization.test").debug("hidden")
    assert not [r for r in caplog.records if "hidden" in r.getMessage()]
