import logging
from unittest.mock import patch

from src.core.logger import log_setup as log_setup_module
from src.core.logger.log_setup import SimTimeFilter, log_setup
from src.core.logger.logger import Logger


class Replica(Logger):
    pass


def test_logger_names():
    assert Logger("consensus").log.name == "iob.consensus"
    assert Replica().log.name == "iob.Replica"


def test_logger_is_created_once():
    replica = Replica()
    assert replica.log is replica.log


def _record():
    return logging.LogRecord("iob.test", logging.INFO, __file__, 1, "msg", None, None)


def test_sim_time_filter():
    record = _record()
    with patch.object(SimTimeFilter, "clock", None):
        assert SimTimeFilter().filter(record)
        assert record.sim_time == "-"
    with patch.object(SimTimeFilter, "clock", staticmethod(lambda: 1.25)):
        SimTimeFilter().filter(record)
        assert record.sim_time == "1.250000"


def test_log_setup_writes_under_base_dir(tmp_path):
    with patch.object(log_setup_module, "LOG_BASE_DIR", str(tmp_path)), \
            patch.object(log_setup_module, "LOG_FILE_NAME", "sim.log"), \
            patch("logging.config.dictConfig") as dict_config:
        log_setup(force=True)
    config = dict_config.call_args.args[0]
    assert config["handlers"]["file"]["filename"] == str(tmp_path / "sim.log")
    assert config["loggers"]["iob.netsim"]["propagate"] is False
    assert tmp_path.is_dir()
