import logging

import pytest

from rrpipe import cli, gateway
from tests import utils


@pytest.fixture(autouse=True)
def reset_logging():
    yield
    root = logging.getLogger()
    for handler in cli._handlers:
        root.removeHandler(handler)
        handler.close()
    cli._handlers.clear()
    logging.setLogRecordFactory(logging.LogRecord)


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch, tmp_path):
    # never pick up an installation's settings file or credentials
    monkeypatch.setenv("RRPIPE_CONFIG", str(tmp_path / "no-such-settings.py"))
    monkeypatch.delenv("VIRTUAL_ENV", raising=False)
    monkeypatch.delenv("RRPIPE_API_KEY_GEMINI", raising=False)
    monkeypatch.setattr("rrpipe.config.sys.executable", str(tmp_path / "bin/python"))


@pytest.fixture
def desk():
    return utils.DeskDataset()


@pytest.fixture
def desk_files(desk, tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    return desk.write(data)


@pytest.fixture
def price_table_path(tmp_path):
    return utils.write_price_table(tmp_path / "prices.csv")


@pytest.fixture
def price_table(price_table_path):
    return gateway.load_price_table(price_table_path)


@pytest.fixture
def mock_gateway(price_table, desk):
    return utils.mock_gateway(price_table, qrels=desk.qrels, script={"*": "clue"})
