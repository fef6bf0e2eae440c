import pytest

from src import credentials
from src import database as db
from src.chunking import TokenBudget
from src.credits import ModelRate, RateCard
from src.llm_gateway import Gateway, RuleMockProvider
from src.pipeline import AnalysisSettings

from .helpers import FakeSession, make_pr


@pytest.fixture(autouse=True)
def isolated_secrets(monkeypatch):
    """Keep tests away from the real credential store and environment."""
    for name in credentials.SECRET_NAMES:
        monkeypatch.delenv(credentials.env_var_for(name), raising=False)
    monkeypatch.setattr(credentials, "get_secret", lambda name: None)


@pytest.fixture
def store(tmp_path):
    """A fresh SQLite store in a temporary directory."""
    db.set_db_path(tmp_path / "store" / db.DB_FILENAME)
    db.init_database()
    yield tmp_path / "store"
    db.set_db_path(None)


@pytest.fixture
def pr():
    return make_pr()


@pytest.fixture
def fake_session():
    return FakeSession()


@pytest.fixture
def rates():
    return RateCard({"rule-mock": ModelRate(10, 30), "judge": ModelRate(5, 5), "second": ModelRate(10, 30)})


@pytest.fixture
def settings(rates):
    return AnalysisSettings(analyzers=("rule-mock",), budget=TokenBudget(8192, 2048), rates=rates)


@pytest.fixture
def gateway():
    return Gateway({"rule-mock": RuleMockProvider()})
