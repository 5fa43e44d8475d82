from pathlib import Path

import pytest

FIXTURE_DIR = Path(__file__).parent / "fixtures"


@pytest.fixture
def wiki_dir():
    return FIXTURE_DIR / "wiki"


@pytest.fixture
def search_dir():
    return FIXTURE_DIR / "search"


@pytest.fixture
def trace_fixture_text():
    return (FIXTURE_DIR / "traces" / "visa_pickup_trace.txt").read_text()


@pytest.fixture
def seed_list():
    return FIXTURE_DIR / "seeds.txt"


@pytest.fixture
def mock_gateway():
    from tableforge.gateway import Gateway
    from tableforge.mockllm import PipelineMockProvider

    provider = PipelineMockProvider()
    gw = Gateway(provider)
    gw.mock = provider
    return gw
