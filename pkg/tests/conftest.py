import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stubs import StubLLMServer  # noqa: E402


@pytest.fixture
def stub_llm():
    server = StubLLMServer().start()
    yield server
    server.stop()
