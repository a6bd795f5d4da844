import sys

import pytest


@pytest.fixture
def verdict(request):
    """Write a line to the real terminal, past any output capture."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def emit(line: str) -> None:
        if capman is not None:
            with capman.global_and_fixture_disabled():
                sys.stdout.write("\n" + line + "\n")
                sys.stdout.flush()

    return emit
