import pytest

from paravox import vq


@pytest.fixture(scope="session")
def vq_data():
    return vq.synthetic_contours(50, seed=1), vq.synthetic_contours(10, seed=2)


@pytest.fixture(scope="session")
def trained_vq(vq_data):
    import time
    start = time.perf_counter()
    model = vq.train(vq_data[0], vq.TrainConfig(epochs=30, seed=0))
    model.elapsed = time.perf_counter() - start
    return model


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
