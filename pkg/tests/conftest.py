import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("fvlab", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fvlab")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_net():
    """conv(2->3, 3x3, pad 1) -> bn -> relu -> flatten -> dense(4) on 2x6x6 inputs."""
    from fvlab.netgraph import LayerGraph

    r = np.random.default_rng(7)
    g = LayerGraph((2, 6, 6))
    g.conv("conv1", "input", r.standard_normal((3, 2, 3, 3)) * 0.5, r.standard_normal(3) * 0.1, padding=1)
    g.batchnorm("bn1", "conv1", r.uniform(0.5, 1.5, 3), r.standard_normal(3) * 0.1,
                r.standard_normal(3) * 0.1, r.uniform(0.5, 1.5, 3))
    g.relu("relu1", "bn1")
    g.flatten("flatten", "relu1")
    g.dense("fc", "flatten", r.standard_normal((108, 4)) * 0.2, np.zeros(4))
    return g


class DeskLab:
    """The desk-scale setting: procedural data and a trained base classifier."""

    def __init__(self):
        import time

        from fvlab.netgraph import (TrainHyper, accuracy, build_base_model, generate_synthetic_dataset, sgd_train,
                                    train_test_split)

        t = time.perf_counter()
        data = generate_synthetic_dataset(10, 120, seed=1)
        self.train, self.test = train_test_split(data, 0.25, seed=2)
        res = sgd_train(build_base_model(seed=3), self.train,
                        TrainHyper(lr=0.02, momentum=0.9, weight_decay=5e-5, epochs=10, batch_size=32, seed=4))
        self.base = res.graph
        self.test_accuracy = accuracy(self.base, self.test.images, self.test.labels)
        self.train_seconds = time.perf_counter() - t


@pytest.fixture(scope="session")
def desk():
    return DeskLab()
