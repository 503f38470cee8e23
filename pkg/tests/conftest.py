import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wavesim.spectrum import ChannelModel

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def example1():
    """Two-state channel s1 = 11000, s2 = 11100 with p12 = 0.2, p21 = 0.4."""
    return ChannelModel.two_state(0.2, 0.4)


def stochastic_matrices(draw_k=(2, 6)):
    from hypothesis import strategies as st
    from hypothesis.extra import numpy as hnp

    @st.composite
    def build(draw):
        K = draw(st.integers(*draw_k))
        raw = draw(hnp.arrays(np.float64, (K, K),
                              elements=st.floats(0.0, 1.0, allow_nan=False)))
        raw = raw + 1e-3
        sparsify = draw(st.booleans())
        if sparsify:
            mask = draw(hnp.arrays(np.bool_, (K, K)))
            np.fill_diagonal(mask, True)
            raw = raw * mask
        return raw / raw.sum(axis=1, keepdims=True)

    return build()


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("tests.test_acceptance") or sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
