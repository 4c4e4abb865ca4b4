import pytest

from histostream.datagen import warm_generators
from histostream.kernels import warm_kernels


@pytest.fixture(scope="session", autouse=True)
def _warm_compiled_kernels():
    # compile every jitted function once so timed tests never measure the JIT
    warm_kernels()
    warm_generators()
