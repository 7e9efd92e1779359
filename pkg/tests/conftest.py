import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


class ReplayRng:
    """Stand-in generator that hands out pre-drawn uniforms and normals in order."""

    def __init__(self, uniforms=(), normals=()):
        self._u = np.asarray(uniforms, dtype=float).reshape(-1)
        self._z = np.asarray(normals, dtype=float).reshape(-1)
        self._iu = 0
        self._iz = 0

    def _take(self, buf, pos, size):
        n = 1 if size is None else int(np.prod(size))
        out = buf[pos:pos + n]
        if out.size < n:
            raise RuntimeError("replay stream exhausted")
        return (float(out[0]) if size is None else out.reshape(size)), pos + n

    def random(self, size=None):
        out, self._iu = self._take(self._u, self._iu, size)
        return out

    def standard_normal(self, size=None):
        out, self._iz = self._take(self._z, self._iz, size)
        return out


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))
