from fractions import Fraction

import hypothesis
import numpy as np
import pytest

np.seterr(all="warn", under="ignore")

hypothesis.settings.register_profile("default", deadline=None, max_examples=50)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=10)
hypothesis.settings.load_profile("default")


def hamilton(total, weights):
    """Exact-rational largest-remainder apportionment (ties to the lower index)."""
    w = [Fraction(str(x)) for x in weights]
    s = sum(w)
    if total == 0 or s == 0:
        return [0] * len(w)
    quotas = [total * x / s for x in w]
    base = [q.numerator // q.denominator for q in quotas]
    rems = [q - b for q, b in zip(quotas, base)]
    order = sorted(range(len(w)), key=lambda i: (-rems[i], i))
    for i in order[: total - sum(base)]:
        base[i] += 1
    return base


def cell_oracle(positive_fraction, stereotype, target_size):
    n = hamilton(target_size, [1 - Fraction(str(positive_fraction)), Fraction(str(positive_fraction))])
    return np.array([hamilton(n[y], stereotype[y]) for y in range(2)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
