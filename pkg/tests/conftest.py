import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from factorcop.copulas import FAMILY_NAMES, get_family

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

FAMILIES = FAMILY_NAMES
MARGINS = ("gaussian", "poisson", "bernoulli")


def params_at(name, taus=(0.2, 0.5, 0.7)):
    """Family parameters at the given Kendall's tau values (negative taus
    are skipped for families that cannot reach them)."""
    fam = get_family(name)
    out = []
    for t in taus:
        if t < 0 and name in ("clayton", "gumbel"):
            continue
        out.append(float(fam.tau_to_param(t)))
    return out


def family_params(taus=(0.2, 0.5, 0.7)):
    return [(f, p) for f in FAMILIES for p in params_at(f, taus)]


@pytest.fixture
def rng():
    return np.random.default_rng(20261017)
