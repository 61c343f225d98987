import numpy as np
import pytest

from multirate.coupled_forms import SemiDiscrete
from multirate.space_disc import PhysicalParams, assemble_operators, build_domain_mesh


def make_sd(h=0.25, config_id=1, **kw):
    p = PhysicalParams(h=h, **kw)
    return SemiDiscrete(assemble_operators(build_domain_mesh(h), p, config_id))


def silence_source(sd):
    """Zero both space loads in place (g2 then never reaches the equations)."""
    sd.G_f = np.zeros_like(sd.G_f)
    sd.G_s = np.zeros_like(sd.G_s)
    return sd


@pytest.fixture(scope="session")
def sd_coarse():
    return make_sd(h=1.0, config_id=1)


@pytest.fixture(scope="session")
def sd1():
    return make_sd(h=0.25, config_id=1)


@pytest.fixture(scope="session")
def sd2():
    return make_sd(h=0.25, config_id=2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
