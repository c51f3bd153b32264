import numpy as np
import pytest

from heisenberg import config
from heisenberg.bubble import make_spec
from heisenberg.hgroup import critical_exponent
from heisenberg.quad import QuadratureSpec
from heisenberg.varsolve import assemble_form, build_domain, smallest_eigenpair


@pytest.fixture(autouse=True)
def _logs_in_tmp(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "LOGS_DIR", tmp_path / "logs")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def gp():
    return critical_exponent(1, 0.25)


@pytest.fixture(scope="session")
def spec(gp):
    return make_spec(gp.N, gp.s)


@pytest.fixture(scope="session")
def sweep_spec(gp):
    return make_spec(gp.N, gp.s, sigma=config.SWEEP_SIGMA)


@pytest.fixture
def qs():
    return QuadratureSpec(samples=20_000, seed=11)


@pytest.fixture(scope="session")
def domain(gp):
    return build_domain(4.0, 300, gp, seed=3)


@pytest.fixture(scope="session")
def form(domain, gp):
    return assemble_form(domain, gp)


@pytest.fixture(scope="session")
def eigen(form, domain):
    return smallest_eigenpair(form, domain, tol=1e-8)
