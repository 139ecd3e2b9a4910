import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bandplan import _kernels


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    """Compile the hot kernels once so timed assertions see steady state."""
    _kernels.warmup()


@pytest.fixture()
def small_market():
    from bandplan import MarketParams, MarketScenario, OperatorProfile

    licensed = (
        OperatorProfile(id=1, mu_theta=1.0, sigma_theta=0.4, revenue_slope=1.0,
                        revenue_cv=0.4, rho=0.6, omega=0.9, mer_fraction=0.3),
        OperatorProfile(id=2, mu_theta=0.9, sigma_theta=0.5, revenue_slope=1.1,
                        revenue_cv=0.3, rho=0.5, omega=0.85, mer_fraction=0.4),
    )
    unlicensed = (
        OperatorProfile(id=3, mu_theta=0.8, sigma_theta=0.45, revenue_slope=0.95,
                        revenue_cv=0.5, rho=0.7, omega=0.9, mer_fraction=0.2),
    )
    scenario = MarketScenario(licensed=licensed, unlicensed=unlicensed)
    params = MarketParams(m=3, p=1, t_slots=52, d_total=2.2, phi=1,
                          alpha_l=0.8, alpha_u=0.9, osa="overlay")
    return scenario, params
