import pytest

from src.td_regularization.errors import ConfigurationError
from src.td_regularization.penalty import KAPPA_SWEEP, PenaltySchedule, eta_step


def test_eta_decays_geometrically():
    schedule = PenaltySchedule(eta0=0.1, kappa=0.5)
    etas = []
    for _ in range(4):
        etas.append(schedule.eta)
        schedule = eta_step(schedule)
    assert etas == pytest.approx([0.1, 0.05, 0.025, 0.0125])


@pytest.mark.parametrize("kappa", KAPPA_SWEEP)
def test_every_swept_kappa_is_valid(kappa):
    schedule = PenaltySchedule(eta0=0.1, kappa=kappa)
    assert eta_step(schedule).eta == pytest.approx(0.1 * kappa)


def test_kappa_above_one_grows():
    schedule = PenaltySchedule(eta0=0.1, kappa=1.001, updates=1000)
    assert schedule.eta == pytest.approx(0.1 * 1.001 ** 1000)
    assert schedule.eta > 0.1


def test_zero_eta0_stays_zero():
    assert eta_step(eta_step(PenaltySchedule(eta0=0.0))).eta == 0.0


def test_negative_values_are_rejected():
    with pytest.raises(ConfigurationError):
        PenaltySchedule(eta0=-0.1)
    with pytest.raises(ConfigurationError):
        PenaltySchedule(kappa=-1.0)
