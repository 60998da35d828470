import numpy as np
import pytest

from compcache import cost
from compcache.baselines import GaHistory, GaSettings, ga_solve
from compcache.errors import Infeasible
from compcache.instances import TABLE2_GLOBALS, random_contended_instance


def test_seeded_runs_are_identical():
    net, g = random_contended_instance(2)
    a = ga_solve(net, g, GaSettings(seed=5))
    b = ga_solve(net, g, GaSettings(seed=5))
    assert np.array_equal(a.delta.values, b.delta.values)
    assert a.cache == b.cache and a.gain == b.gain


def test_zero_budget_infeasible_on_every_seed(bt7):
    for seed in range(3):
        with pytest.raises(Infeasible):
            ga_solve(bt7, TABLE2_GLOBALS.replace(energy_budget=0.0), GaSettings(seed=seed, generations=20))


def test_returned_solution_is_exactly_feasible():
    for seed in range(5):
        net, g = random_contended_instance(seed)
        try:
            sol = ga_solve(net, g, GaSettings(seed=seed))
        except Infeasible:
            continue
        assert cost.check_feasibility(net, g, sol.delta, sol.cache).feasible
        assert sol.cache.is_integral
        assert sol.solver == "ga"


def test_best_feasible_gain_never_drops(bt7):
    hist = GaHistory()
    ga_solve(bt7, TABLE2_GLOBALS, GaSettings(seed=1, generations=40), hist)
    best = hist.best_feasible_gain
    assert len(best) == 41
    assert all(b >= a for a, b in zip(best, best[1:]))
    # elitism keeps the penalised best as well
    fit = hist.best_fitness
    assert all(b >= a for a, b in zip(fit, fit[1:]))


def test_bt7_reaches_bound(bt7):
    gains = [ga_solve(bt7, TABLE2_GLOBALS, GaSettings(seed=s)).gain for s in range(3)]
    assert np.mean(gains) >= 480000.0 * (1 - 1e-3)


def test_settings_validation():
    with pytest.raises(ValueError):
        GaSettings(population=1)
    with pytest.raises(ValueError):
        GaSettings(mutation_rate=1.5)
    with pytest.raises(ValueError):
        GaSettings(crossover_rate=-0.1)
    with pytest.raises(ValueError):
        GaSettings(population=4, elite=4)
