import math

import numpy as np
import pytest

from fespulse import ModelParams, PulseTrain, eval_cn
from fespulse.model import _pulse_weights


@pytest.fixture(scope="session")
def params() -> ModelParams:
    return ModelParams()


def random_train(
    rng: np.random.Generator,
    i_min: float = 20.0,
    n_max: int = 6,
    n_min: int = 1,
    gap_scale: float = 25.0,
    amp_lo: float = 0.25,
) -> PulseTrain:
    """Admissible random train: exponential gap slack over the spacing floor."""
    n = int(rng.integers(n_min, n_max + 1))
    gaps = i_min + rng.exponential(gap_scale, size=n)
    times = np.concatenate([[0.0], np.cumsum(gaps)])
    horizon = float(times[-1] + rng.uniform(40.0, 140.0))
    amps = rng.uniform(amp_lo, 1.0, size=n + 1)
    return PulseTrain(tuple(times), tuple(amps), horizon, i_min)


def rk4_cn_max_error(train: PulseTrain, params: ModelParams, step: float = 0.2) -> float:
    """Independent oracle: RK4 on c' = E(t) - c/tau_c against the closed form.

    Within each inter-pulse interval the stimulation signal is restricted
    to the pulses already fired (E is right-continuous at impulse times,
    so the interval-end stage must use the left limit).
    """
    breaks = list(train.times) + [train.horizon]
    tau = params.tau_c
    w = np.asarray(_pulse_weights(train, params)) / tau
    t_i = np.asarray(train.times)
    c = 0.0
    worst = 0.0
    for lo, hi in zip(breaks, breaks[1:]):
        if hi - lo <= 1e-12:
            continue
        m = max(1, math.ceil((hi - lo) / step))
        nodes = np.linspace(lo, hi, m + 1)
        h = (hi - lo) / m
        stages = np.empty(2 * m + 1)
        stages[0::2] = nodes
        stages[1::2] = 0.5 * (nodes[:-1] + nodes[1:])
        active = t_i <= lo + 1e-12
        e = (w[active] * np.exp(-(stages[:, None] - t_i[active]) / tau)).sum(axis=1)
        exact = np.asarray(eval_cn(train, params, nodes))
        for j in range(m):
            e0, em, e1 = e[2 * j], e[2 * j + 1], e[2 * j + 2]
            k1 = e0 - c / tau
            k2 = em - (c + 0.5 * h * k1) / tau
            k3 = em - (c + 0.5 * h * k2) / tau
            k4 = e1 - (c + h * k3) / tau
            c += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            worst = max(worst, abs(c - exact[j + 1]))
    return worst
