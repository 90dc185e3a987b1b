"""Sample hard and soft routing decisions and watch the temperature sharpen them."""

import numpy as np

from mtvit.selector import TemperatureSchedule, gumbel_sample, temperature
from mtvit.tensor import Tensor

rng = np.random.default_rng(0)
zeta = np.array([0.2, 0.5, 0.3])
probs = Tensor(np.tile(zeta, (20000, 1)), dtype=np.float64)

sched = TemperatureSchedule()
for epoch in (0, 5, 9):
    tau = temperature(sched, epoch, 10)
    d = gumbel_sample(probs, tau, rng)
    freq = np.bincount(d.index, minlength=3) / len(d.index)
    print(f"tau={tau:4.2f}  hard freq {np.round(freq, 3)}  mean max soft weight {d.soft.data.max(-1).mean():.3f}")
