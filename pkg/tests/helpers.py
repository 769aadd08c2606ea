"""Random Table-II style fixtures shared by the optimizer and acceptance tests."""
import math

import numpy as np

from feelsim.channel import DeviceProfile, LinkBudget, dbm_to_watts, path_loss_db
from feelsim.optimizer import OptimizerState

LINK = LinkBudget(bandwidth=1e6, noise_psd=dbm_to_watts(-174.0))


def random_device(rng, i=0, kappa=5e6, bits=32, power_dbm=18.0, size=None):
    dist = rng.uniform(0.01, 0.5)
    return DeviceProfile(
        id=i,
        data_size=int(size if size is not None else rng.integers(50, 500)),
        tx_power=dbm_to_watts(power_dbm),
        channel_gain_mean=float(10 ** (-path_loss_db(dist) / 10)),
        cpu_freq=float(rng.uniform(1e8, 1e9)),
        cpu_cycles_per_batch=kappa,
        encode_bits=bits,
    )


def random_population(rng, m=None):
    m = int(rng.integers(1, 11)) if m is None else m
    return [random_device(rng, i) for i in range(m)]


def random_state(rng, m, B=None):
    B = float(10 ** rng.uniform(-6, 1)) if B is None else B
    return OptimizerState(B_t=B, alpha=rng.uniform(0.2, 1.0, m), G=1.0, epsilon=0.01)


def random_dim(rng):
    return int(10 ** rng.integers(3, 6))


def snr_of(dev):
    return dev.mean_snr(LINK)


def load_of(dev, dim):
    return dev.encode_bits * dim / LINK.bandwidth


def fixture_arrays(profiles, dim):
    sizes = np.array([p.data_size for p in profiles], float)
    return dict(
        snr=[snr_of(p) for p in profiles],
        t_comp=[p.cpu_cycles_per_batch / p.cpu_freq for p in profiles],
        load=[load_of(p, dim) for p in profiles],
        weight_sq=list((sizes / sizes.sum()) ** 2),
    )


LN2 = math.log(2.0)
