"""The standard comparison fixture.

Ten devices with Table-II style link parameters, a heterogeneous
shard-partitioned least-squares task and a transmit power low enough
that the uplink, not local compute, dominates a round. The YAML files
under ``configs/standard`` describe the same experiment.
"""
from __future__ import annotations

from .channel import LinkBudget, PopulationSpec, dbm_to_watts
from .experiment import CALIBRATED, ExperimentConfig, PopulationConfig, SchemeConfig, TrainingConfig
from .tasks import TaskSpec

# name -> scheme parameters; ratio_scale brackets the calibrated common ratio
STANDARD_SCHEMES = {
    "jcdo": dict(kind="jcdo"),
    "fedavg": dict(kind="fedavg"),
    "co": dict(kind="co", deadline=CALIBRATED),
    "do": dict(kind="do", ratio=CALIBRATED),
    "fixed-r": dict(kind="fixed_r", ratio=CALIBRATED, deadline=CALIBRATED),
    "fixed-r-quarter": dict(kind="fixed_r", ratio=CALIBRATED, deadline=CALIBRATED, ratio_scale=0.25),
    "fixed-r-quadruple": dict(kind="fixed_r", ratio=CALIBRATED, deadline=CALIBRATED, ratio_scale=4.0),
    "fedtoe": dict(kind="fedtoe", deadline=CALIBRATED, q_target=0.9),
}


def standard_config(scheme: str = "jcdo", seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig(
        name=f"standard-{scheme}",
        seed=seed,
        task=TaskSpec(kind="quadratic", dim=100, samples_per_device=200, n_classes=10, heterogeneity=1.0,
                      partition="shard", shards_per_device=2, noise=0.5),
        population=PopulationConfig(
            count=10,
            link=LinkBudget(bandwidth=1e6, noise_psd=dbm_to_watts(-174.0)),
            spec=PopulationSpec(tx_power=dbm_to_watts(0.0), cpu_cycles_per_batch=5e4, encode_bits=32,
                                distance_km=(0.01, 0.5), cpu_freq_hz=(1e8, 1e9)),
        ),
        scheme=SchemeConfig(**STANDARD_SCHEMES[scheme]),
        training=TrainingConfig(chi=10.0, nu=100.0, batch_size=32, epsilon=0.02, max_rounds=3000),
    )
