"""Synthetic stand-in for a low-prevalence fraud dataset."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TabularDataset
from .rng import derive_seed, make_rng


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BaseConfig:
    """Generator settings.

    ``class_separation`` is the gap between the class-conditional means of each
    informative feature, in units of its (unit) standard deviation. Rows in the
    final ``drift_fraction`` of the time axis have informative means shifted by
    ``drift_shift`` for both classes.
    """

    n_rows: int = 60000
    base_prevalence: float = 0.01
    n_informative: int = 6
    n_noise: int = 4
    class_separation: float = 1.0
    drift_shift: float = 0.25
    drift_fraction: float = 0.25
    seed: int = 0

    def validate(self) -> None:
        if self.n_rows < 100:
            raise ConfigError(f"n_rows must be >= 100, got {self.n_rows}")
        if not 0.0 < self.base_prevalence < 1.0:
            raise ConfigError(f"base_prevalence must lie in (0, 1), got {self.base_prevalence}")
        if self.base_prevalence * self.n_rows < 10:
            raise ConfigError("base_prevalence * n_rows must be >= 10 (too few positives)")
        if self.n_informative < 1:
            raise ConfigError("n_informative must be >= 1")
        if self.n_noise < 0:
            raise ConfigError("n_noise must be >= 0")
        if self.class_separation < 0 or self.drift_shift < 0:
            raise ConfigError("class_separation and drift_shift must be non-negative")
        if not 0.0 <= self.drift_fraction < 1.0:
            raise ConfigError(f"drift_fraction must lie in [0, 1), got {self.drift_fraction}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


def informative_names(cfg: BaseConfig) -> list[str]:
    return [f"inf{i + 1}" for i in range(cfg.n_informative)]


def noise_names(cfg: BaseConfig) -> list[str]:
    return [f"noise{i + 1}" for i in range(cfg.n_noise)]


def gen_base_dataset(cfg: BaseConfig) -> TabularDataset:
    """Draw labels, informative and noise features; columns ``t, inf*, noise*, y``.

    Draw order is fixed (labels, informative block, noise block) on a stream
    derived from ``cfg.seed``, so the output
    is a pure function of the config.
    """
    cfg.validate()
    rng = make_rng(derive_seed(cfg.seed, "base"))
    n = cfg.n_rows
    y = (rng.random(n) < cfg.base_prevalence).astype(np.int8)
    informative = rng.standard_normal((n, cfg.n_informative))
    informative += cfg.class_separation * y[:, None]
    n_drift = int(round(cfg.drift_fraction * n))
    if n_drift:
        informative[n - n_drift:] += cfg.drift_shift
    noise = rng.standard_normal((n, cfg.n_noise))

    columns = {"t": np.arange(n, dtype=np.int64)}
    kinds = {"t": "time"}
    for j, name in enumerate(informative_names(cfg)):
        columns[name] = informative[:, j]
        kinds[name] = "real"
    for j, name in enumerate(noise_names(cfg)):
        columns[name] = noise[:, j]
        kinds[name] = "real"
    columns["y"] = y
    kinds["y"] = "binary"
    return TabularDataset(columns, kinds, label="y", time="t")
