"""Simulated nonresponse data for benchmarking mean estimators.

Each replicate draws four latent standard-normal covariates z, an outcome y
that is linear in z (population mean 210), a response indicator t whose
probability depends on z, and four "mis-transformed" observed covariates x.
Fitting models on x instead of z induces the misspecification the simulation
study is about.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

TRUE_MEAN = 210.0

# Coefficient on the z1*z2 term added to the outcome mean in the interaction
# scenario.  The sign is part of the generating design this package targets.
INTERACTION_COEF = -20.0

_Y_COEFS = np.array([27.4, 13.7, 13.7, 13.7])
_PS_COEFS = np.array([-1.0, 0.5, -0.25, -0.1])


@dataclass(frozen=True)
class Scenario:
    """A generating configuration: sample size, interaction flag, seed."""

    n: int
    interaction: bool
    base_seed: int

    def __post_init__(self):
        if self.n < 8:
            raise ValueError(f"scenario requires n >= 8, got {self.n}")

    @property
    def tag(self) -> str:
        return "interaction" if self.interaction else "base"


@dataclass(frozen=True)
class Dataset:
    """One simulated replicate."""

    z: np.ndarray        # (n, 4) latent covariates
    x: np.ndarray        # (n, 4) observed transforms of z
    y: np.ndarray        # (n,) outcomes
    t: np.ndarray        # (n,) response indicators in {0, 1}
    pi_true: np.ndarray  # (n,) true response probabilities

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def degenerate(self) -> bool:
        """True when every unit responded or none did."""
        s = int(self.t.sum())
        return s == 0 or s == self.n

    def covariates(self, which: str) -> np.ndarray:
        """Return the z or x matrix by tag ('Z' or 'X')."""
        if which == "Z":
            return self.z
        if which == "X":
            return self.x
        raise ValueError(f"unknown covariate set {which!r}")


def transform_covariates(z: np.ndarray) -> np.ndarray:
    """Map latent covariates to the observed ("mis-transformed") scale.

    Accepts a length-4 vector or an (n, 4) matrix; returns the same shape.
    """
    z = np.asarray(z, dtype=float)
    z1, z2, z3, z4 = z[..., 0], z[..., 1], z[..., 2], z[..., 3]
    x1 = np.exp(z1 / 2.0)
    x2 = z2 / (1.0 + np.exp(z1)) + 10.0
    x3 = (z1 * z3 / 25.0 + 0.6) ** 3
    x4 = (z2 + z4 + 20.0) ** 2
    return np.stack([x1, x2, x3, x4], axis=-1)


def true_propensity(z: np.ndarray) -> np.ndarray:
    """Response probability as a function of the latent covariates.

    expit(-z1 + 0.5*z2 - 0.25*z3 - 0.1*z4); strictly inside (0, 1).
    """
    z = np.asarray(z, dtype=float)
    eta = z @ _PS_COEFS
    return 1.0 / (1.0 + np.exp(-eta))


def replicate_rng(scenario: Scenario, replicate_index: int) -> np.random.Generator:
    """Independent, schedule-free RNG stream for one replicate.

    Streams are derived counter-style from (base_seed, scenario stream id,
    replicate index) via SeedSequence spawn keys, so any replicate can be
    regenerated in isolation.
    """
    stream = 1 if scenario.interaction else 0
    ss = np.random.SeedSequence(scenario.base_seed, spawn_key=(stream, replicate_index))
    return np.random.Generator(np.random.PCG64(ss))


def generate_replicate(scenario: Scenario, replicate_index: int) -> Dataset:
    """Generate one replicate, fully determined by (scenario, index)."""
    rng = replicate_rng(scenario, replicate_index)
    n = scenario.n
    z = rng.standard_normal((n, 4))
    eps = rng.standard_normal(n)
    u = rng.random(n)
    y = TRUE_MEAN + z @ _Y_COEFS + eps
    if scenario.interaction:
        y = y + INTERACTION_COEF * z[:, 0] * z[:, 1]
    pi = true_propensity(z)
    t = (u < pi).astype(np.int64)
    return Dataset(z=z, x=transform_covariates(z), y=y, t=t, pi_true=pi)


def write_datasets_csv(path, scenario: Scenario, replicate_indices) -> None:
    """Dump replicates as CSV for debugging.

    Columns: replicate, unit, z1..z4, x1..x4, y, t, pi_true.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["replicate", "unit"]
            + [f"z{j}" for j in range(1, 5)]
            + [f"x{j}" for j in range(1, 5)]
            + ["y", "t", "pi_true"]
        )
        for r in replicate_indices:
            ds = generate_replicate(scenario, r)
            for i in range(ds.n):
                w.writerow(
                    [r, i]
                    + [repr(float(v)) for v in ds.z[i]]
                    + [repr(float(v)) for v in ds.x[i]]
                    + [repr(float(ds.y[i])), int(ds.t[i]),
                       repr(float(ds.pi_true[i]))]
                )
