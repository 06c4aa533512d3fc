"""Parameter distributions and reproducible i.i.d. sampling.

Every distribution maps a block of uniform variates to one sample by an
inverse CDF, so a sample set of size k is always built from the first
``k * n_uniform`` variates of a single stream.  This is what makes the
sets nested across k for a fixed seed.

The stream is numpy's Philox4x32-10 counter-based bit generator, seeded
through ``numpy.random.SeedSequence``.  Its output is fixed across
platforms for a given numpy major version.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np
from scipy import stats

RNG_NAME = "numpy.random.Philox(4x32-10)"


class DistributionError(ValueError):
    """Invalid distribution parameters; ``field`` names the offending one."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class TruncatedNormal:
    mean: float
    stddev: float
    lower: float
    upper: float

    def __post_init__(self):
        if not self.stddev > 0:
            raise DistributionError("stddev", f"must be > 0, got {self.stddev}")
        if not self.lower < self.upper:
            raise DistributionError(
                "lower", f"must be < upper, got [{self.lower}, {self.upper}]"
            )

    @property
    def dim(self) -> int:
        return 1

    @property
    def n_uniform(self) -> int:
        return 1

    def _frozen(self):
        a = (self.lower - self.mean) / self.stddev
        b = (self.upper - self.mean) / self.stddev
        return stats.truncnorm(a, b, loc=self.mean, scale=self.stddev)

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        x = self._frozen().ppf(u)
        # ppf can land one ulp outside the support
        return np.clip(x, self.lower, self.upper)

    def cdf(self, x):
        return self._frozen().cdf(x)

    def analytic_mean(self) -> float:
        return float(self._frozen().mean())


@dataclass(frozen=True)
class Uniform:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise DistributionError(
                "lower", f"must be < upper, got [{self.lower}, {self.upper}]"
            )

    @property
    def dim(self) -> int:
        return 1

    @property
    def n_uniform(self) -> int:
        return 1

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * u


@dataclass(frozen=True)
class FiniteSet:
    """Discrete measure on finitely many atoms."""

    points: tuple
    weights: tuple

    def __init__(self, points: Sequence[Sequence[float]], weights: Sequence[float]):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        w = np.asarray(weights, dtype=float)
        if pts.shape[0] != w.shape[0] or pts.shape[0] == 0:
            raise DistributionError(
                "weights", f"need one weight per point, got {w.shape[0]} for {pts.shape[0]}"
            )
        if np.any(w < 0):
            raise DistributionError("weights", "must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise DistributionError("weights", f"must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "points", tuple(map(tuple, pts.tolist())))
        object.__setattr__(self, "weights", tuple(w.tolist()))

    @property
    def dim(self) -> int:
        return len(self.points[0])

    @property
    def n_uniform(self) -> int:
        return 1

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        cum = np.cumsum(self.weights)
        idx = np.searchsorted(cum, u[..., 0], side="right")
        idx = np.minimum(idx, len(self.points) - 1)
        return np.asarray(self.points, dtype=float)[idx]


@dataclass(frozen=True)
class Product:
    """Independent components stacked into one parameter vector."""

    components: tuple

    def __init__(self, components: Sequence["ParameterDistribution"]):
        if len(components) == 0:
            raise DistributionError("components", "must be nonempty")
        object.__setattr__(self, "components", tuple(components))

    @property
    def dim(self) -> int:
        return sum(c.dim for c in self.components)

    @property
    def n_uniform(self) -> int:
        return sum(c.n_uniform for c in self.components)

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        out, pos = [], 0
        for comp in self.components:
            block = u[..., pos : pos + comp.n_uniform]
            out.append(np.asarray(comp.from_uniform(block)).reshape(u.shape[0], comp.dim))
            pos += comp.n_uniform
        return np.concatenate(out, axis=-1)


ParameterDistribution = Union[TruncatedNormal, Uniform, FiniteSet, Product]


@dataclass(frozen=True)
class SampleSet:
    samples: np.ndarray = field(repr=False)
    seed: int
    k: int
    nested: bool = True

    def __post_init__(self):
        self.samples.setflags(write=False)

    def __len__(self) -> int:
        return self.k


def _uniforms(seed: int, n: int, stream: int | None) -> np.ndarray:
    entropy = [seed] if stream is None else [seed, stream]
    bitgen = np.random.Philox(np.random.SeedSequence(entropy))
    return np.random.Generator(bitgen).random(n)


def sample_parameters(
    dist: ParameterDistribution, k: int, seed: int, nested: bool = True
) -> SampleSet:
    """Draw ``k`` i.i.d. samples from ``dist``.

    With ``nested=True`` the result for ``k`` is a prefix of the result for
    any larger ``k`` under the same seed.  With ``nested=False`` each ``k``
    gets its own independent stream, which is how a fresh random set per
    approximation level would be drawn.
    """
    if int(k) < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    k = int(k)
    d = dist.n_uniform
    u = _uniforms(int(seed), k * d, None if nested else k).reshape(k, d)
    samples = np.asarray(dist.from_uniform(u), dtype=float).reshape(k, dist.dim)
    return SampleSet(samples=samples, seed=int(seed), k=k, nested=nested)


# --- initial conditions -----------------------------------------------------


@dataclass(frozen=True)
class Constant:
    x0: tuple

    def __init__(self, x0: Sequence[float]):
        object.__setattr__(self, "x0", tuple(float(v) for v in x0))

    @property
    def n(self) -> int:
        return len(self.x0)

    def __call__(self, omega: np.ndarray) -> np.ndarray:
        omega = np.atleast_2d(omega)
        return np.broadcast_to(np.asarray(self.x0), (omega.shape[0], self.n)).copy()


@dataclass(frozen=True)
class Projection:
    """Initial state assembled from parameter coordinates.

    ``assign`` maps state index -> parameter index; unassigned state
    coordinates start at ``fill``.
    """

    n: int
    assign: tuple
    fill: float = 0.0

    def __init__(self, n: int, assign: Mapping[int, int], fill: float = 0.0):
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "assign", tuple(sorted(assign.items())))
        object.__setattr__(self, "fill", float(fill))

    def __call__(self, omega: np.ndarray) -> np.ndarray:
        omega = np.atleast_2d(omega)
        x = np.full((omega.shape[0], self.n), self.fill)
        for si, pi in self.assign:
            x[:, si] = omega[:, pi]
        return x


InitialConditionSpec = Union[Constant, Projection]

INITIAL_CONDITIONS: dict[str, InitialConditionSpec] = {
    # (stock, revenue); stock is the first parameter coordinate
    "fishing": Projection(2, {0: 0}),
    # x(0) = y(0) = omega, z(0) = 0
    "bryson_ho": Projection(3, {0: 0, 1: 0}),
}


def initial_condition_map(
    spec: InitialConditionSpec | str, omega, n: int | None = None
) -> np.ndarray:
    """Evaluate phi(omega).  Accepts a single sample or a (k, d) batch."""
    if isinstance(spec, str):
        try:
            spec = INITIAL_CONDITIONS[spec]
        except KeyError:
            raise KeyError(f"unknown initial-condition map {spec!r}") from None
    omega = np.asarray(omega, dtype=float)
    single = omega.ndim <= 1
    x = spec(np.atleast_2d(omega))
    if n is not None and x.shape[-1] != n:
        raise ValueError(f"initial state has dimension {x.shape[-1]}, system expects {n}")
    return x[0] if single else x


def distribution_from_config(cfg: Mapping) -> ParameterDistribution:
    """Build a distribution from a tagged JSON-style mapping."""
    kind = cfg.get("type")
    required = {
        "truncated_normal": ("mean", "std", "lower", "upper"),
        "uniform": ("lower", "upper"),
        "finite_set": ("points", "weights"),
        "product": ("components",),
    }.get(kind, ())
    for key in required:
        if key not in cfg:
            raise DistributionError(key, f"{kind} distribution needs {key!r}")
    if kind == "truncated_normal":
        return TruncatedNormal(cfg["mean"], cfg["std"], cfg["lower"], cfg["upper"])
    if kind == "uniform":
        return Uniform(cfg["lower"], cfg["upper"])
    if kind == "finite_set":
        return FiniteSet(cfg["points"], cfg["weights"])
    if kind == "product":
        return Product([distribution_from_config(c) for c in cfg["components"]])
    raise DistributionError("type", f"unknown distribution type {kind!r}")


def distribution_to_config(dist: ParameterDistribution) -> dict:
    if isinstance(dist, TruncatedNormal):
        return {"type": "truncated_normal", "mean": dist.mean, "std": dist.stddev,
                "lower": dist.lower, "upper": dist.upper}
    if isinstance(dist, Uniform):
        return {"type": "uniform", "lower": dist.lower, "upper": dist.upper}
    if isinstance(dist, FiniteSet):
        return {"type": "finite_set", "points": [list(p) for p in dist.points],
                "weights": list(dist.weights)}
    if isinstance(dist, Product):
        return {"type": "product",
                "components": [distribution_to_config(c) for c in dist.components]}
    raise TypeError(f"not a distribution: {dist!r}")
