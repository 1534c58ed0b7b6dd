"""Feature-subset search: bat algorithm, aquila optimizer, exhaustive oracle.

All searchers share one contract: candidate positions live in [-1, 1]^k,
coordinate i selects feature i when it is >= 0.5, and fitness is the
correlation-based merit of the decoded subset.  Runs are deterministic
given the seed: per-epoch draws come from a counter-style stream keyed by
(seed, epoch), so the numbers a bat consumes depend only on its index and
the epoch, never on scheduling.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .correlation import CfsScore, CorrelationMatrix, MeritEvaluator, cfs_merit
from .errors import DataError

SELECT_THRESHOLD = 0.5


@dataclass(frozen=True)
class FeatureSubset:
    """A set of selected feature indices with optional attached scores."""

    indices: tuple[int, ...]
    cfs: CfsScore | None = None
    ig: float | None = None

    def __post_init__(self):
        for a, b in zip(self.indices, self.indices[1:]):
            if b <= a:
                raise ValueError("subset indices must be strictly increasing")
        if self.indices and self.indices[0] < 0:
            raise ValueError("subset indices must be nonnegative")

    @property
    def k(self) -> int:
        return len(self.indices)

    def mask(self, n_features: int) -> np.ndarray:
        out = np.zeros(n_features, dtype=bool)
        out[list(self.indices)] = True
        return out


@dataclass(frozen=True)
class SearchResult:
    best: FeatureSubset
    best_merit: float
    merit_trace: tuple[float, ...]
    evaluations: int
    elapsed: float
    method: str
    seed: int


def decode_mask(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) >= SELECT_THRESHOLD


def decode(x) -> FeatureSubset:
    """Position vector to feature subset: coordinate >= 0.5 selects."""
    return FeatureSubset(tuple(int(i) for i in np.flatnonzero(decode_mask(x))))


def _epoch_rng(seed: int, epoch: int, stream: int) -> np.random.Generator:
    # Philox keyed by (seed, stream, epoch): any epoch's draw block can be
    # regenerated without replaying the ones before it.
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(stream, epoch)))
    )


# ---------------------------------------------------------------------------
# bat algorithm


@dataclass(frozen=True)
class BatConfig:
    """Swarm parameters; the defaults are the reference operating point."""

    n: int = 100
    t_max: int = 1000
    alpha: float = 0.95
    gamma: float = 0.95
    f_max: float = 0.1
    loudness_init: tuple[float, float] = (1.0, 2.0)
    walk_scale: float = 0.01
    canonical_pulse: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one bat")
        if self.t_max < 0:
            raise ValueError("t_max must be nonnegative")
        if not 0 < self.alpha <= 1 or not 0 < self.gamma <= 1:
            raise ValueError("alpha and gamma must be in (0, 1]")
        lo, hi = self.loudness_init
        if not 0 < lo <= hi:
            raise ValueError("bad loudness range")


@dataclass
class BatPopulation:
    """Mutable swarm state.  ``pulse_init`` keeps each bat's r0 so the pulse
    schedule can be re-derived at any epoch."""

    x: np.ndarray
    v: np.ndarray
    freq: np.ndarray
    loudness: np.ndarray
    pulse: np.ndarray
    pulse_init: np.ndarray
    best_x: np.ndarray
    best_merit: float
    accept_counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.accept_counts is None:
            self.accept_counts = np.zeros(self.x.shape[0], dtype=np.int64)


def bat_init(config: BatConfig, n_features: int) -> BatPopulation:
    """Draw the initial swarm: x ~ U(0,1), v ~ U(-1,1), f ~ U(0, f_max),
    loudness ~ U(1,2), pulse r0 ~ U(0,1).  The incumbent starts empty with
    merit 0; the first scoring sweep claims it."""
    if n_features < 1:
        raise ValueError("need at least one feature")
    rng = np.random.default_rng(config.seed)
    x = rng.uniform(0.0, 1.0, (config.n, n_features))
    v = rng.uniform(-1.0, 1.0, (config.n, n_features))
    freq = rng.uniform(0.0, config.f_max, config.n)
    lo, hi = config.loudness_init
    loudness = rng.uniform(lo, hi, config.n)
    pulse_init = rng.uniform(0.0, 1.0, config.n)
    return BatPopulation(
        x=x,
        v=v,
        freq=freq,
        loudness=loudness,
        pulse=pulse_init.copy(),
        pulse_init=pulse_init,
        best_x=np.zeros(n_features),
        best_merit=0.0,
    )


def seed_incumbent(pop: BatPopulation, evaluator: MeritEvaluator) -> None:
    """Score every bat once and adopt the best strict improvement."""
    for i in range(pop.x.shape[0]):
        merit = evaluator.merit_of_mask(decode_mask(pop.x[i]))
        if merit > pop.best_merit:
            pop.best_merit = merit
            pop.best_x = pop.x[i].copy()


def _pulse_value(r0: float, epoch: int, config: BatConfig) -> float:
    # The decay exponent is gamma raised to the epoch, so late acceptances
    # push the pulse rate back toward zero.  canonical_pulse restores the
    # textbook gamma * epoch product instead.
    if config.canonical_pulse:
        exponent = config.gamma * epoch
    else:
        exponent = config.gamma**epoch
    return r0 * (1.0 - math.exp(-exponent))


def bat_epoch(pop: BatPopulation, evaluator: MeritEvaluator, config: BatConfig, epoch: int) -> BatPopulation:
    """One full pass over the swarm, bats updated in index order.

    The incumbent may move mid-epoch; later bats chase the moved target.
    Every bat's draws for the epoch are fixed up front, whichever branch it
    takes.
    """
    n, _ = pop.x.shape
    rng = _epoch_rng(config.seed, epoch, stream=0)
    freq_draw = rng.uniform(0.0, config.f_max, n)
    gate_walk = rng.uniform(0.0, 1.0, n)
    walk_steps = rng.uniform(-config.walk_scale, config.walk_scale, pop.x.shape)
    gate_accept = rng.uniform(0.0, 1.0, n)

    for i in range(n):
        pop.freq[i] = freq_draw[i]
        v = pop.v[i] + (pop.x[i] - pop.best_x) * pop.freq[i]
        np.clip(v, -1.0, 1.0, out=v)
        pop.v[i] = v
        if pop.pulse[i] >= gate_walk[i]:
            x = pop.x[i] + v  # cruise along the velocity
        else:
            # local walk around the incumbent, loudness-scaled
            x = pop.best_x + walk_steps[i] * pop.loudness[i]
        np.clip(x, -1.0, 1.0, out=x)
        pop.x[i] = x
        merit = evaluator.merit_of_mask(x >= SELECT_THRESHOLD)
        if pop.loudness[i] > gate_accept[i] and merit > pop.best_merit:
            pop.best_x = x.copy()
            pop.best_merit = merit
            pop.accept_counts[i] += 1
            pop.pulse[i] = _pulse_value(pop.pulse_init[i], epoch, config)
            pop.loudness[i] = config.alpha * pop.loudness[i]
    return pop


def bat_run(corr: CorrelationMatrix, config: BatConfig) -> SearchResult:
    """Full bat search over the matrix's feature set."""
    evaluator = MeritEvaluator(corr)
    start = time.perf_counter()
    pop = bat_init(config, evaluator.n_features)
    seed_incumbent(pop, evaluator)
    trace = [pop.best_merit]
    for t in range(1, config.t_max + 1):
        bat_epoch(pop, evaluator, config, t)
        trace.append(pop.best_merit)
    elapsed = time.perf_counter() - start
    subset = decode(pop.best_x)
    subset = replace(subset, cfs=cfs_merit(corr, subset.indices))
    return SearchResult(
        best=subset,
        best_merit=pop.best_merit,
        merit_trace=tuple(trace),
        evaluations=evaluator.evaluations,
        elapsed=elapsed,
        method="ba",
        seed=config.seed,
    )


# ---------------------------------------------------------------------------
# aquila optimizer


@dataclass(frozen=True)
class AquilaConfig:
    """Population parameters for the aquila search.

    The internals follow the optimizer's original description: two
    exploration moves for the first two thirds of the epochs, two
    exploitation moves after, candidate updates kept only on improvement.
    """

    n: int = 100
    t_max: int = 1000
    exploit_alpha: float = 0.1
    exploit_delta: float = 0.1
    levy_beta: float = 1.5
    levy_scale: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one candidate")
        if self.t_max < 0:
            raise ValueError("t_max must be nonnegative")


def _levy_sigma(beta: float) -> float:
    num = math.gamma(1 + beta) * math.sin(math.pi * beta / 2)
    den = math.gamma((1 + beta) / 2) * beta * 2 ** ((beta - 1) / 2)
    return (num / den) ** (1 / beta)


def _levy(rng: np.random.Generator, k: int, beta: float, scale: float) -> np.ndarray:
    u = rng.normal(0.0, _levy_sigma(beta), k)
    v = rng.normal(0.0, 1.0, k)
    return scale * u / np.abs(v) ** (1 / beta)


def _spiral(rng: np.random.Generator, k: int):
    # log-spiral sampling used by the contour-flight move
    d1 = np.arange(1, k + 1, dtype=np.float64)
    r1 = rng.uniform(1.0, 20.0)
    r = r1 + 0.00565 * d1
    theta = -0.005 * d1 + 1.5 * math.pi
    return r * np.cos(theta), r * np.sin(theta)  # (y, x)


def aquila_run(corr: CorrelationMatrix, config: AquilaConfig) -> SearchResult:
    """Aquila search sharing the bat searcher's decode and fitness contract."""
    evaluator = MeritEvaluator(corr)
    k = evaluator.n_features
    lb, ub = -1.0, 1.0
    start = time.perf_counter()

    rng0 = np.random.default_rng(config.seed)
    positions = rng0.uniform(lb, ub, (config.n, k))
    fitness = np.array(
        [evaluator.merit_of_mask(row >= SELECT_THRESHOLD) for row in positions]
    )
    best_i = int(np.argmax(fitness))
    best_x = positions[best_i].copy()
    best_merit = float(fitness[best_i])
    trace = [best_merit]

    t_max = config.t_max
    switch = (2.0 / 3.0) * t_max
    for t in range(1, t_max + 1):
        rng = _epoch_rng(config.seed, t, stream=1)
        mean_x = positions.mean(axis=0)
        for i in range(config.n):
            if t <= switch:
                if rng.uniform() < 0.5:
                    # expanded exploration: sink toward the incumbent,
                    # offset by the population mean
                    x_new = best_x * (1.0 - t / t_max) + (
                        mean_x - best_x * rng.uniform()
                    )
                else:
                    # narrowed exploration: levy flight around the incumbent
                    # plus a random peer and a spiral offset
                    peer = positions[rng.integers(config.n)]
                    y_s, x_s = _spiral(rng, k)
                    x_new = (
                        best_x * _levy(rng, k, config.levy_beta, config.levy_scale)
                        + peer
                        + (y_s - x_s) * rng.uniform()
                    )
            else:
                if rng.uniform() < 0.5:
                    # expanded exploitation: shrunk incumbent/mean gap plus a
                    # bounded random offset
                    x_new = (
                        (best_x - mean_x) * config.exploit_alpha
                        - rng.uniform()
                        + ((ub - lb) * rng.uniform() + lb) * config.exploit_delta
                    )
                else:
                    # narrowed exploitation: quality-function swoop at the
                    # incumbent
                    qf = t ** ((2.0 * rng.uniform() - 1.0) / (1.0 - t_max) ** 2)
                    g1 = 2.0 * rng.uniform() - 1.0
                    g2 = 2.0 * (1.0 - t / t_max)
                    x_new = (
                        qf * best_x
                        - (g1 * positions[i] * rng.uniform())
                        - g2 * _levy(rng, k, config.levy_beta, config.levy_scale)
                        + rng.uniform() * g1
                    )
            x_new = np.clip(np.asarray(x_new, dtype=np.float64), lb, ub)
            merit = evaluator.merit_of_mask(x_new >= SELECT_THRESHOLD)
            if merit > fitness[i]:  # keep a move only when it improves
                positions[i] = x_new
                fitness[i] = merit
            if fitness[i] > best_merit:
                best_merit = float(fitness[i])
                best_x = positions[i].copy()
        trace.append(best_merit)

    elapsed = time.perf_counter() - start
    subset = decode(best_x)
    subset = replace(subset, cfs=cfs_merit(corr, subset.indices))
    return SearchResult(
        best=subset,
        best_merit=best_merit,
        merit_trace=tuple(trace),
        evaluations=evaluator.evaluations,
        elapsed=elapsed,
        method="ao",
        seed=config.seed,
    )


# ---------------------------------------------------------------------------
# exhaustive oracle


def brute_force_best(corr: CorrelationMatrix, max_features: int = 20) -> SearchResult:
    """Enumerate every non-empty subset and return the exact maximum.

    Shares the searchers' merit arithmetic so comparisons are bit-exact.
    Ties resolve to fewer features, then lexicographically smaller indices.
    Refuses more than ``max_features`` features (2^k blow-up).
    """
    evaluator = MeritEvaluator(corr)
    k = evaluator.n_features
    if k > max_features:
        raise ValueError(
            f"{k} features exceed the exhaustive cap of {max_features}"
        )
    start = time.perf_counter()
    best_merit = 0.0
    best_idx: tuple[int, ...] = ()
    bit_range = np.arange(k)
    for code in range(1, 1 << k):
        mask = (code >> bit_range) & 1
        merit = evaluator.merit_of_mask(mask.astype(bool))
        if merit > best_merit:
            best_merit = merit
            best_idx = tuple(int(i) for i in np.flatnonzero(mask))
        elif merit == best_merit and best_idx:
            idx = tuple(int(i) for i in np.flatnonzero(mask))
            if (len(idx), idx) < (len(best_idx), best_idx):
                best_idx = idx
    elapsed = time.perf_counter() - start
    subset = FeatureSubset(best_idx, cfs=cfs_merit(corr, best_idx))
    return SearchResult(
        best=subset,
        best_merit=best_merit,
        merit_trace=(best_merit,),
        evaluations=evaluator.evaluations,
        elapsed=elapsed,
        method="brute",
        seed=0,
    )


# ---------------------------------------------------------------------------
# subset files


def save_subset(subset: FeatureSubset, feature_names, path: str, method: str = "",
                seed: int | None = None, elapsed: float | None = None) -> None:
    """Write a subset as one feature name per line under a metadata block."""
    if subset.indices and subset.indices[-1] >= len(feature_names):
        raise DataError("subset index out of range for the given feature names")
    lines = ["# flowsel-subset v1", f"# k={subset.k}"]
    if subset.cfs is not None:
        lines.append(f"# merit={subset.cfs.merit!r}")
        lines.append(f"# r_cf={subset.cfs.r_cf!r}")
        lines.append(f"# r_ff={subset.cfs.r_ff!r}")
    if subset.ig is not None:
        lines.append(f"# ig_sum={subset.ig!r}")
    if method:
        lines.append(f"# method={method}")
    if seed is not None:
        lines.append(f"# seed={seed}")
    if elapsed is not None:
        lines.append(f"# elapsed={elapsed!r}")
    lines.extend(feature_names[i] for i in subset.indices)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_subset(path: str, feature_names) -> tuple[FeatureSubset, dict]:
    """Read a subset file back; unknown feature names are an error."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw_lines = [ln.rstrip("\n") for ln in fh]
    except OSError as exc:
        raise DataError(f"cannot open subset file {path}: {exc}") from exc
    meta: dict = {}
    names = []
    for ln in raw_lines:
        if not ln.strip():
            continue
        if ln.startswith("#"):
            body = ln.lstrip("#").strip()
            if "=" in body:
                key, _, value = body.partition("=")
                meta[key.strip()] = value.strip()
            continue
        names.append(ln.strip())
    lookup = {name: i for i, name in enumerate(feature_names)}
    indices = []
    for name in names:
        if name not in lookup:
            raise DataError(f"{path}: unknown feature name {name!r}")
        indices.append(lookup[name])
    for key in ("merit", "r_cf", "r_ff", "ig_sum", "elapsed"):
        if key in meta:
            meta[key] = float(meta[key])
    for key in ("k", "seed"):
        if key in meta:
            meta[key] = int(meta[key])
    cfs = None
    if "merit" in meta:
        cfs = CfsScore(meta["merit"], len(indices), meta.get("r_cf", 0.0), meta.get("r_ff", 0.0))
    subset = FeatureSubset(tuple(sorted(indices)), cfs=cfs, ig=meta.get("ig_sum"))
    return subset, meta


def save_trace(result: SearchResult, path: str) -> None:
    """Write the incumbent merit trace as (epoch, best_merit) CSV."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,best_merit\n")
        for epoch, merit in enumerate(result.merit_trace):
            fh.write(f"{epoch},{merit!r}\n")
