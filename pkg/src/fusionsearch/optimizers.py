"""Binary genetic algorithm and ring-topology binary PSO over 15-bit genomes.

Both maximize a fitness ``Genome -> float``. Every distinct genome is
evaluated at most once per run; evaluations within one generation or
iteration go through ``map_fn`` so they can run in parallel without changing
the trajectory.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .genome import N_BITS, Genome

MapFn = Callable[[Callable, Sequence], Iterable]


class FitnessError(RuntimeError):
    def __init__(self, genome: Genome, message: str):
        super().__init__(f"fitness evaluation failed for genome {genome}: {message}")
        self.genome = genome
        self.message = message

    def __reduce__(self):
        return FitnessError, (self.genome, self.message)


def safe_fitness(fitness: Callable[[Genome], float], g: Genome) -> float:
    try:
        return float(fitness(g))
    except FitnessError:
        raise
    except Exception as exc:
        raise FitnessError(g, f"{type(exc).__name__}: {exc}") from exc


# --- configs -----------------------------------------------------------------

@dataclass(frozen=True)
class GaConfig:
    population_size: int = 15
    max_generations: int = 20
    crossover_prob: float = 0.9
    initial_mutation_prob: float = 0.2
    mutation_decay: float = 0.3
    mutation_floor: float = 0.01
    elites: int = 2
    patience_max: int = 14
    n_bits: int = N_BITS
    seed: int = 0
    # None -> population_size - elites, one child per non-elite slot
    n_offspring: int | None = None

    def __post_init__(self):
        if self.population_size < 3:
            raise ValueError("population_size must be >= 3")
        for name in ("crossover_prob", "initial_mutation_prob", "mutation_floor"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 <= self.elites < self.population_size:
            raise ValueError("elites must be < population_size")
        if self.n_offspring is not None and self.n_offspring < self.population_size - self.elites:
            raise ValueError("n_offspring must fill every non-elite slot")

    @property
    def offspring(self) -> int:
        return self.population_size - self.elites if self.n_offspring is None else self.n_offspring


@dataclass(frozen=True)
class PsoConfig:
    swarm_size: int = 15
    max_iterations: int = 20
    c1: float = 0.6
    c2: float = 0.3
    initial_inertia: float = 0.9
    inertia_floor: float = 0.4
    inertia_decay: float = 0.09
    initial_velocity: float = 1.0
    patience_max: int = 14
    n_bits: int = N_BITS
    seed: int = 0

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("c1 and c2 must be positive")
        if not 0 < self.inertia_floor <= self.initial_inertia:
            raise ValueError("need 0 < inertia_floor <= initial_inertia")
        if self.swarm_size < 3:
            raise ValueError("swarm_size must be >= 3")


# --- schedules and small operators ------------------------------------------

def mutation_schedule(g: int, cfg: GaConfig = GaConfig()) -> float:
    m0 = cfg.initial_mutation_prob
    m = m0 - m0 * (g // 5) * cfg.mutation_decay
    return cfg.mutation_floor if m < cfg.mutation_floor else m


def inertia_schedule(i: int, cfg: PsoConfig = PsoConfig()) -> float:
    w0 = cfg.initial_inertia
    w = w0 - w0 * (i // 5) * cfg.inertia_decay
    return cfg.inertia_floor if w < cfg.inertia_floor else w


def expected_mutations(m_prob: float, z: int, n_bits: int) -> float:
    return m_prob * (z - 2) * n_bits


def diversity(population) -> float:
    """Mean pairwise Hamming distance normalized by genome length, in [0, 1]."""
    P = np.asarray(population, dtype=np.int64)
    if P.ndim != 2 or P.shape[0] < 2:
        raise ValueError("diversity needs at least two genomes")
    z, L = P.shape
    # per locus, ones * zeros counts the differing pairs
    ones = P.sum(axis=0)
    total = int(np.sum(ones * (z - ones)))
    return 2.0 * total / (z * L * (z - 1))


def tournament_draw(n: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Contestants of a two-member tournament: two independent uniform indices."""
    return rng.integers(0, n, size=2 if size is None else (size, 2))


def tournament_select(n: int, rng: np.random.Generator) -> int:
    """Winner of a two-member tournament over a population sorted best-first.

    The lower index (fitter member) wins.
    """
    return int(tournament_draw(n, rng).min())


def select_parents(n: int, rng: np.random.Generator) -> tuple[int, int]:
    """Two tournaments, repeated until their winners differ."""
    while True:
        p1 = tournament_select(n, rng)
        p2 = tournament_select(n, rng)
        if p1 != p2:
            return p1, p2


def two_point_crossover(p1, p2, rng: np.random.Generator) -> np.ndarray:
    """One child: p1 outside the cut points, p2 between them."""
    p1 = np.asarray(p1)
    p2 = np.asarray(p2)
    L = len(p1)
    a, b = sorted(rng.choice(L + 1, size=2, replace=False))
    child = p1.copy()
    child[a:b] = p2[a:b]
    return child


def update_velocity(v, x, p, l, w: float, c1: float, c2: float, rng: np.random.Generator):
    r1 = rng.random(np.shape(v))
    r2 = rng.random(np.shape(v))
    return w * np.asarray(v) + c1 * r1 * (np.asarray(p) - x) + c2 * r2 * (np.asarray(l) - x)


def _sigmoid(v):
    return 0.5 * (np.tanh(0.5 * np.asarray(v, dtype=np.float64)) + 1.0)


def update_position(v, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(np.shape(v)) < _sigmoid(v)).astype(np.int8)


def ring_best(pbest_fitness: Sequence[float], k: int) -> int:
    """Index of the fittest personal best among k-1, k, k+1 (wrapping); lowest index on ties."""
    n = len(pbest_fitness)
    if n < 3:
        raise ValueError("ring topology needs at least three particles")
    hood = sorted({(k - 1) % n, k, (k + 1) % n})
    return max(hood, key=lambda j: (pbest_fitness[j], -j))


# --- run log -----------------------------------------------------------------

@dataclass
class StepRecord:
    step: int
    best_fitness: float
    step_best_genome: str
    step_best_fitness: float
    diversity: float
    rate: float
    patience: int
    evaluations: int


@dataclass
class OptimizerRunLog:
    algorithm: str
    records: list[StepRecord] = field(default_factory=list)
    stop_cause: str = ""
    best_genome: str = ""
    best_fitness: float = -math.inf
    distinct_evaluations: int = 0
    wall_time_s: float = 0.0

    @property
    def best_trace(self) -> list[float]:
        return [r.best_fitness for r in self.records]

    def summary(self) -> dict:
        # wall time is kept out of the summary so reruns are byte-identical
        return {"algorithm": self.algorithm, "stop_cause": self.stop_cause,
                "best_genome": self.best_genome, "best_fitness": self.best_fitness,
                "distinct_evaluations": self.distinct_evaluations,
                "steps": len(self.records) - 1}

    def write(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "log.jsonl", "w") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")
        (d / "summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, directory: str | Path) -> "OptimizerRunLog":
        d = Path(directory)
        s = json.loads((d / "summary.json").read_text())
        recs = [StepRecord(**json.loads(line)) for line in (d / "log.jsonl").read_text().splitlines()]
        return cls(s["algorithm"], recs, s["stop_cause"], s["best_genome"], s["best_fitness"],
                   s["distinct_evaluations"])


# --- fitness cache -----------------------------------------------------------

class FitnessCache:
    """Memoizes fitness by genome bits; batches new genomes through ``map_fn``."""

    def __init__(self, fitness: Callable[[Genome], float], map_fn: MapFn | None = None):
        self.fitness = fitness
        self.map_fn = map_fn or (lambda fn, xs: [fn(x) for x in xs])
        self.values: dict[Genome, float] = {}

    def __call__(self, rows) -> np.ndarray:
        genomes = [Genome(tuple(int(b) for b in r)) for r in rows]
        new = list(dict.fromkeys(g for g in genomes if g not in self.values))
        if new:
            for g, f in zip(new, self.map_fn(partial(safe_fitness, self.fitness), new)):
                self.values[g] = float(f)
        return np.array([self.values[g] for g in genomes])

    def __len__(self) -> int:
        return len(self.values)


def _sort_desc(pop: np.ndarray, fit: np.ndarray):
    order = np.argsort(-fit, kind="stable")
    return pop[order], fit[order]


# --- GA ----------------------------------------------------------------------

def run_ga(fitness: Callable[[Genome], float], cfg: GaConfig = GaConfig(),
           map_fn: MapFn | None = None, on_step: Callable[[StepRecord], None] | None = None,
           mutation_counter: list | None = None) -> OptimizerRunLog:
    """Generational GA with tournament parents, two-point crossover, bit-flip mutation
    and two carried-over elites.

    ``mutation_counter`` (a list) receives the number of flipped bits per generation.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    cache = FitnessCache(fitness, map_fn)
    z, L = cfg.population_size, cfg.n_bits
    log = OptimizerRunLog("ga")

    pop = rng.integers(0, 2, size=(z, L), dtype=np.int8)
    fit = cache(pop)
    pop, fit = _sort_desc(pop, fit)
    g, pa = 0, 0
    best_fit = -math.inf

    def record(rate):
        rec = StepRecord(g, max(best_fit, float(fit[0])) if g == 0 else best_fit,
                         "".join(map(str, pop[0])), float(fit[0]), diversity(pop), rate, pa,
                         len(cache))
        log.records.append(rec)
        if on_step is not None:
            on_step(rec)

    record(cfg.initial_mutation_prob)
    while g < cfg.max_generations and pa < cfg.patience_max:
        g += 1
        m = mutation_schedule(g, cfg)
        kids = np.empty((cfg.offspring, L), dtype=np.int8)
        flips = 0
        for q in range(cfg.offspring):
            if rng.random() <= cfg.crossover_prob:
                a, b = select_parents(z, rng)
                child = two_point_crossover(pop[a], pop[b], rng)
            else:
                child = pop[tournament_select(z, rng)].copy()
            mask = rng.random(L) <= m
            child[mask] ^= 1
            flips += int(mask.sum())
            kids[q] = child
        if mutation_counter is not None:
            mutation_counter.append(flips)
        kid_fit = cache(kids)
        elites, elite_fit = pop[:cfg.elites].copy(), fit[:cfg.elites].copy()
        merged, merged_fit = _sort_desc(np.concatenate([pop, kids]), np.concatenate([fit, kid_fit]))
        keep = z - cfg.elites
        pop = np.concatenate([elites, merged[:keep]])
        fit = np.concatenate([elite_fit, merged_fit[:keep]])
        pop, fit = _sort_desc(pop, fit)
        if fit[0] > best_fit:
            best_fit = float(fit[0])
            pa = 0
        else:
            pa += 1
        record(m)

    log.stop_cause = "patience" if pa >= cfg.patience_max else "max_steps"
    log.best_genome = "".join(map(str, pop[0]))
    log.best_fitness = float(fit[0])
    log.distinct_evaluations = len(cache)
    log.wall_time_s = time.perf_counter() - t0
    return log


# --- PSO ---------------------------------------------------------------------

def run_pso(fitness: Callable[[Genome], float], cfg: PsoConfig = PsoConfig(),
            map_fn: MapFn | None = None,
            on_step: Callable[[StepRecord], None] | None = None) -> OptimizerRunLog:
    """Binary PSO: sigmoid-sampled positions, ring neighborhoods, decaying inertia."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    cache = FitnessCache(fitness, map_fn)
    S, L = cfg.swarm_size, cfg.n_bits
    log = OptimizerRunLog("pso")

    x = rng.integers(0, 2, size=(S, L), dtype=np.int8)
    v = rng.uniform(-cfg.initial_velocity, cfg.initial_velocity, size=(S, L))
    fx = cache(x)
    p, fp = x.copy(), fx.copy()
    lbest = np.array([ring_best(fp, k) for k in range(S)])
    i, pa = 0, 0
    best_fit = -math.inf
    w = inertia_schedule(0, cfg)

    def record(rate):
        k = int(np.argmax(fp))
        shown = best_fit if i > 0 else float(fp[k])
        rec = StepRecord(i, shown, "".join(map(str, x[int(np.argmax(fx))])), float(fx.max()),
                         diversity(x), rate, pa, len(cache))
        log.records.append(rec)
        if on_step is not None:
            on_step(rec)

    record(w)
    while i < cfg.max_iterations and pa < cfg.patience_max:
        i += 1
        w_prev, w = w, inertia_schedule(i, cfg)
        for k in range(S):
            v[k] = update_velocity(v[k], x[k], p[k], p[lbest[k]], w_prev, cfg.c1, cfg.c2, rng)
            x[k] = update_position(v[k], rng)
        fx = cache(x)
        improved = fx > fp
        p[improved] = x[improved]
        fp = np.where(improved, fx, fp)
        lbest = np.array([ring_best(fp, k) for k in range(S)])
        if fp.max() > best_fit:
            best_fit = float(fp.max())
            pa = 0
        else:
            pa += 1
        record(w_prev)

    k = int(np.argmax(fp))
    log.stop_cause = "patience" if pa >= cfg.patience_max else "max_steps"
    log.best_genome = "".join(map(str, p[k]))
    log.best_fitness = float(fp[k])
    log.distinct_evaluations = len(cache)
    log.wall_time_s = time.perf_counter() - t0
    return log
