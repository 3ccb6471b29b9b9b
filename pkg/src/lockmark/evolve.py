"""Per-image watermark optimization.

A population of genomes [alpha, x, y] is evolved to minimize the oracle's
confidence in the ground-truth class of the blended image. Mutation is a
short greedy basin-hopping chain, crossover is gene-wise Bernoulli, and
selection keeps the child on ties. Every candidate is repaired into the
placement-constraint region before evaluation, so the population is feasible
at all times.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import ConfigurationError, InfeasibleConstraintError, ParameterError
from .lesion_mask import ConstraintMode, ConstraintRegion
from .oracle import Oracle, predicted_class
from .raster import Placement, RgbaImage, WatermarkLogo, blend

GENE_COUNT = 3  # alpha, x, y

MUTATION_BASIN_HOPPING = "bh"
MUTATION_RANDOM = "random"


@dataclass(frozen=True)
class Individual:
    """One genome: transparency plus logo top-left position."""

    alpha: int
    x: int
    y: int
    fitness: float | None = None
    predicted: int | None = None

    @property
    def genes(self) -> tuple[int, int, int]:
        return (self.alpha, self.x, self.y)


@dataclass(frozen=True)
class EsConfig:
    """Optimizer hyperparameters; defaults follow the reference setting."""

    population: int = 50
    generations: int = 3
    crossover_rate: float = 0.9
    mutation_step: int = 10
    bh_iters: int = 3
    alpha_min: int = 100
    alpha_max: int = 255
    seed: int = 0
    early_stop: bool = True
    cache_fitness: bool = False
    mutation: str = MUTATION_BASIN_HOPPING

    def __post_init__(self):
        if self.population < 1:
            raise ParameterError("population must be >= 1")
        if self.generations < 0:
            raise ParameterError("generations must be >= 0")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ParameterError("crossover_rate must lie in [0, 1]")
        if self.mutation_step <= 0:
            raise ParameterError("mutation_step must be > 0")
        if self.bh_iters < 0:
            raise ParameterError("bh_iters must be >= 0")
        if not 0 <= self.alpha_min <= self.alpha_max <= 255:
            raise ParameterError("need 0 <= alpha_min <= alpha_max <= 255")
        if self.mutation not in (MUTATION_BASIN_HOPPING, MUTATION_RANDOM):
            raise ParameterError(f"unknown mutation kind {self.mutation!r}")

    def query_budget(self) -> int:
        """Worst-case oracle queries per attacked image."""
        per_gen = (self.bh_iters + 1) if self.mutation == MUTATION_BASIN_HOPPING else 1
        return self.population * (1 + self.generations * per_gen)

    @classmethod
    def from_dict(cls, d: dict) -> "EsConfig":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigurationError(f"unknown optimizer config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class AttackResult:
    best: Individual
    success: bool
    initial_fitness: float
    final_fitness: float
    queries_used: int
    generations_run: int


class _EarlyStopHit(Exception):
    def __init__(self, individual: Individual):
        self.individual = individual


def derive_image_seed(seed: int, image_id: str) -> int:
    """Stable per-image RNG seed, independent of attack order or worker count."""
    digest = hashlib.sha256(f"{seed}:{image_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class FitnessEvaluator:
    """Evaluates genomes by blending and querying the oracle.

    Tracks query usage and the best objective seen; raises an internal
    early-stop signal as soon as any evaluated image is misclassified when
    that is enabled.
    """

    def __init__(
        self,
        original: RgbaImage,
        logo: WatermarkLogo,
        label: int,
        oracle: Oracle,
        cfg: EsConfig,
    ):
        self.original = original
        self.logo = logo
        self.label = label
        self.oracle = oracle
        self.cfg = cfg
        self.queries = 0
        self.best_seen = float("inf")
        self._cache: dict[tuple[int, int, int], tuple[float, int]] = {}

    def __call__(self, ind: Individual) -> Individual:
        cached = self._cache.get(ind.genes) if self.cfg.cache_fitness else None
        if cached is not None:
            fitness, pred = cached
        else:
            placement = Placement(
                alpha=ind.alpha,
                x=ind.x,
                y=ind.y,
                scaled_w=self.logo.image.width,
                scaled_h=self.logo.image.height,
            )
            scores = self.oracle.score(blend(self.original, self.logo, placement))
            self.queries += 1
            fitness = float(scores.scores[self.label])
            pred = predicted_class(scores)
            if self.cfg.cache_fitness:
                self._cache[ind.genes] = (fitness, pred)
        self.best_seen = min(self.best_seen, fitness)
        evaluated = replace(ind, fitness=fitness, predicted=pred)
        if self.cfg.early_stop and pred != self.label:
            raise _EarlyStopHit(evaluated)
        return evaluated


def repair(
    alpha: int, x: int, y: int, cfg: EsConfig, region: ConstraintRegion
) -> tuple[int, int, int]:
    """Pull a genome back into bounds: clamp alpha, project the position onto
    the nearest feasible cell in Chebyshev distance (ties resolved by scan
    order, so repair is deterministic)."""
    alpha = min(max(alpha, cfg.alpha_min), cfg.alpha_max)
    if region.contains(x, y):
        return alpha, x, y
    if region.mode is ConstraintMode.WAP:
        return alpha, min(max(x, 0), region.valid_w), min(max(y, 0), region.valid_h)
    max_radius = max(region.host_w, region.host_h) + cfg.mutation_step + 1
    for radius in range(1, max_radius + 1):
        for dx in range(-radius, radius + 1):
            for dy in range(-radius, radius + 1):
                if max(abs(dx), abs(dy)) != radius:
                    continue
                if region.contains(x + dx, y + dy):
                    return alpha, x + dx, y + dy
    raise InfeasibleConstraintError("no feasible position reachable from mutation")


def init_population(
    cfg: EsConfig, region: ConstraintRegion, rng: np.random.Generator
) -> list[Individual]:
    out = []
    for _ in range(cfg.population):
        x, y = region.sample_position(rng)
        alpha = int(rng.integers(cfg.alpha_min, cfg.alpha_max + 1))
        out.append(Individual(alpha=alpha, x=x, y=y))
    return out


def _perturb(ind: Individual, cfg: EsConfig, region: ConstraintRegion, rng: np.random.Generator) -> Individual:
    s = cfg.mutation_step
    alpha = ind.alpha + int(rng.integers(-s, s + 1))
    x = ind.x + int(rng.integers(-s, s + 1))
    y = ind.y + int(rng.integers(-s, s + 1))
    alpha, x, y = repair(alpha, x, y, cfg, region)
    return Individual(alpha=alpha, x=x, y=y)


def bh_mutate(
    parent: Individual,
    fitness_fn: Callable[[Individual], Individual],
    cfg: EsConfig,
    region: ConstraintRegion,
    rng: np.random.Generator,
) -> Individual:
    """Greedy basin hopping from an evaluated parent.

    Each hop perturbs every gene by an independent uniform integer step in
    [-s, +s], repairs the candidate, evaluates it, and moves only on a strict
    fitness decrease. Returns the best point visited (possibly the parent).
    """
    if parent.fitness is None:
        raise ParameterError("bh_mutate requires an evaluated parent")
    current = parent
    for _ in range(cfg.bh_iters):
        try:
            candidate = fitness_fn(_perturb(current, cfg, region, rng))
        except InfeasibleConstraintError:
            continue  # unreachable hop; discard it
        if candidate.fitness < current.fitness:
            current = candidate
    return current


def random_mutate(
    parent: Individual, cfg: EsConfig, region: ConstraintRegion, rng: np.random.Generator
) -> Individual:
    """Ablation mutation: one unevaluated random perturbation."""
    return _perturb(parent, cfg, region, rng)


def crossover(
    parent: Individual,
    mutant: Individual,
    cr: float,
    rng: np.random.Generator,
    cfg: EsConfig,
    region: ConstraintRegion,
) -> Individual:
    """Gene-wise mix: each gene comes from the mutant when a uniform draw is
    at most ``cr``, else from the parent. The child is repaired and returned
    with fitness unset."""
    picks = [rng.random() <= cr for _ in range(GENE_COUNT)]
    alpha = mutant.alpha if picks[0] else parent.alpha
    x = mutant.x if picks[1] else parent.x
    y = mutant.y if picks[2] else parent.y
    alpha, x, y = repair(alpha, x, y, cfg, region)
    return Individual(alpha=alpha, x=x, y=y)


def select(
    parent: Individual,
    child: Individual,
    fitness_fn: Callable[[Individual], Individual],
) -> Individual:
    """Greedy survivor selection; ties go to the child."""
    evaluated = fitness_fn(child)
    return evaluated if evaluated.fitness <= parent.fitness else parent


def attack_image(
    original: RgbaImage,
    label: int,
    logo: WatermarkLogo,
    oracle: Oracle,
    region: ConstraintRegion,
    cfg: EsConfig,
) -> AttackResult:
    """Optimize one watermark placement against one labeled image.

    Deterministic for a fixed (image, label, logo, config, toy oracle): the
    RNG is split into one stream for initialization plus one per population
    slot. With early stopping the first misclassified candidate is returned
    as ``best``; ``final_fitness`` is always the best objective observed.
    """
    if not 0 <= label < oracle.class_count:
        raise ParameterError(f"label {label} outside oracle's {oracle.class_count} classes")
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.population + 1)
    master = np.random.default_rng(seeds[0])
    slot_rngs = [np.random.default_rng(s) for s in seeds[1:]]

    evaluator = FitnessEvaluator(original, logo, label, oracle, cfg)
    generations_run = 0
    initial_fitness: float | None = None
    try:
        population = [evaluator(ind) for ind in init_population(cfg, region, master)]
        initial_fitness = min(ind.fitness for ind in population)
        for _ in range(cfg.generations):
            for i in range(cfg.population):
                parent = population[i]
                rng = slot_rngs[i]
                if cfg.mutation == MUTATION_BASIN_HOPPING:
                    mutant = bh_mutate(parent, evaluator, cfg, region, rng)
                else:
                    mutant = random_mutate(parent, cfg, region, rng)
                child = crossover(parent, mutant, cfg.crossover_rate, rng, cfg, region)
                population[i] = select(parent, child, evaluator)
            generations_run += 1
        best = min(population, key=lambda ind: ind.fitness)
        return AttackResult(
            best=best,
            success=best.predicted != label,
            initial_fitness=initial_fitness,
            final_fitness=best.fitness,
            queries_used=evaluator.queries,
            generations_run=generations_run,
        )
    except _EarlyStopHit as hit:
        return AttackResult(
            best=hit.individual,
            success=True,
            initial_fitness=evaluator.best_seen if initial_fitness is None else initial_fitness,
            final_fitness=evaluator.best_seen,
            queries_used=evaluator.queries,
            generations_run=generations_run,
        )
