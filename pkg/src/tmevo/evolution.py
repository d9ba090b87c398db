"""Genetic search for sparse adversarial perturbations against a detector.

Two modes share the loop skeleton (tournament selection, fitness-weighted
uniform crossover, bounded per-pixel mutation, elitism):

- ``tm_evo``: weighted triple-metric fitness, plateau-driven weight
  adaptation, and one noise-reduction attempt per non-elite member and
  generation. Costs 2N-1 detector calls per generation.
- ``evo_baseline``: single-metric fitness (mean confidence over returned
  detections), no adaptation, no reduction. Costs N calls per generation.

All randomness flows through one numpy Generator seeded from the config, and
is consumed in a fixed order (initialization, then per generation: reduction
subsets, then per child: tournaments, crossover, mutation), so identical
inputs reproduce identical results bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .detector import CountingDetector, DetectionSet, DetectorError
from .fitness import (
    FitnessBreakdown,
    GroundTruth,
    Weights,
    m1_score,
    m2_score,
    m3_score,
    make_ground_truth,
    weighted_fitness,
)
from .imaging import diff_mask, l0_norm, l2_norm

__all__ = [
    "AttackResult",
    "Individual",
    "MODE_BASELINE",
    "MODE_TM_EVO",
    "SearchConfig",
    "adaptive_mutation",
    "crossover",
    "init_population",
    "is_attack",
    "is_plateau",
    "mutation_reduction",
    "run_attack",
    "sample_parents",
]

MODE_TM_EVO = "tm_evo"
MODE_BASELINE = "evo_baseline"
RHO_BAR_DECAY = 0.98


@dataclass
class SearchConfig:
    """Search parameters. Defaults follow the published configuration."""

    population_size: int = 32
    max_generations: int = 400
    mutation_rate: float = 0.02
    perturbation_degree: float = 0.4
    noise_reduction_prob: float = 0.3
    plateau_window: int = 10
    initial_weights: Weights = field(default_factory=lambda: Weights(0.1, 0.9, 0.9))
    attack_threshold: float = 0.9
    mode: str = MODE_TM_EVO
    rng_seed: int = 0

    def validate(self):
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if self.max_generations < 1:
            raise ValueError("max_generations must be at least 1")
        if not (0.0 <= self.mutation_rate <= 1.0):
            raise ValueError("mutation_rate must be in [0, 1]")
        if self.perturbation_degree < 0.0:
            raise ValueError("perturbation_degree must be non-negative")
        if not (0.0 <= self.noise_reduction_prob <= 1.0):
            raise ValueError("noise_reduction_prob must be in [0, 1]")
        if self.plateau_window < 1:
            raise ValueError("plateau_window must be at least 1")
        if not (0.0 < self.attack_threshold <= 1.0):
            raise ValueError("attack_threshold must be in (0, 1]")
        if self.mode not in (MODE_TM_EVO, MODE_BASELINE):
            raise ValueError(f"unknown mode {self.mode!r}")

    def to_dict(self) -> dict:
        return {
            "population_size": self.population_size,
            "max_generations": self.max_generations,
            "mutation_rate": self.mutation_rate,
            "perturbation_degree": self.perturbation_degree,
            "noise_reduction_prob": self.noise_reduction_prob,
            "plateau_window": self.plateau_window,
            "weights": [
                self.initial_weights.w1,
                self.initial_weights.w2,
                self.initial_weights.w3,
            ],
            "attack_threshold": self.attack_threshold,
            "mode": self.mode,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SearchConfig":
        cfg = cls()
        for key in (
            "population_size",
            "max_generations",
            "mutation_rate",
            "perturbation_degree",
            "noise_reduction_prob",
            "plateau_window",
            "attack_threshold",
            "mode",
            "rng_seed",
        ):
            if key in doc:
                setattr(cfg, key, doc[key])
        if "weights" in doc:
            w1, w2, w3 = doc["weights"]
            cfg.initial_weights = Weights(float(w1), float(w2), float(w3))
        cfg.validate()
        return cfg


@dataclass(eq=False)
class Individual:
    image: np.ndarray
    mask: np.ndarray                       # (H, W) bool, pixels ever perturbed
    fitness: FitnessBreakdown | None = None
    max_score: float = 1.0


@dataclass
class AttackResult:
    image: np.ndarray
    success: bool
    generations: int
    l0: int
    l2: float
    runtime_seconds: float
    detector_calls: int
    fitness_history: list[float]
    adaptations: list[dict]
    mode: str
    error: str | None = None


def _mutate_pixels(image, mask, union_coords, rate, degree, rng):
    """Bernoulli(rate) per union pixel, per-channel U(-degree, degree) noise,
    clamped to [0, 1]. Mutates image and mask in place."""
    selected = rng.random(len(union_coords)) < rate
    if degree <= 0.0 or not selected.any():
        return
    ys = union_coords[selected, 0]
    xs = union_coords[selected, 1]
    noise = rng.uniform(-degree, degree, size=(len(ys), image.shape[2]))
    image[ys, xs] = np.clip(image[ys, xs] + noise, 0.0, 1.0)
    mask[ys, xs] = True


def init_population(
    original: np.ndarray, gt: GroundTruth, cfg: SearchConfig, rng
) -> list[Individual]:
    """N members, each the original plus per-channel uniform noise on every
    pixel of the ground-truth box union, clamped to [0, 1]."""
    population = []
    ys = gt.union_coords[:, 0]
    xs = gt.union_coords[:, 1]
    channels = original.shape[2]
    for _ in range(cfg.population_size):
        img = original.copy()
        if cfg.perturbation_degree > 0.0 and len(ys):
            noise = rng.uniform(
                -cfg.perturbation_degree,
                cfg.perturbation_degree,
                size=(len(ys), channels),
            )
            img[ys, xs] = np.clip(img[ys, xs] + noise, 0.0, 1.0)
        population.append(Individual(image=img, mask=diff_mask(original, img)))
    return population


def _tournament(candidates: list[int], fitnesses: list[float], rng) -> int:
    """Binary tournament over the candidate indices; lower fitness wins,
    ties break uniformly at random."""
    if len(candidates) == 1:
        return candidates[0]
    picks = rng.choice(len(candidates), size=2, replace=False)
    a, b = candidates[int(picks[0])], candidates[int(picks[1])]
    if fitnesses[a] < fitnesses[b]:
        return a
    if fitnesses[b] < fitnesses[a]:
        return b
    return a if rng.random() < 0.5 else b


def sample_parents(population: list[Individual], rng) -> tuple[Individual, Individual]:
    """Two distinct parents by binary tournament; the second tournament runs
    over the population minus the first winner."""
    fitnesses = [ind.fitness.weighted for ind in population]
    n = len(population)
    first = _tournament(list(range(n)), fitnesses, rng)
    second = _tournament([i for i in range(n) if i != first], fitnesses, rng)
    return population[first], population[second]


def crossover(
    p1: Individual, p2: Individual, original: np.ndarray, rng
) -> Individual:
    """Per-pixel uniform crossover where the fitter parent contributes more:
    P(pixel from p1) = f(p2) / (f(p1) + f(p2)), or 0.5 when both are zero."""
    f1 = p1.fitness.weighted
    f2 = p2.fitness.weighted
    total = f1 + f2
    q = 0.5 if total == 0.0 else f2 / total
    h, w = original.shape[0], original.shape[1]
    from_p1 = rng.random((h, w)) < q
    img = np.where(from_p1[:, :, None], p1.image, p2.image)
    mask = np.where(from_p1, p1.mask, p2.mask) | diff_mask(original, img)
    return Individual(image=img, mask=mask)


def adaptive_mutation(
    child: Individual, gt: GroundTruth, cfg: SearchConfig, rng
) -> Individual:
    """Mutate the child in place: each union pixel with probability
    mutation_rate gets per-channel U(-degree, degree) noise."""
    _mutate_pixels(
        child.image,
        child.mask,
        gt.union_coords,
        cfg.mutation_rate,
        cfg.perturbation_degree,
        rng,
    )
    return child


def _evaluate(ind, original, gt, detector, weights, mode):
    dets = detector.detect(ind.image)
    if mode == MODE_BASELINE:
        if len(dets):
            fit = float(np.mean([d.score for d in dets.detections]))
        else:
            fit = 0.0
        ind.fitness = FitnessBreakdown(m1=fit, m2=0.0, m3=0.0, weighted=fit)
    else:
        v1 = m1_score(dets, gt)
        v2 = m2_score(diff_mask(original, ind.image), gt)
        v3 = m3_score(original, ind.image, gt)
        ind.fitness = FitnessBreakdown(v1, v2, v3, weighted_fitness(v1, v2, v3, weights))
    ind.max_score = dets.max_score


def mutation_reduction(
    ind: Individual,
    original: np.ndarray,
    gt: GroundTruth,
    detector,
    weights: Weights,
    reduction_prob: float,
    rng,
) -> Individual:
    """One noise-reduction attempt.

    Each currently-differing pixel is independently selected for revert with
    probability reduction_prob; the reverted candidate is scored with exactly
    one detector call and kept only if the attack metric did not degrade
    (M1 non-increasing) while both noise metrics strictly improved. Rejection
    returns the input individual unchanged. An empty perturbation mask is a
    no-op (nothing to revert, no call made).
    """
    if not ind.mask.any():
        return ind
    diffs = np.argwhere(diff_mask(original, ind.image))
    selected = rng.random(len(diffs)) < reduction_prob
    candidate = ind.image.copy()
    if selected.any():
        ys = diffs[selected, 0]
        xs = diffs[selected, 1]
        candidate[ys, xs] = original[ys, xs]
    dets = detector.detect(candidate)
    v1 = m1_score(dets, gt)
    v2 = m2_score(diff_mask(original, candidate), gt)
    v3 = m3_score(original, candidate, gt)
    cur = ind.fitness
    if v1 <= cur.m1 and v2 < cur.m2 and v3 < cur.m3:
        mask = ind.mask.copy()
        if selected.any():
            mask[ys, xs] = False
        return Individual(
            image=candidate,
            mask=mask,
            fitness=FitnessBreakdown(v1, v2, v3, weighted_fitness(v1, v2, v3, weights)),
            max_score=dets.max_score,
        )
    return ind


def is_plateau(history: list[float], window: int) -> bool:
    """True when the trailing `window` generations brought no strict
    improvement over the level just before them. Needs window+1 entries."""
    if len(history) < window + 1:
        return False
    return min(history[-window:]) >= history[-window - 1]


def is_attack(dets: DetectionSet, threshold: float) -> bool:
    """Successful attack: no detection scores above the threshold."""
    return dets.max_score <= threshold


def _best_index(population: list[Individual]) -> int:
    return min(range(len(population)), key=lambda i: population[i].fitness.weighted)


def run_attack(
    original: np.ndarray, detector, cfg: SearchConfig, observer=None
) -> AttackResult:
    """Run the search until the best member is a successful attack or the
    generation budget runs out.

    Per generation: evaluate all N members (N detector calls); in tm_evo
    mode, one reduction attempt per non-elite member (N-1 calls, each using
    the member's fresh metrics); record the best fitness; on a plateau adapt
    the weights and reduction probability and re-weight the cached fitness
    values; check the best member for attack success; otherwise breed N-1
    children and carry the best over unchanged.

    The observer, if given, is called once per generation as
    observer(generation, population, best_index, weights, rho_bar) after
    reduction and adaptation, before the attack check.

    Detector failures abort the run and are reported on the result rather
    than raised; a missing ground truth (nothing above the attack threshold
    on the original image) raises, since no attack is defined.
    """
    cfg.validate()
    start = time.perf_counter()
    counting = CountingDetector(inner=detector)
    rng = np.random.default_rng(cfg.rng_seed)
    weights = cfg.initial_weights
    rho_bar = cfg.noise_reduction_prob
    tm = cfg.mode == MODE_TM_EVO

    gt = make_ground_truth(original, counting, cfg.attack_threshold)
    population = init_population(original, gt, cfg, rng)
    history: list[float] = []
    adaptations: list[dict] = []
    anchor = 0
    best = population[0]
    generations = 0
    success = False
    error = None

    try:
        for gen in range(1, cfg.max_generations + 1):
            generations = gen
            for ind in population:
                _evaluate(ind, original, gt, counting, weights, cfg.mode)
            if tm:
                exempt = _best_index(population)
                for j in range(len(population)):
                    if j == exempt:
                        continue
                    population[j] = mutation_reduction(
                        population[j], original, gt, counting, weights, rho_bar, rng
                    )
            best_i = _best_index(population)
            history.append(population[best_i].fitness.weighted)
            if (
                tm
                and (len(history) - anchor) >= cfg.plateau_window + 1
                and is_plateau(history, cfg.plateau_window)
            ):
                weights = weights.adapted()
                rho_bar = max(0.0, rho_bar * RHO_BAR_DECAY)
                anchor = len(history)
                for ind in population:
                    f = ind.fitness
                    ind.fitness = FitnessBreakdown(
                        f.m1, f.m2, f.m3, weighted_fitness(f.m1, f.m2, f.m3, weights)
                    )
                adaptations.append(
                    {
                        "generation": gen,
                        "w1": weights.w1,
                        "w2": weights.w2,
                        "w3": weights.w3,
                        "rho_bar": rho_bar,
                    }
                )
                best_i = _best_index(population)
            best = population[best_i]
            if observer is not None:
                observer(gen, population, best_i, weights, rho_bar)
            if best.max_score <= cfg.attack_threshold:
                success = True
                break
            children = []
            for _ in range(cfg.population_size - 1):
                p1, p2 = sample_parents(population, rng)
                child = crossover(p1, p2, original, rng)
                children.append(adaptive_mutation(child, gt, cfg, rng))
            population = [best] + children
    except DetectorError as exc:
        error = f"{type(exc).__name__}: {exc}"

    img = best.image
    return AttackResult(
        image=img,
        success=success,
        generations=generations,
        l0=l0_norm(original, img),
        l2=l2_norm(original, img),
        runtime_seconds=time.perf_counter() - start,
        detector_calls=counting.calls,
        fitness_history=history,
        adaptations=adaptations,
        mode=cfg.mode,
        error=error,
    )
