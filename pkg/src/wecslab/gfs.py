"""Genetic fuzzy pitch controller.

Wind speed and pitch are each described by seven linguistic values
(VS, S, MS, M, ML, L, VL, coded 1..7) with triangular membership functions.
A rule ``a -> c`` reads "if wind is a then pitch is c" and is written as the
two-digit string ``f"{a}{c}"``. Inference is Mamdani: min activation, max
aggregation, centroid defuzzification on a fixed grid.

Rules evolve one per individual. Each rule is scored inside the rule base
formed by the best rule per antecedent in the current population, with a
fitness that blends how well the rule matches the reference pitch classes
(coverage) and how close the resulting rule base holds rated power at rated
speed (regulation).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import atomic_write_text, csv_text
from .refgen import ReferenceDataset
from .turbine import OperatingPoint, TurbineParams, aerodynamic_power

LABELS = ("VS", "S", "MS", "M", "ML", "L", "VL")
LABEL_NAMES = ("VERY SMALL", "SMALL", "MEDIUM SMALL", "MEDIUM", "MEDIUM LARGE", "LARGE", "VERY LARGE")
N_CODES = len(LABELS)
OUTPUT_GRID_POINTS = 1001
HISTORY_HEADER = ("generation", "best", "mean")
RULEBASE_MAGIC = "# wecslab-rulebase 1"


@dataclass(frozen=True)
class LinguisticScale:
    """Seven triangular sets over one physical variable.

    ``breakpoints[k]`` is the ``(left, peak, right)`` triple of code ``k+1``.
    Code 1 is flat (membership 1) below its peak and code 7 above its peak.
    """

    range_lo: float
    range_hi: float
    breakpoints: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        bp = tuple(tuple(float(x) for x in t) for t in self.breakpoints)
        object.__setattr__(self, "breakpoints", bp)
        if len(bp) != N_CODES or any(len(t) != 3 for t in bp):
            raise ValueError(f"need {N_CODES} (left, peak, right) triples")
        if not self.range_lo < self.range_hi:
            raise ValueError("range_lo must be below range_hi")
        peaks = [t[1] for t in bp]
        if any(b <= a for a, b in zip(peaks, peaks[1:])):
            raise ValueError("peaks must be strictly increasing")
        for left, peak, right in bp:
            if not left <= peak <= right:
                raise ValueError("each triangle needs left <= peak <= right")
        # with shoulders at both ends, a gap can only open between neighbours
        if any(bp[k][2] <= bp[k + 1][0] for k in range(N_CODES - 1)):
            raise ValueError("adjacent triangles must overlap so every x has nonzero membership")

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "LinguisticScale":
        """Evenly spaced peaks from ``lo`` to ``hi`` with 50% overlap."""
        h = (hi - lo) / (N_CODES - 1)
        peaks = [lo + k * h for k in range(N_CODES)]
        peaks[-1] = hi
        return cls(lo, hi, tuple((p - h, p, p + h) for p in peaks))

    @property
    def peaks(self) -> np.ndarray:
        return np.array([t[1] for t in self.breakpoints])

    def membership_all(self, x) -> np.ndarray:
        """Membership of every code; shape ``(..., 7)``."""
        x = np.asarray(x, dtype=float)[..., None]
        bp = np.array(self.breakpoints)
        left, peak, right = bp[:, 0], bp[:, 1], bp[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            rise = np.where(peak > left, (x - left) / (peak - left), 1.0)
            fall = np.where(right > peak, (right - x) / (right - peak), 1.0)
        mu = np.where(x <= peak, rise, fall)
        mu = np.where((x < left) | (x > right), 0.0, mu)
        mu[..., 0] = np.where(x[..., 0] <= peak[0], 1.0, mu[..., 0])
        mu[..., -1] = np.where(x[..., 0] >= peak[-1], 1.0, mu[..., -1])
        return np.clip(mu, 0.0, 1.0)

    def classify(self, x) -> np.ndarray:
        """Code (1..7) of highest membership; ties go to the lower code."""
        return np.argmax(self.membership_all(x), axis=-1) + 1


DEFAULT_WIND_SCALE = LinguisticScale.uniform(4.0, 25.0)
DEFAULT_PITCH_SCALE = LinguisticScale.uniform(-2.0, 30.0)


def _check_code(code: int) -> int:
    if isinstance(code, bool) or int(code) != code or not 1 <= code <= N_CODES:
        raise ValueError(f"linguistic code must be an integer in 1..{N_CODES}, got {code!r}")
    return int(code)


def membership(x: float, scale: LinguisticScale, code: int) -> float:
    return float(scale.membership_all(x)[_check_code(code) - 1])


@dataclass(frozen=True, order=True)
class FuzzyRule:
    antecedent: int
    consequent: int

    def __post_init__(self):
        _check_code(self.antecedent)
        _check_code(self.consequent)

    def describe(self) -> str:
        return f"IF wind is {LABEL_NAMES[self.antecedent - 1]} THEN pitch is {LABEL_NAMES[self.consequent - 1]}"


def encode_rule(rule: FuzzyRule) -> str:
    return f"{rule.antecedent}{rule.consequent}"


def decode_rule(text: str) -> FuzzyRule:
    s = text.strip()
    if len(s) != 2 or any(ch not in "1234567" for ch in s):
        raise ValueError(f"rule code must be two digits from 1..7, got {text!r}")
    return FuzzyRule(int(s[0]), int(s[1]))


@dataclass(frozen=True)
class RuleBase:
    rules: tuple[FuzzyRule, ...]
    wind_scale: LinguisticScale = DEFAULT_WIND_SCALE
    pitch_scale: LinguisticScale = DEFAULT_PITCH_SCALE

    def __post_init__(self):
        rules = tuple(sorted(self.rules))
        object.__setattr__(self, "rules", rules)
        if not 1 <= len(rules) <= N_CODES:
            raise ValueError(f"a rule base holds 1..{N_CODES} rules, got {len(rules)}")
        antecedents = [r.antecedent for r in rules]
        if len(set(antecedents)) != len(antecedents):
            raise ValueError("two rules share an antecedent")

    @property
    def key(self) -> tuple[tuple[int, int], ...]:
        return tuple((r.antecedent, r.consequent) for r in self.rules)

    def consequent_of(self, antecedent: int) -> int | None:
        for r in self.rules:
            if r.antecedent == antecedent:
                return r.consequent
        return None

    def is_monotone(self) -> bool:
        cons = [r.consequent for r in self.rules]
        return all(b >= a for a, b in zip(cons, cons[1:]))

    def describe(self) -> str:
        return "\n".join(r.describe() for r in self.rules)

    def to_text(self) -> str:
        lines = [RULEBASE_MAGIC]
        for name, scale in (("wind", self.wind_scale), ("pitch", self.pitch_scale)):
            lines.append(f"{name}_range {scale.range_lo!r} {scale.range_hi!r}")
            for code, (lo, pk, hi) in enumerate(scale.breakpoints, start=1):
                lines.append(f"{name} {code} {lo!r} {pk!r} {hi!r}")
        lines.extend(encode_rule(r) for r in self.rules)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RuleBase":
        lines = [ln.strip() for ln in text.splitlines()]
        if not lines or lines[0] != RULEBASE_MAGIC:
            raise ValueError("not a rule-base file")
        ranges: dict[str, tuple[float, float]] = {}
        bps: dict[str, dict[int, tuple[float, float, float]]] = {"wind": {}, "pitch": {}}
        rules = []
        for lineno, ln in enumerate(lines[1:], start=2):
            if not ln or ln.startswith("#"):
                continue
            parts = ln.split()
            try:
                if parts[0] in ("wind_range", "pitch_range"):
                    ranges[parts[0][:-6]] = (float(parts[1]), float(parts[2]))
                elif parts[0] in bps:
                    bps[parts[0]][_check_code(int(parts[1]))] = tuple(float(p) for p in parts[2:5])
                else:
                    rules.append(decode_rule(ln))
            except (IndexError, ValueError) as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        scales = []
        for name in ("wind", "pitch"):
            if name not in ranges or sorted(bps[name]) != list(range(1, N_CODES + 1)):
                raise ValueError(f"incomplete {name} scale")
            scales.append(LinguisticScale(*ranges[name], tuple(bps[name][k] for k in range(1, N_CODES + 1))))
        return cls(tuple(rules), *scales)

    def save(self, path: str | Path) -> Path:
        return atomic_write_text(path, self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "RuleBase":
        return cls.from_text(Path(path).read_text())


# The shipped rule base: MS->VS, M->S, ML->M, L->L, VL->VL.
DEFAULT_RULE_BASE = RuleBase(tuple(FuzzyRule(a, c) for a, c in ((3, 1), (4, 2), (5, 4), (6, 6), (7, 7))))


class _Inference:
    """Precomputed output grid for one pitch scale."""

    def __init__(self, pitch_scale: LinguisticScale):
        self.grid = np.linspace(pitch_scale.range_lo, pitch_scale.range_hi, OUTPUT_GRID_POINTS)
        self.consequent_mu = pitch_scale.membership_all(self.grid).T  # (7, G)


_INFERENCE_CACHE: dict[LinguisticScale, _Inference] = {}


def _inference_for(scale: LinguisticScale) -> _Inference:
    inf = _INFERENCE_CACHE.get(scale)
    if inf is None:
        inf = _INFERENCE_CACHE[scale] = _Inference(scale)
    return inf


def infer_pitch_many(rb: RuleBase, v, beta_min: float = -2.0, beta_max: float = 30.0) -> np.ndarray:
    """Vectorised :func:`infer_pitch` over an array of wind speeds."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    inf = _inference_for(rb.pitch_scale)
    ante = np.array([r.antecedent - 1 for r in rb.rules])
    cons = np.array([r.consequent - 1 for r in rb.rules])
    act = rb.wind_scale.membership_all(v)[:, ante]  # (n, R)
    clipped = np.minimum(act[:, :, None], inf.consequent_mu[cons][None, :, :])  # (n, R, G)
    agg = clipped.max(axis=1)
    mass = agg.sum(axis=1)
    out = np.full(v.shape, float(beta_min))
    ok = mass > 0
    out[ok] = (agg[ok] @ inf.grid) / mass[ok]
    return np.clip(out, beta_min, beta_max)


def infer_pitch(rb: RuleBase, v: float, beta_min: float = -2.0, beta_max: float = 30.0) -> float:
    """Crisp pitch command for wind speed ``v``; ``beta_min`` if no rule fires."""
    return float(infer_pitch_many(rb, [v], beta_min, beta_max)[0])


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 60
    iterations: int = 100
    p_crossover: float = 0.7
    p_mutation: float = 0.6
    replacement_count: int | None = None  # None: 10% of the population
    fitness_w_coverage: float = 0.5
    fitness_w_regulation: float = 0.5
    seed: int = 0
    offspring_count: int | None = None  # None: twice the replacement count
    max_rules: int = 5
    fitness_mode: str = "static"  # or "closed_loop"

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        for name in ("p_crossover", "p_mutation"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        w1, w2 = self.fitness_w_coverage, self.fitness_w_regulation
        if w1 < 0 or w2 < 0 or abs(w1 + w2 - 1.0) > 1e-9:
            raise ValueError("fitness weights must be non-negative and sum to 1")
        if self.replacement_count is None:
            object.__setattr__(self, "replacement_count", max(1, round(0.1 * self.population_size)))
        if not 1 <= self.replacement_count < self.population_size:
            raise ValueError("replacement_count must be in [1, population_size)")
        if self.offspring_count is None:
            object.__setattr__(self, "offspring_count", 2 * self.replacement_count)
        if self.offspring_count < self.replacement_count:
            raise ValueError("offspring_count must be >= replacement_count")
        if not 1 <= self.max_rules <= N_CODES:
            raise ValueError(f"max_rules must be in 1..{N_CODES}")
        if self.fitness_mode not in ("static", "closed_loop"):
            raise ValueError("fitness_mode must be 'static' or 'closed_loop'")


class FitnessEvaluator:
    """Scores rules and rule bases against a reference dataset.

    Coverage only depends on the rule, and regulation only on the rule base,
    so both are memoised.
    """

    def __init__(
        self,
        dataset: ReferenceDataset,
        params: TurbineParams | None = None,
        cfg: GaConfig | None = None,
        wind_scale: LinguisticScale = DEFAULT_WIND_SCALE,
        pitch_scale: LinguisticScale = DEFAULT_PITCH_SCALE,
    ):
        if not len(dataset):
            raise ValueError("dataset is empty")
        self.params = params or TurbineParams()
        self.cfg = cfg or GaConfig()
        self.wind_scale = wind_scale
        self.pitch_scale = pitch_scale
        self.op = OperatingPoint.from_params(self.params)
        v = dataset.column("v")
        self._row_mu = wind_scale.membership_all(v)  # (n, 7)
        self._row_class = pitch_scale.classify(dataset.column("beta_star"))
        above = v[v > self.params.v_rated]
        if above.size == 0:
            above = np.arange(self.params.v_rated + 0.5, self.params.v_cutout + 1e-9, 0.5)
        self.regulation_grid = above
        self._grid_mu = wind_scale.membership_all(above)
        self._coverage: dict[tuple[int, int], float] = {}
        self._errors: dict[tuple, np.ndarray] = {}

    def coverage(self, rule: FuzzyRule) -> float:
        key = (rule.antecedent, rule.consequent)
        if key not in self._coverage:
            fires = self._row_mu[:, rule.antecedent - 1] > 0
            n = int(fires.sum())
            hits = int(np.sum(self._row_class[fires] == rule.consequent))
            self._coverage[key] = hits / n if n else 0.0
        return self._coverage[key]

    def rule_base_coverage(self, rb: RuleBase) -> float:
        """Fraction of firing rows whose class matches the most active rule."""
        ante = np.array([r.antecedent - 1 for r in rb.rules])
        cons = np.array([r.consequent for r in rb.rules])
        act = self._row_mu[:, ante]
        fires = act.max(axis=1) > 0
        if not fires.any():
            return 0.0
        chosen = cons[np.argmax(act[fires], axis=1)]
        return float(np.mean(chosen == self._row_class[fires]))

    def power_errors(self, rb: RuleBase) -> np.ndarray:
        """Relative rated-power error of ``rb`` at each regulation grid speed, capped at 1."""
        if rb.key not in self._errors:
            if self.cfg.fitness_mode == "closed_loop":
                errs = _closed_loop_errors(rb, self.params, self.regulation_grid)
            else:
                errs = self._static_errors(rb)
            self._errors[rb.key] = errs
        return self._errors[rb.key]

    def _static_errors(self, rb: RuleBase) -> np.ndarray:
        p = self.params
        betas = infer_pitch_many(rb, self.regulation_grid, p.beta_min, p.beta_max)
        return np.array([
            min(1.0, abs(aerodynamic_power(v, self.op.omega_rated, b, p).power - p.p_rated) / p.p_rated)
            for v, b in zip(self.regulation_grid, betas)
        ])

    def regulation(self, rb: RuleBase, rule: FuzzyRule | None = None) -> float:
        """One minus the mean power error of ``rb``.

        Given ``rule``, the mean is weighted by that rule's activation, so a
        rule is credited only for the speeds it influences; a rule that
        fires nowhere on the grid scores 0.
        """
        errs = self.power_errors(rb)
        if rule is None:
            return 1.0 - float(np.mean(errs))
        w = self._grid_mu[:, rule.antecedent - 1]
        if w.sum() <= 0:
            return 0.0
        return 1.0 - float(np.dot(w, errs) / w.sum())

    def combine(self, coverage: float, regulation: float) -> float:
        return self.cfg.fitness_w_coverage * coverage + self.cfg.fitness_w_regulation * regulation

    def rule_in_context(self, rule: FuzzyRule, context: dict[int, FuzzyRule]) -> float:
        """Fitness of ``rule`` once it takes its antecedent's slot in ``context``."""
        slots = dict(context)
        slots[rule.antecedent] = rule
        rb = RuleBase(tuple(slots.values()), self.wind_scale, self.pitch_scale)
        return self.combine(self.coverage(rule), self.regulation(rb, rule))

    def rule_base(self, rb: RuleBase) -> float:
        return self.combine(self.rule_base_coverage(rb), self.regulation(rb))


def _closed_loop_errors(rb: RuleBase, params: TurbineParams, grid: np.ndarray) -> np.ndarray:
    """Power errors measured by short steady-wind simulations instead of the static balance."""
    from .simloop import GfsController, SimConfig, run
    from .wind import WindSeries

    cfg = SimConfig(dt=0.1, duration=40.0)
    errs = []
    for v in grid:
        trace = run(WindSeries.constant(float(v), cfg.duration, 1.0), params, GfsController(rb, params), cfg)
        tail = trace.p_pu[trace.t >= cfg.duration - 10.0]
        errs.append(min(1.0, float(np.mean(np.abs(tail - 1.0)))))
    return np.array(errs)


def fitness(
    rb_or_rule: RuleBase | FuzzyRule,
    dataset: ReferenceDataset,
    params: TurbineParams | None = None,
    cfg: GaConfig | None = None,
    context: RuleBase | None = None,
) -> float:
    """Weighted coverage plus regulation, in [0, 1].

    A lone rule is scored inside ``context`` (default: the shipped rule
    base), replacing whatever rule held its antecedent there.
    """
    ev = FitnessEvaluator(dataset, params, cfg)
    if isinstance(rb_or_rule, RuleBase):
        return ev.rule_base(rb_or_rule)
    ctx = context or DEFAULT_RULE_BASE
    return ev.rule_in_context(rb_or_rule, {r.antecedent: r for r in ctx.rules})


@dataclass
class EvolutionResult:
    rule_base: RuleBase
    history: list[tuple[int, float, float]]
    population: list[FuzzyRule] = field(default_factory=list)
    population_fitness: list[float] = field(default_factory=list)

    def history_csv(self) -> str:
        return csv_text(HISTORY_HEADER, self.history)

    def save_history(self, path: str | Path) -> Path:
        return atomic_write_text(path, self.history_csv())


def read_history(path: str | Path) -> list[tuple[int, float, float]]:
    with io.StringIO(Path(path).read_text()) as fh:
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != HISTORY_HEADER:
            raise ValueError(f"{path}: expected header {','.join(HISTORY_HEADER)}")
        return [(int(g), float(b), float(m)) for g, b, m in reader]


def _best_per_antecedent(pop: Sequence[FuzzyRule], scores: Sequence[float]) -> dict[int, FuzzyRule]:
    best: dict[int, tuple[float, FuzzyRule]] = {}
    for rule, score in zip(pop, scores):
        held = best.get(rule.antecedent)
        if held is None or score > held[0]:
            best[rule.antecedent] = (score, rule)
    return {a: r for a, (_, r) in best.items()}


def _shared_fitness(pop: Sequence[FuzzyRule], scores: Sequence[float]) -> list[float]:
    """Fitness divided by the number of rules sharing the antecedent (niching)."""
    counts: dict[int, int] = {}
    for r in pop:
        counts[r.antecedent] = counts.get(r.antecedent, 0) + 1
    return [score / counts[r.antecedent] for r, score in zip(pop, scores)]


def _tournament(rng: np.random.Generator, scores: Sequence[float]) -> int:
    i, j = rng.integers(len(scores), size=2)
    return int(i) if scores[i] >= scores[j] else int(j)


def _mutate_gene(rng: np.random.Generator, code: int, p: float) -> int:
    if rng.random() >= p:
        return code
    other = int(rng.integers(1, N_CODES))  # uniform over the six other codes
    return other if other < code else other + 1


def _offspring(rng, pop, scores, cfg: GaConfig) -> list[FuzzyRule]:
    children: list[FuzzyRule] = []
    while len(children) < cfg.offspring_count:
        a = pop[_tournament(rng, scores)]
        b = pop[_tournament(rng, scores)]
        ga, gb = [a.antecedent, a.consequent], [b.antecedent, b.consequent]
        if rng.random() < cfg.p_crossover:
            for k in range(2):
                if rng.random() < 0.5:
                    ga[k], gb[k] = gb[k], ga[k]
        for genes in (ga, gb):
            genes = [_mutate_gene(rng, g, cfg.p_mutation) for g in genes]
            children.append(FuzzyRule(*genes))
    return children[: cfg.offspring_count]


def extract_rule_base(
    pop: Sequence[FuzzyRule], scores: Sequence[float], max_rules: int, **scales
) -> RuleBase:
    """Fittest rule per antecedent, pruned to the ``max_rules`` fittest."""
    best: dict[int, tuple[float, int]] = {}
    for idx, (rule, score) in enumerate(zip(pop, scores)):
        held = best.get(rule.antecedent)
        if held is None or score > held[0]:
            best[rule.antecedent] = (score, idx)
    ranked = sorted(best.values(), key=lambda t: (-t[0], t[1]))[:max_rules]
    return RuleBase(tuple(pop[idx] for _, idx in ranked), **scales)


def evolve(
    cfg: GaConfig | None,
    dataset: ReferenceDataset,
    params: TurbineParams | None = None,
    initial_population: Iterable[FuzzyRule] | None = None,
) -> EvolutionResult:
    """Evolve a population of single rules and extract a compact rule base.

    Each generation draws from its own RNG substream of ``cfg.seed``. A rule's
    fitness is computed once, at birth, within the best-per-antecedent rule
    base of the population it joins. Tournament selection and replacement
    rank rules by fitness shared among rules with the same antecedent, so
    one wind class cannot crowd out the others; the single fittest rule is
    never replaced, so the best fitness never drops. The final extraction
    re-scores the surviving population in its own context.
    """
    cfg = cfg or GaConfig()
    ev = FitnessEvaluator(dataset, params, cfg)
    streams = [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(cfg.seed).spawn(cfg.iterations + 1)]

    if initial_population is None:
        codes = streams[0].integers(1, N_CODES + 1, size=(cfg.population_size, 2))
        pop = [FuzzyRule(int(a), int(c)) for a, c in codes]
    else:
        pop = list(initial_population)
        if len(pop) != cfg.population_size:
            raise ValueError("initial population size does not match population_size")

    context = _best_per_antecedent(pop, [ev.coverage(r) for r in pop])
    scores = [ev.rule_in_context(r, context) for r in pop]
    history = [(0, max(scores), float(np.mean(scores)))]

    for gen in range(1, cfg.iterations + 1):
        rng = streams[gen]
        context = _best_per_antecedent(pop, scores)
        shared = _shared_fitness(pop, scores)
        children = _offspring(rng, pop, shared, cfg)
        child_scores = [ev.rule_in_context(c, context) for c in children]
        best_children = sorted(range(len(children)), key=lambda k: (-child_scores[k], k))[: cfg.replacement_count]
        elite = max(range(len(pop)), key=lambda k: (scores[k], -k))
        candidates = sorted((k for k in range(len(pop)) if k != elite), key=lambda k: (shared[k], k))
        for slot, k in zip(candidates[: cfg.replacement_count], best_children):
            pop[slot] = children[k]
            scores[slot] = child_scores[k]
        history.append((gen, max(scores), float(np.mean(scores))))

    final_context = _best_per_antecedent(pop, scores)
    final_scores = [ev.rule_in_context(r, final_context) for r in pop]
    rb = extract_rule_base(
        pop, final_scores, cfg.max_rules, wind_scale=ev.wind_scale, pitch_scale=ev.pitch_scale
    )
    return EvolutionResult(rb, history, list(pop), list(scores))
