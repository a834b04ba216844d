"""Fact verification with a conjugate-prior truth model.

Each fact f has a latent truth z_f ~ Beta(beta1, beta0); each source s an
error variance w_s ~ Scale-inv-chi2(nu_s, tau2_s); each observation
o_fs ~ N(z_f, w_s). Integrating the variances out leaves an objective in z
alone, which is minimised by gradient descent in logit space.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .chi2 import chi2_ppf
from .kb import Fact, KnowledgeBase
from .sources import Claim

log = logging.getLogger(__name__)

FactKey = tuple[str, str, str]


@dataclass
class TruthConfig:
    beta: tuple[float, float] = (5.0, 5.0)
    alpha: float = 0.05
    epsilon: float = 0.5
    step_size: float = 1.0
    max_iter: int = 5000
    tol: float = 1e-6
    ftol: float = 1e-12
    use_ci_estimator: bool = True
    use_prior_truths: bool = True
    refine_rounds: int = 1
    cardinality_threshold: float = 0.1
    tau2_floor: float = 1e-6
    delta: float = 1e-6
    armijo: float = 1e-4

    def __post_init__(self):
        self.beta = tuple(float(b) for b in self.beta)
        if len(self.beta) != 2 or min(self.beta) <= 0:
            raise ValueError("beta needs two positive pseudo-counts")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.max_iter < 1 or self.tol <= 0 or self.ftol < 0 or self.step_size <= 0:
            raise ValueError("invalid optimizer settings")


@dataclass
class SourceStats:
    source: str
    nu: float
    tau2: float
    facts: list[FactKey]
    observations: list[float]
    reliability: float | None = None

    @property
    def n_claims(self) -> int:
        return len(self.facts)


@dataclass
class TruthAssignment:
    z: dict[FactKey, float]
    labels: dict[FactKey, bool] = field(default_factory=dict)
    sources_of: dict[FactKey, list[str]] = field(default_factory=dict)
    objective: float | None = None
    converged: bool = True
    iterations: int = 0
    history: list[float] = field(default_factory=list)


def _sources_of(claims: Iterable[Claim]) -> dict[FactKey, list[str]]:
    out: dict[FactKey, list[str]] = defaultdict(list)
    for c in claims:
        out[c.fact.key].append(c.source)
    return {k: sorted(v) for k, v in out.items()}


def majority_init(claims: Sequence[Claim], facts: Iterable[FactKey] = (),
                  delta: float = 1e-6) -> TruthAssignment:
    """Mean observation per fact, clamped into (delta, 1 - delta)."""
    sums: dict[FactKey, float] = defaultdict(float)
    counts: dict[FactKey, int] = defaultdict(int)
    for c in claims:
        sums[c.fact.key] += c.observation
        counts[c.fact.key] += 1
    for f in facts:
        if f not in counts:
            raise ValueError(f"fact {f} has no claims")
    z = {f: min(max(sums[f] / counts[f], delta), 1.0 - delta) for f in sorted(counts)}
    return TruthAssignment(z, sources_of=_sources_of(claims))


def set_hyperparameters(claims: Sequence[Claim], zhat: Mapping[FactKey, float],
                        prior_truths: Iterable = (), config: TruthConfig | None = None,
                        sources: Iterable[str] = ()) -> dict[str, SourceStats]:
    """Per-source (nu_s, tau2_s) from deviations between observations and ``zhat``.

    nu_s is the source's claim count. tau2_s is the sample variance, or with
    ``use_ci_estimator`` the upper end of its (1 - alpha) confidence interval,
    sum / chi2_ppf(alpha / 2, |F_s|). Prior-truth facts count as z = 1.
    """
    config = config or TruthConfig()
    priors = {_key(f) for f in prior_truths} if config.use_prior_truths else set()
    by_source: dict[str, list[Claim]] = defaultdict(list)
    for c in claims:
        by_source[c.source].append(c)
    for s in sources:
        if s not in by_source:
            log.warning("source %s has no claims; dropped", s)
    stats = {}
    for s in sorted(by_source):
        cs = sorted(by_source[s], key=lambda c: c.fact.key)
        n = len(cs)
        ss = 0.0
        for c in cs:
            z = 1.0 if c.fact.key in priors else zhat[c.fact.key]
            ss += (z - c.observation) ** 2
        if config.use_ci_estimator:
            tau2 = ss / chi2_ppf(config.alpha / 2.0, n)
        else:
            tau2 = ss / n
        stats[s] = SourceStats(s, float(n), max(tau2, config.tau2_floor),
                               [c.fact.key for c in cs], [c.observation for c in cs])
    return stats


def _key(f) -> FactKey:
    return f.key if isinstance(f, Fact) else tuple(f)


class _Problem:
    """Claims and hyperparameters packed into arrays for the objective."""

    def __init__(self, claims: Sequence[Claim], source_stats: Mapping[str, SourceStats],
                 beta: Sequence[float], facts: Iterable[FactKey] = ()):
        keys = set(facts)
        keys.update(c.fact.key for c in claims)
        self.facts = sorted(keys)
        index = {f: i for i, f in enumerate(self.facts)}
        self.sources = sorted(source_stats)
        sidx = {s: i for i, s in enumerate(self.sources)}
        fi, si, obs = [], [], []
        for c in sorted(claims, key=lambda c: (c.source, c.fact.key)):
            if c.source not in sidx:
                raise KeyError(f"no hyperparameters for source {c.source!r}")
            fi.append(index[c.fact.key])
            si.append(sidx[c.source])
            obs.append(c.observation)
        self.fi = np.asarray(fi, dtype=np.int64)
        self.si = np.asarray(si, dtype=np.int64)
        self.obs = np.asarray(obs, dtype=np.float64)
        S = len(self.sources)
        self.nu = np.array([source_stats[s].nu for s in self.sources], dtype=np.float64)
        self.tau2 = np.array([source_stats[s].tau2 for s in self.sources], dtype=np.float64)
        self.n_s = np.bincount(self.si, minlength=S).astype(np.float64)
        self.b1, self.b0 = float(beta[0]), float(beta[1])

    def vector(self, z: Mapping[FactKey, float], default: float | None = None) -> np.ndarray:
        if default is None:
            return np.array([z[f] for f in self.facts], dtype=np.float64)
        return np.array([z.get(f, default) for f in self.facts], dtype=np.float64)

    def _denominator(self, z: np.ndarray) -> np.ndarray:
        sq = np.bincount(self.si, weights=(z[self.fi] - self.obs) ** 2, minlength=len(self.sources))
        return self.nu * self.tau2 + sq

    def value(self, z: np.ndarray) -> float:
        prior = np.sum((1.0 - self.b1) * np.log(z) + (1.0 - self.b0) * np.log1p(-z))
        if not self.sources:
            return float(prior)
        D = self._denominator(z)
        return float(prior + np.sum((self.nu + self.n_s) / 2.0 * np.log(D / 2.0)))

    def gradient(self, z: np.ndarray) -> np.ndarray:
        g = (1.0 - self.b1) / z - (1.0 - self.b0) / (1.0 - z)
        if self.sources:
            D = self._denominator(z)
            coef = ((self.nu + self.n_s) / D)[self.si]
            g = g + np.bincount(self.fi, weights=coef * (z[self.fi] - self.obs),
                                minlength=len(self.facts))
        return g


def negative_log_likelihood(z: Mapping[FactKey, float], claims: Sequence[Claim],
                            source_stats: Mapping[str, SourceStats],
                            beta: Sequence[float]) -> float:
    """The objective, up to its additive constant, at truths ``z``."""
    prob = _Problem(claims, source_stats, beta, z.keys())
    zv = prob.vector(z)
    if np.any((zv <= 0.0) | (zv >= 1.0)):
        raise ValueError("latent truths must lie strictly inside (0, 1)")
    return prob.value(zv)


def nll_gradient(z: Mapping[FactKey, float], claims: Sequence[Claim],
                 source_stats: Mapping[str, SourceStats],
                 beta: Sequence[float]) -> dict[FactKey, float]:
    prob = _Problem(claims, source_stats, beta, z.keys())
    g = prob.gradient(prob.vector(z))
    return dict(zip(prob.facts, g.tolist()))


def infer_truths(claims: Sequence[Claim], source_stats: Mapping[str, SourceStats],
                 config: TruthConfig | None = None,
                 facts: Iterable[FactKey] = (), init: Mapping[FactKey, float] | None = None
                 ) -> TruthAssignment:
    """MAP latent truths by gradient descent on u = logit-space coordinates.

    z = delta + (1 - 2 delta) sigmoid(u) keeps every truth in (delta, 1 - delta).
    Steps start from a Barzilai-Borwein guess and are halved until the Armijo
    condition holds, so the objective never increases. Stops when the gradient
    norm drops below ``tol`` or a step's relative decrease drops below ``ftol``
    (large objectives stall at rounding level first). Starts from the
    per-fact mean observation (``init`` overrides); unclaimed facts start at 0.5.
    """
    config = config or TruthConfig()
    prob = _Problem(claims, source_stats, config.beta, facts)
    d = config.delta
    if init is None:
        sums = np.bincount(prob.fi, weights=prob.obs, minlength=len(prob.facts))
        cnt = np.bincount(prob.fi, minlength=len(prob.facts))
        z0 = np.where(cnt > 0, sums / np.maximum(cnt, 1), 0.5)
    else:
        z0 = prob.vector(init, default=0.5)
    z0 = np.clip(z0, 2 * d, 1 - 2 * d)
    s0 = (z0 - d) / (1 - 2 * d)
    u = np.log(s0) - np.log1p(-s0)

    def to_z(u):
        return d + (1 - 2 * d) * expit(u)

    def grad_u(u, z):
        s = (z - d) / (1 - 2 * d)
        return prob.gradient(z) * (1 - 2 * d) * s * (1 - s)

    z = to_z(u)
    f = prob.value(z)
    g = grad_u(u, z)
    t = config.step_size
    history = [f]
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        gn2 = float(g @ g)
        if math.sqrt(gn2) < config.tol:
            converged = True
            it -= 1
            break
        while True:
            u_new = u - t * g
            z_new = to_z(u_new)
            f_new = prob.value(z_new)
            if f_new <= f - config.armijo * t * gn2:
                break
            t *= 0.5
            if t < 1e-30:
                break
        if t < 1e-30:
            log.warning("line search stalled at iteration %d", it)
            break
        g_new = grad_u(u_new, z_new)
        stalled = f - f_new <= config.ftol * max(abs(f), abs(f_new), 1.0)
        step, dg = u_new - u, g_new - g
        curv = float(step @ dg)
        t = float(step @ step) / curv if curv > 0 else 2.0 * t
        u, z, f, g = u_new, z_new, f_new, g_new
        history.append(f)
        if stalled:
            converged = True
            break
    else:
        converged = math.sqrt(float(g @ g)) < config.tol
    if not converged:
        log.warning("truth inference did not converge after %d iterations", it)
    zmap = dict(zip(prob.facts, z.tolist()))
    return TruthAssignment(zmap, {}, _sources_of(claims), f, converged, it, history)


def conjugacy_check(z: Mapping[FactKey, float], claims: Sequence[Claim],
                    source_stats: Mapping[str, SourceStats],
                    beta: Sequence[float] = (5.0, 5.0)) -> float:
    """Largest relative gap between the closed-form source marginal and quadrature.

    For each source with claims, integrates prod_f N(o_fs | z_f, w) times the
    Scale-inv-chi2(w | nu, tau2) density over w numerically and compares it
    with the conjugate closed form. The beta factor is common to both sides.
    """
    from scipy import integrate

    by_source: dict[str, list[Claim]] = defaultdict(list)
    for c in claims:
        by_source[c.source].append(c)
    worst = 0.0
    for s in sorted(source_stats):
        cs = by_source.get(s, [])
        n = len(cs)
        if n == 0:
            continue
        nu, tau2 = source_stats[s].nu, source_stats[s].tau2
        S = sum((z[c.fact.key] - c.observation) ** 2 for c in cs)
        A = (nu * tau2 + S) / 2.0
        log_const = (-n / 2.0 * math.log(2 * math.pi) + nu / 2.0 * math.log(nu * tau2 / 2.0)
                     - math.lgamma(nu / 2.0))
        log_closed = log_const + math.lgamma((nu + n) / 2.0) - (nu + n) / 2.0 * math.log(A)

        def log_integrand(t):
            # w = exp(t); includes the dw = w dt Jacobian
            w = math.exp(t)
            return (-n / 2.0 * math.log(2 * math.pi * w) - S / (2 * w)
                    + nu / 2.0 * math.log(nu * tau2 / 2.0) - math.lgamma(nu / 2.0)
                    - (nu / 2.0 + 1.0) * math.log(w) - nu * tau2 / (2 * w) + t)

        t_mode = math.log(2.0 * A / (nu + n))
        peak = log_integrand(t_mode)
        val, _ = integrate.quad(lambda t: math.exp(log_integrand(t) - peak),
                                t_mode - 60.0, t_mode + 60.0, points=[t_mode],
                                epsabs=0.0, epsrel=1e-12, limit=500)
        if not val > 0 or not math.isfinite(val):
            raise ArithmeticError(f"quadrature failed for source {s}")
        rel = abs(math.exp(math.log(val) + peak - log_closed) - 1.0)
        worst = max(worst, rel)
    return worst


# --- cardinality and labeling -----------------------------------------------

def predict_cardinality(kb: KnowledgeBase, prop: str, popular_entities: Iterable[str],
                        threshold: float = 0.1) -> str:
    """'multi' iff at least ``threshold`` of popular users of ``prop`` hold 2+ values."""
    users = multi = 0
    for e in popular_entities:
        k = len(kb.values_of(e, prop))
        if k:
            users += 1
            multi += k >= 2
    if users == 0:
        return "multi"
    return "multi" if multi / users >= threshold else "single"


def label_facts(assignment: TruthAssignment, cardinality: Mapping[tuple[str, str], str],
                epsilon: float = 0.5) -> dict[FactKey, bool]:
    """Threshold multi-valued groups; keep only a plausible argmax in single-valued ones."""
    groups: dict[tuple[str, str], list[FactKey]] = defaultdict(list)
    for f in assignment.z:
        groups[(f[0], f[1])].append(f)
    labels = {}
    for g, fs in groups.items():
        if cardinality.get(g, "multi") == "single":
            best = min(fs, key=lambda f: (-assignment.z[f], f[2]))
            for f in fs:
                labels[f] = f == best and assignment.z[f] >= epsilon
        else:
            for f in fs:
                labels[f] = assignment.z[f] >= epsilon
    return labels


def source_reliability(source_stats: Mapping[str, SourceStats],
                       assignment: TruthAssignment) -> dict[str, float]:
    """(nu_s + |F_s|) / (nu_s tau2_s + sum (z_f - o_fs)^2), the inverse posterior mean variance."""
    out = {}
    for s, st in source_stats.items():
        sq = sum((assignment.z[f] - o) ** 2 for f, o in zip(st.facts, st.observations))
        out[s] = (st.nu + st.n_claims) / (st.nu * st.tau2 + sq)
    return out


# --- end to end ---------------------------------------------------------------

def verify(claims: Sequence[Claim], prior_truths: Iterable = (), config: TruthConfig | None = None,
           cardinality: Mapping[tuple[str, str], str] | None = None,
           facts: Iterable[FactKey] = ()) -> tuple[TruthAssignment, dict[str, SourceStats]]:
    """Hyperparameters from majority voting, MAP inference, optional refinement, labels."""
    config = config or TruthConfig()
    priors = [_key(f) for f in prior_truths]
    zhat = majority_init(claims, delta=config.delta).z
    stats = set_hyperparameters(claims, zhat, priors, config)
    result = infer_truths(claims, stats, config, facts)
    for _ in range(config.refine_rounds):
        stats = set_hyperparameters(claims, result.z, priors, config)
        result = infer_truths(claims, stats, config, facts, init=result.z)
    result.labels = label_facts(result, cardinality or {}, config.epsilon)
    for s, r in source_reliability(stats, result).items():
        stats[s].reliability = r
    return result, stats
