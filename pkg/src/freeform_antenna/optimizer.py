"""Trust-region optimization on linearized response features.

All trust-region geometry lives in bounds-normalized coordinates: each
parameter is mapped affinely so that ``[lower_d, upper_d] -> [0, 1]`` and
the region is the infinity-norm box ``|z - z_i| <= delta``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from .errors import (
    InconsistentGeometry,
    InvalidFeatures,
    InvalidInitialFeatures,
    JacobianDegenerate,
)
from .evaluators import FrequencySweep
from .features import FeatureSet, FeatureSpec, extract_features
from .geometry import DesignVector
from .screening import band_indices, score_minmax

log = logging.getLogger(__name__)

DEGENERATE_PREDICTION = 1e-12


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str = "feature"
    targets: tuple = (6.2, 6.8)
    threshold: float = -10.2
    beta: float = 100.0
    band: tuple = (6.2, 6.8)

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(float(t) for t in self.targets))
        object.__setattr__(self, "band", tuple(float(b) for b in self.band))
        if self.kind not in ("feature", "minmax"):
            raise ValueError(f"objective kind must be 'feature' or 'minmax', got {self.kind!r}")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.targets[0] < self.targets[1]:
            raise ValueError("targets must be increasing")
        if not self.band[0] < self.band[1]:
            raise ValueError("band requires f_l < f_h")

    @property
    def feature_spec(self):
        return FeatureSpec(self.targets, self.band)


@dataclass(frozen=True)
class TrustRegionConfig:
    delta0: float = 1.0
    shrink: float = 1.0 / 3.0
    grow: float = 2.0
    rho_low: float = 0.25
    rho_high: float = 0.75
    epsilon: float = 1e-3
    fd_fraction: float = 0.02
    max_iterations: int = 100
    subproblem_iters: int = 2000
    subproblem_method: str = "conic"

    def __post_init__(self):
        if not 0 < self.rho_low < self.rho_high < 1:
            raise ValueError("need 0 < rho_low < rho_high < 1")
        if not 0 < self.shrink < 1 < self.grow:
            raise ValueError("need 0 < shrink < 1 < grow")
        if not self.epsilon > 0 or not self.delta0 > 0 or not self.fd_fraction > 0:
            raise ValueError("epsilon, delta0 and fd_fraction must be positive")
        if self.max_iterations < 1 or self.subproblem_iters < 1:
            raise ValueError("iteration budgets must be positive")
        if self.subproblem_method not in ("conic", "subgradient"):
            raise ValueError("subproblem_method must be 'conic' or 'subgradient'")


# ---------------------------------------------------------------- objectives

def feature_objective_value(S12, w34, spec):
    hinge = np.maximum(np.asarray(S12, dtype=float) - spec.threshold, 0.0)
    miss = np.asarray(w34, dtype=float) - np.asarray(spec.targets)
    return float(np.sum(hinge ** 2) + spec.beta * math.hypot(*miss))


def objective_feature(F, spec):
    """Squared level violations of the two in-band maxima plus weighted dip misplacement."""
    if not F.valid:
        raise InvalidFeatures("feature extraction failed; objective undefined")
    return feature_objective_value(F.S[:2], F.omega[2:], spec)


def objective_minmax(r, spec):
    return score_minmax(r, spec.targets)


# ------------------------------------------------------------ linear models

@dataclass(frozen=True, eq=False)
class LinearFeatureModel:
    center: np.ndarray  # physical design at the expansion point
    z_center: np.ndarray
    omega0: np.ndarray
    S0: np.ndarray
    J_omega: np.ndarray  # Q x D, per normalized unit
    J_S: np.ndarray

    def predict_z(self, z):
        dz = np.asarray(z, dtype=float) - self.z_center
        return self.omega0 + self.J_omega @ dz, self.S0 + self.J_S @ dz

    def objective(self, z, spec):
        w, s = self.predict_z(z)
        return feature_objective_value(s[:2], w[2:], spec)


@dataclass(frozen=True, eq=False)
class LinearResponseModel:
    center: np.ndarray
    z_center: np.ndarray
    R0: np.ndarray  # in-band sampled levels at the center
    J_R: np.ndarray  # n_band x D

    def objective(self, z, spec=None):
        dz = np.asarray(z, dtype=float) - self.z_center
        return float(np.max(self.R0 + self.J_R @ dz))


def fd_steps(x, bounds, fraction):
    """Forward-difference steps proportional to the design, floored at 1% of the range."""
    v = np.asarray(x, dtype=float)
    return fraction * np.maximum(np.abs(v), 0.01 * bounds.span)


def _fd_columns(evaluator, x, steps, bounds, sweep, measure, base, workers=1):
    """One-sided FD columns of ``measure(response)`` per normalized unit.

    A column whose forward point leaves the bounds, fails geometry checks, or
    yields ``measure(...) is None`` is retried with the step flipped.
    Returns ``(J, evaluations)``.
    """
    x = np.asarray(x, dtype=float)
    D = x.size

    def attempt(d, p):
        xp = x.copy()
        xp[d] += p
        if not (bounds.lower[d] <= xp[d] <= bounds.upper[d]):
            return None, 0
        try:
            r = evaluator(DesignVector(xp), sweep, tag="jacobian")
        except InconsistentGeometry:
            return None, 0
        return measure(r), 1

    def column(d):
        p = float(steps[d])
        m, used = attempt(d, p)
        if m is None:
            p = -p
            m, more = attempt(d, p)
            used += more
        if m is None:
            return d, None, used
        return d, (np.asarray(m) - base) / (p / bounds.span[d]), used

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cols = list(pool.map(column, range(D)))
    else:
        cols = [column(d) for d in range(D)]
    failed = [d for d, c, _ in cols if c is None]
    if failed:
        raise JacobianDegenerate(failed)
    J = np.column_stack([c for _, c, _ in cols])
    return J, sum(u for _, _, u in cols)


def fd_jacobians(evaluator, x_i, steps, spec, sweep, bounds, base_features=None, workers=1, counts=None):
    """Linear feature model at ``x_i`` from one-sided finite differences.

    Features at the perturbed designs are matched by role label, never by
    nearest frequency, so a dip that changes label shows up in the column.
    """
    x_i = x_i if isinstance(x_i, DesignVector) else DesignVector(x_i)
    fspec = spec.feature_spec
    if base_features is None:
        base_features = extract_features(evaluator(x_i, sweep, tag="initial"), fspec)
    if not base_features.valid:
        raise InvalidFeatures("features at the expansion point are invalid")
    base = np.concatenate([base_features.omega, base_features.S])
    Q = base_features.omega.size

    def measure(r):
        F = extract_features(r, fspec)
        return np.concatenate([F.omega, F.S]) if F.valid else None

    J, used = _fd_columns(evaluator, x_i.values, steps, bounds, sweep, measure, base, workers)
    if counts is not None:
        counts["jacobian"] += used
    return LinearFeatureModel(x_i.values.copy(), bounds.normalize(x_i.values), base_features.omega.copy(),
                              base_features.S.copy(), J[:Q], J[Q:])


def fd_response_jacobian(evaluator, x_i, steps, spec, sweep, bounds, base_response, workers=1, counts=None):
    """Per-frequency linear model of the in-band response samples."""
    x_i = x_i if isinstance(x_i, DesignVector) else DesignVector(x_i)
    i_lo, i_hi = band_indices(sweep, spec.targets)
    base = base_response.levels_db[i_lo:i_hi + 1].copy()

    def measure(r):
        return r.levels_db[i_lo:i_hi + 1]

    J, used = _fd_columns(evaluator, x_i.values, steps, bounds, sweep, measure, base, workers)
    if counts is not None:
        counts["jacobian"] += used
    return LinearResponseModel(x_i.values.copy(), bounds.normalize(x_i.values), base, J)


# --------------------------------------------------------------- subproblem

def _box(z_center, delta):
    return np.maximum(0.0, z_center - delta), np.minimum(1.0, z_center + delta)


def _conic_solve(model, lo, hi, spec):
    D = model.z_center.size
    z = cp.Variable(D)
    dz = z - model.z_center
    if isinstance(model, LinearFeatureModel):
        s12 = model.S0[:2] + model.J_S[:2] @ dz
        w34 = model.omega0[2:] + model.J_omega[2:] @ dz
        expr = cp.sum_squares(cp.pos(s12 - spec.threshold)) + spec.beta * cp.norm(w34 - np.asarray(spec.targets), 2)
    else:
        expr = cp.max(model.R0 + model.J_R @ dz)
    prob = cp.Problem(cp.Minimize(expr), [z >= lo, z <= hi])
    prob.solve(solver=cp.CLARABEL)
    if z.value is None or prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise RuntimeError(f"conic subproblem solve ended with status {prob.status}")
    return np.clip(np.asarray(z.value, dtype=float), lo, hi)


def _subgradient(model, z, spec):
    dz = z - model.z_center
    if isinstance(model, LinearFeatureModel):
        s12 = model.S0[:2] + model.J_S[:2] @ dz
        w34 = model.omega0[2:] + model.J_omega[2:] @ dz
        hinge = np.maximum(s12 - spec.threshold, 0.0)
        g = 2.0 * hinge @ model.J_S[:2]
        miss = w34 - np.asarray(spec.targets)
        nrm = math.hypot(*miss)
        if nrm > 0:
            g = g + spec.beta * (miss / nrm) @ model.J_omega[2:]
        return g
    vals = model.R0 + model.J_R @ dz
    return model.J_R[int(np.argmax(vals))]


def projected_subgradient(model, lo, hi, spec, iters, step_scale):
    """Normalized subgradient steps ``step_scale / sqrt(k)``; returns the best visited point."""
    z = model.z_center.copy()
    best_z, best_u = z.copy(), model.objective(z, spec)
    for k in range(1, iters + 1):
        g = _subgradient(model, z, spec)
        gn = float(np.linalg.norm(g))
        if gn == 0.0:
            break
        z = np.clip(z - (step_scale / math.sqrt(k)) * g / gn, lo, hi)
        u = model.objective(z, spec)
        if u < best_u:
            best_z, best_u = z.copy(), u
    return best_z


def solve_subproblem_z(model, z_c, delta, spec, cfg=None):
    """Array-level solve in normalized coordinates; returns ``z_c`` on no predicted gain."""
    cfg = cfg or TrustRegionConfig()
    z_c = np.asarray(z_c, dtype=float)
    lo, hi = _box(z_c, delta)
    z_best = None
    if cfg.subproblem_method == "conic":
        try:
            z_best = _conic_solve(model, lo, hi, spec)
        except (RuntimeError, cp.error.SolverError) as exc:
            log.warning("conic subproblem failed (%s); using projected subgradient", exc)
    if z_best is None:
        z_best = projected_subgradient(model, lo, hi, spec, cfg.subproblem_iters, delta / 10.0)
    if not model.objective(z_best, spec) < model.objective(z_c, spec) - DEGENERATE_PREDICTION:
        return z_c.copy()
    return z_best


def solve_subproblem(model, x_i, delta, bounds, spec, cfg=None):
    """Minimize the linearized objective over the TR box intersected with the bounds.

    Returns ``x_i`` itself unless the model predicts a decrease of more than
    ``1e-12``.  The result has the type of ``x_i`` (design or plain array).
    """
    x_arr = np.asarray(x_i, dtype=float)
    z = solve_subproblem_z(model, bounds.normalize(x_arr), delta, spec, cfg)
    x_new = x_arr.copy() if np.array_equal(z, bounds.normalize(x_arr)) else \
        np.clip(bounds.denormalize(z), bounds.lower, bounds.upper)
    return DesignVector(x_new) if isinstance(x_i, DesignVector) else x_new


# ------------------------------------------------------------ the TR loop

def update_radius(delta, rho, cfg):
    if rho < cfg.rho_low:
        return delta * cfg.shrink
    if rho > cfg.rho_high:
        return delta * cfg.grow
    return delta


@dataclass
class IterationRecord:
    iteration: int
    delta: float  # radius used to produce the candidate
    rho: float
    accepted: bool
    objective: float  # objective at the accepted iterate after this iteration
    candidate_objective: float
    step_norm: float
    candidate: DesignVector
    features: FeatureSet | None = None


@dataclass
class OptimizationResult:
    x_star: DesignVector
    history: list
    ledger_counts: dict
    termination_reason: str
    kind: str = "feature"
    initial_objective: float = float("nan")
    final_objective: float = float("nan")
    jacobian_builds: int = 0
    final_response: object = None
    final_features: FeatureSet | None = None

    @property
    def total_evaluations(self):
        return sum(self.ledger_counts.values())

    def accepted_objectives(self):
        return [self.initial_objective] + [h.objective for h in self.history if h.accepted]

    def history_csv(self):
        rows = ["iter,accepted,delta,rho,objective,step_norm"]
        for h in self.history:
            rows.append(f"{h.iteration},{int(h.accepted)},{h.delta!r},{h.rho!r},{h.objective!r},{h.step_norm!r}")
        return "\n".join(rows) + "\n"

    def features_csv(self):
        rows = ["iter,role,freq_ghz,level_db,valid"]
        for h in self.history:
            if h.features is not None:
                rows += [f"{h.iteration},{row}" for row in h.features.to_csv_rows()]
        return "\n".join(rows) + "\n"


class TrustRegionProblem:
    """Callbacks that specialize :func:`run_trust_region`.

    ``evaluate`` returns ``(objective, info)`` or ``None`` for an unusable
    design; ``build_model`` returns a model exposing ``objective(z, spec)``.
    """

    spec = None

    def evaluate(self, x, tag):
        raise NotImplementedError

    def build_model(self, x, info):
        raise NotImplementedError

    def solve(self, model, x, delta):
        raise NotImplementedError

    def features_of(self, info):
        return None


def run_trust_region(problem, x0, bounds, cfg, counts):
    x = x0 if isinstance(x0, DesignVector) else DesignVector(x0)
    first = problem.evaluate(x, "initial")
    if first is None:
        raise InvalidInitialFeatures("the initial design has no usable response features")
    u_cur, info = first
    u0 = u_cur
    delta = cfg.delta0
    history = []
    builds = 0
    try:
        model = problem.build_model(x, info)
        builds += 1
    except JacobianDegenerate as exc:
        log.warning("initial Jacobian degenerate: %s", exc)
        return x, u0, u0, info, history, "jacobian_degenerate", builds
    reason = "max_iterations"
    for it in range(1, cfg.max_iterations + 1):
        z_i = bounds.normalize(x.values)
        cand = problem.solve(model, x, delta)
        z_c = bounds.normalize(cand.values)
        step = float(np.max(np.abs(z_c - z_i)))
        predicted = model.objective(z_c, problem.spec) - model.objective(z_i, problem.spec)
        u_cand = float("nan")
        cand_info = None
        if predicted > -DEGENERATE_PREDICTION:
            rho = -math.inf
        else:
            res = problem.evaluate(cand, "candidate")
            if res is None:
                rho = -math.inf
            else:
                u_cand, cand_info = res
                rho = (u_cand - u_cur) / predicted
        accepted = rho > 0
        used = delta
        delta = update_radius(delta, rho, cfg)
        if accepted:
            x, u_cur, info = cand, u_cand, cand_info
        history.append(IterationRecord(it, used, rho, accepted, u_cur, u_cand, step, cand,
                                       problem.features_of(cand_info)))
        log.info("iter %d: delta=%.4g rho=%.4g accepted=%s U=%.6g", it, used, rho, accepted, u_cur)
        if accepted and step < cfg.epsilon:
            reason = "step_small"
            break
        if delta < cfg.epsilon:
            reason = "radius_small"
            break
        if accepted:
            try:
                model = problem.build_model(x, info)
                builds += 1
            except JacobianDegenerate as exc:
                log.warning("Jacobian degenerate at iteration %d: %s", it, exc)
                reason = "jacobian_degenerate"
                break
    return x, u0, u_cur, info, history, reason, builds


class _FeatureProblem(TrustRegionProblem):
    def __init__(self, evaluator, spec, sweep, bounds, cfg, counts, workers):
        self.evaluator, self.spec, self.sweep, self.bounds = evaluator, spec, sweep, bounds
        self.cfg, self.counts, self.workers = cfg, counts, workers

    def evaluate(self, x, tag):
        try:
            r = self.evaluator(x, self.sweep, tag=tag)
        except InconsistentGeometry:
            return None
        self.counts[tag] += 1
        F = extract_features(r, self.spec.feature_spec)
        if not F.valid:
            return None
        return objective_feature(F, self.spec), (r, F)

    def build_model(self, x, info):
        steps = fd_steps(x.values, self.bounds, self.cfg.fd_fraction)
        return fd_jacobians(self.evaluator, x, steps, self.spec, self.sweep, self.bounds,
                            base_features=info[1], workers=self.workers, counts=self.counts)

    def solve(self, model, x, delta):
        return solve_subproblem(model, x, delta, self.bounds, self.spec, self.cfg)

    def features_of(self, info):
        return None if info is None else info[1]


class _MinmaxProblem(_FeatureProblem):
    def evaluate(self, x, tag):
        try:
            r = self.evaluator(x, self.sweep, tag=tag)
        except InconsistentGeometry:
            return None
        self.counts[tag] += 1
        return objective_minmax(r, self.spec), (r, None)

    def build_model(self, x, info):
        steps = fd_steps(x.values, self.bounds, self.cfg.fd_fraction)
        return fd_response_jacobian(self.evaluator, x, steps, self.spec, self.sweep, self.bounds,
                                    info[0], workers=self.workers, counts=self.counts)


def _run(problem_cls, evaluator, x0, bounds, spec, cfg, sweep, workers, kind):
    cfg = cfg or TrustRegionConfig()
    sweep = sweep or FrequencySweep()
    x0 = x0 if isinstance(x0, DesignVector) else DesignVector(x0)
    if not bounds.contains(x0.values):
        raise ValueError("initial design lies outside the optimization bounds")
    counts = {"initial": 0, "jacobian": 0, "candidate": 0}
    problem = problem_cls(evaluator, spec, sweep, bounds, cfg, counts, workers)
    x, u0, u, info, history, reason, builds = run_trust_region(problem, x0, bounds, cfg, counts)
    return OptimizationResult(x, history, counts, reason, kind, u0, u, builds, info[0], problem.features_of(info))


def optimize(evaluator, x0, bounds, spec=None, cfg=None, sweep=None, workers=1):
    """Feature-based trust-region optimization from ``x0``."""
    spec = spec or ObjectiveSpec()
    return _run(_FeatureProblem, evaluator, x0, bounds, spec, cfg, sweep, workers, "feature")


def optimize_minmax_benchmark(evaluator, x0, bounds, spec=None, cfg=None, sweep=None, workers=1):
    """Same trust-region machinery on the raw in-band min-max objective."""
    spec = spec or ObjectiveSpec(kind="minmax")
    return _run(_MinmaxProblem, evaluator, x0, bounds, spec, cfg, sweep, workers, "minmax")
