"""Poisson mixture over nightly bedtime-count vectors, fitted by EM.

Rates carry a Gamma prior (shape alpha > 1, rate beta) so no component can
collapse onto a zero rate; the fit maximizes the joint of data likelihood
and prior. Two E-step and two M-step variants are provided:

* estep "standard" leaves the rate prior out of the responsibilities, which
  together with mstep "exact_map" gives monotone ascent of the log joint.
* estep "paper_literal" multiplies the prior density of each component's
  rates into the responsibilities; mstep "paper_literal" divides by
  (beta + 1) * sum(weights) instead of (sum(weights) + beta). The literal
  pair reproduces fits computed with those alternative update rules.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import gammaln, logsumexp

from ._kernels import poisson_scores

ESTEP_VARIANTS = ("standard", "paper_literal")
MSTEP_VARIANTS = ("exact_map", "paper_literal")

RATE_FLOOR = 1e-12
MASS_FLOOR = 1e-12

STAY_UP = "stay_up"
NON_STAY_UP = "non_stay_up"


class MixtureError(RuntimeError):
    pass


@dataclass(frozen=True)
class MixtureConfig:
    components: int = 2
    alpha: float = 1.1
    beta: float = 0.1
    max_iterations: int = 500
    tolerance: float = 1e-8
    restarts: int = 10
    estep_variant: str = "standard"
    mstep_variant: str = "exact_map"
    seed: int = 0

    def __post_init__(self):
        if self.components < 1:
            raise ValueError("components must be >= 1")
        if not self.alpha > 1:
            raise ValueError("alpha must be > 1 so the prior vanishes at rate 0")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.estep_variant not in ESTEP_VARIANTS:
            raise ValueError(f"estep_variant must be one of {ESTEP_VARIANTS}")
        if self.mstep_variant not in MSTEP_VARIANTS:
            raise ValueError(f"mstep_variant must be one of {MSTEP_VARIANTS}")
        if self.restarts < 1 or self.max_iterations < 1:
            raise ValueError("restarts and max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass
class PoissonMixtureModel:
    """Per-component rate vectors plus mixing weights."""

    rates: np.ndarray   # (M, D), all entries > 0
    mixing: np.ndarray  # (M,), sums to 1

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=np.float64)
        self.mixing = np.asarray(self.mixing, dtype=np.float64)

    def validate(self):
        if self.rates.ndim != 2:
            raise ValueError("rates must be (M, D)")
        if np.any(self.rates <= 0):
            raise ValueError("all rates must be positive")
        if self.mixing.shape != (self.rates.shape[0],):
            raise ValueError("mixing length must match component count")
        if np.any(self.mixing < 0) or np.any(self.mixing > 1):
            raise ValueError("mixing weights must lie in [0, 1]")
        if abs(self.mixing.sum() - 1.0) > 1e-12:
            raise ValueError("mixing weights must sum to 1")


@dataclass
class Responsibilities:
    """Row-normalized membership weights, optionally tagged with student ids."""

    weights: np.ndarray  # (N, M)
    student_ids: tuple[str, ...] | None = None


@dataclass
class FitDiagnostics:
    objective_trace: list[float]
    iterations_used: int
    converged: bool
    best_restart_index: int


def count_matrix(data) -> tuple[np.ndarray, tuple[str, ...] | None]:
    """Normalize fit input to a float (N, D) matrix plus optional ids.

    Accepts an array, a mapping student_id -> SleepCountVector (or raw
    counts), or a sequence of SleepCountVector.
    """
    if isinstance(data, np.ndarray):
        return np.asarray(data, dtype=np.float64), None
    if isinstance(data, Mapping):
        ids = tuple(data.keys())
        rows = [np.asarray(getattr(v, "counts", v), dtype=np.float64) for v in data.values()]
        return np.stack(rows), ids
    rows, ids = [], []
    for item in data:
        rows.append(np.asarray(getattr(item, "counts", item), dtype=np.float64))
        ids.append(getattr(item, "student_id", None))
    id_tuple = tuple(ids) if all(i is not None for i in ids) else None
    return np.stack(rows), id_tuple


def component_log_likelihood(counts, rates) -> float:
    """Log Poisson likelihood of one count vector under one component's rates."""
    s = np.asarray(counts, dtype=np.float64)
    lam = np.asarray(rates, dtype=np.float64)
    if np.any(lam <= 0):
        raise ValueError("rates must be positive")
    return float(np.sum(s * np.log(lam) - lam - gammaln(s + 1)))


def _log_prior_per_component(model: PoissonMixtureModel, cfg: MixtureConfig) -> np.ndarray:
    a, b = cfg.alpha, cfg.beta
    lam = model.rates
    per_rate = a * np.log(b) - gammaln(a) + (a - 1) * np.log(lam) - b * lam
    return per_rate.sum(axis=1)


def _log_weights(counts: np.ndarray, model: PoissonMixtureModel, cfg: MixtureConfig,
                 row_lgamma: np.ndarray | None = None) -> np.ndarray:
    """Unnormalized log membership scores, one row per student."""
    if row_lgamma is None:
        row_lgamma = gammaln(counts + 1).sum(axis=1)
    log_rates = np.log(model.rates)
    with np.errstate(over="ignore"):  # -inf scores become the underflow error
        scores = poisson_scores(counts, log_rates, model.rates.sum(axis=1))
    scores = scores - row_lgamma[:, None]
    with np.errstate(divide="ignore"):
        scores = scores + np.log(model.mixing)[None, :]
    if cfg.estep_variant == "paper_literal":
        scores = scores + _log_prior_per_component(model, cfg)[None, :]
    return scores


def e_step(data, model: PoissonMixtureModel, cfg: MixtureConfig) -> Responsibilities:
    """Posterior membership weights, normalized per student with log-sum-exp."""
    counts, ids = count_matrix(data)
    model.validate()
    scores = _log_weights(counts, model, cfg)
    norm = logsumexp(scores, axis=1)
    bad = ~np.isfinite(norm)
    if np.any(bad):
        i = int(np.nonzero(bad)[0][0])
        who = ids[i] if ids is not None else f"row {i}"
        raise MixtureError(f"all component scores underflowed for student {who}")
    return Responsibilities(np.exp(scores - norm[:, None]), ids)


def m_step(data, resp: Responsibilities, cfg: MixtureConfig) -> PoissonMixtureModel:
    """MAP rate update plus mixing-weight update from the membership weights."""
    counts, _ = count_matrix(data)
    w = np.asarray(resp.weights, dtype=np.float64)
    n = counts.shape[0]
    mass = np.maximum(w.sum(axis=0), MASS_FLOOR)
    if cfg.mstep_variant == "paper_literal":
        rates = (w.T @ counts + (cfg.alpha - 1) * mass[:, None]) / ((cfg.beta + 1) * mass[:, None])
    else:
        rates = (w.T @ counts + (cfg.alpha - 1)) / (mass[:, None] + cfg.beta)
    rates = np.maximum(rates, RATE_FLOOR)
    mixing = w.sum(axis=0) / n
    return PoissonMixtureModel(rates, mixing)


def log_joint(data, model: PoissonMixtureModel, cfg: MixtureConfig) -> float:
    """Log of data likelihood times the Gamma prior over all rates."""
    counts, _ = count_matrix(data)
    row_lgamma = gammaln(counts + 1).sum(axis=1)
    log_rates = np.log(model.rates)
    scores = poisson_scores(counts, log_rates, model.rates.sum(axis=1)) - row_lgamma[:, None]
    with np.errstate(divide="ignore"):
        scores = scores + np.log(model.mixing)[None, :]
    return float(logsumexp(scores, axis=1).sum() + _log_prior_per_component(model, cfg).sum())


def _row_entropy_seeds(counts: np.ndarray) -> list[int]:
    """Stable per-row entropy derived from row content.

    Keying the initial draw on the counts themselves (not the row position)
    makes initialization invariant under row permutation and duplication.
    """
    out = []
    for row in counts:
        digest = hashlib.sha256(row.tobytes()).digest()
        out.append(int.from_bytes(digest[:8], "little"))
    return out


def initial_responsibilities(counts: np.ndarray, cfg: MixtureConfig, restart: int) -> np.ndarray:
    """Symmetric random simplex draw per student for one restart."""
    m = cfg.components
    row_seeds = _row_entropy_seeds(counts)
    weights = np.empty((counts.shape[0], m))
    ones = np.ones(m)
    for i, h in enumerate(row_seeds):
        rng = np.random.default_rng([cfg.seed, restart, h])
        weights[i] = rng.dirichlet(ones)
    return weights


def _em_run(counts: np.ndarray, init: np.ndarray, cfg: MixtureConfig,
            ids: tuple[str, ...] | None):
    row_lgamma = gammaln(counts + 1).sum(axis=1)
    resp = Responsibilities(init, ids)
    model = m_step(counts, resp, cfg)
    trace = [log_joint(counts, model, cfg)]
    converged = False
    for it in range(1, cfg.max_iterations + 1):
        scores = _log_weights(counts, model, cfg, row_lgamma)
        norm = logsumexp(scores, axis=1)
        bad = ~np.isfinite(norm)
        if np.any(bad):
            i = int(np.nonzero(bad)[0][0])
            who = ids[i] if ids is not None else f"row {i}"
            raise MixtureError(f"all component scores underflowed for student {who}")
        resp = Responsibilities(np.exp(scores - norm[:, None]), ids)
        model = m_step(counts, resp, cfg)
        objective = log_joint(counts, model, cfg)
        if not np.isfinite(objective):
            raise MixtureError(f"non-finite objective at iteration {it}")
        trace.append(objective)
        if abs(objective - trace[-2]) / max(abs(trace[-2]), 1e-300) < cfg.tolerance:
            converged = True
            break
    return model, resp, trace, converged


def fit(data, cfg: MixtureConfig) -> tuple[PoissonMixtureModel, Responsibilities, FitDiagnostics]:
    """Best-of-restarts EM fit.

    Each restart draws fresh per-student starting responsibilities from its
    own stream derived from (seed, restart index, row content) and iterates
    E/M until the relative objective change drops below the tolerance.
    """
    counts, ids = count_matrix(data)
    if counts.ndim != 2:
        raise ValueError("count data must be two-dimensional")
    if counts.shape[0] < cfg.components:
        raise ValueError(
            f"need at least {cfg.components} students, got {counts.shape[0]}"
        )
    best = None
    for restart in range(cfg.restarts):
        init = initial_responsibilities(counts, cfg, restart)
        model, resp, trace, converged = _em_run(counts, init, cfg, ids)
        if best is None or trace[-1] > best[0]:
            best = (trace[-1], restart, model, trace, converged)
    _, restart, model, trace, converged = best
    resp = e_step(counts, model, cfg)
    resp = Responsibilities(resp.weights, ids)
    diag = FitDiagnostics(
        objective_trace=trace,
        iterations_used=len(trace) - 1,
        converged=converged,
        best_restart_index=restart,
    )
    return model, resp, diag


@dataclass
class Assignments:
    """Stay-up component choice plus per-student labels."""

    stay_up_component: int
    omega_stay_up: np.ndarray
    labels: tuple[str, ...]
    student_ids: tuple[str, ...] | None = None

    def as_dict(self) -> dict[str, str]:
        ids = self.student_ids or tuple(str(i) for i in range(len(self.labels)))
        return dict(zip(ids, self.labels))


def stay_up_component(model: PoissonMixtureModel) -> int:
    """Component whose rate mass sits latest in the night (largest mean bin index)."""
    d = model.rates.shape[1]
    mean_bin = model.rates @ np.arange(d) / model.rates.sum(axis=1)
    order = np.argsort(mean_bin)
    if model.rates.shape[0] > 1 and mean_bin[order[-1]] == mean_bin[order[-2]]:
        raise ValueError(
            "mean bin index ties between components; select the stay-up component manually"
        )
    return int(order[-1])


def assign_and_label(resp: Responsibilities, model: PoissonMixtureModel,
                     threshold: float = 0.5) -> Assignments:
    """Label each student stay_up when its stay-up responsibility reaches the threshold."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie strictly between 0 and 1")
    comp = stay_up_component(model)
    omega = np.asarray(resp.weights)[:, comp]
    labels = tuple(STAY_UP if w >= threshold else NON_STAY_UP for w in omega)
    return Assignments(comp, omega, labels, resp.student_ids)


def model_to_json(model: PoissonMixtureModel, cfg: MixtureConfig) -> dict:
    return {
        "D": int(model.rates.shape[1]),
        "M": int(model.rates.shape[0]),
        "alpha": cfg.alpha,
        "beta": cfg.beta,
        "lambda": [[float(x) for x in row] for row in model.rates],
        "mixing": [float(x) for x in model.mixing],
        "variant": {"estep": cfg.estep_variant, "mstep": cfg.mstep_variant},
    }


def model_from_json(obj: dict) -> tuple[PoissonMixtureModel, MixtureConfig]:
    model = PoissonMixtureModel(np.asarray(obj["lambda"]), np.asarray(obj["mixing"]))
    cfg = MixtureConfig(
        components=obj["M"],
        alpha=obj["alpha"],
        beta=obj["beta"],
        estep_variant=obj["variant"]["estep"],
        mstep_variant=obj["variant"]["mstep"],
    )
    return model, cfg


def write_model_json(path, model: PoissonMixtureModel, cfg: MixtureConfig):
    Path(path).write_text(json.dumps(model_to_json(model, cfg), indent=2, sort_keys=True))


def write_assignments_csv(path, assignments: Assignments):
    ids = assignments.student_ids or tuple(str(i) for i in range(len(assignments.labels)))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["student_id", "omega_stayup", "label"])
        for sid, omega, label in zip(ids, assignments.omega_stay_up, assignments.labels):
            writer.writerow([sid, f"{omega:.12g}", label])


def read_assignments_csv(path) -> dict[str, str]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["student_id"]] = row["label"]
    return out
