"""Hill-climbing search for universal adversarial perturbations.

Each iteration draws one search direction ``q`` and tries ``delta - eps*q``
then ``delta + eps*q`` (each projected back onto the Lp ball). A candidate
is kept when it strictly lowers the summed clean-label confidence over the
input set (non-targeted) or strictly raises the summed target-class
confidence (targeted). The loop stops once every input is fooled or after
``max_iterations`` iterations.
"""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from .directions import DCT, DEFAULT_FD, PIXEL, DirectionSampler, DirectionSet
from .oracle import OracleError
from .projection import project
from .tensor import Perturbation, TensorError, apply_perturbation, lp_norm, norm_name, parse_norm

log = logging.getLogger(__name__)

NONTARGETED = "nontargeted"
TARGETED = "targeted"

SUCCESS = "SuccessRateOne"
MAX_ITERATIONS = "MaxIterations"

TRACE_COLUMNS = (
    "iteration", "queries", "objective", "success_rate",
    "accepted", "direction_index", "alpha_sign",
)


class AttackAborted(RuntimeError):
    """Raised when the oracle fails mid-run; ``report`` holds the partial run."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class AttackConfig:
    mode: str = NONTARGETED
    target: Optional[int] = None
    epsilon: float = 0.5
    xi: float = 0.0
    norm: object = 2
    max_iterations: int = 5000
    directions: str = DCT
    freq_fraction: float = DEFAULT_FD
    without_replacement: bool = False
    seed: int = 0
    clip: bool = True
    trace_path: Optional[str] = None
    progress_every: int = 0

    def __post_init__(self):
        self.norm = parse_norm(self.norm)
        if self.mode not in (NONTARGETED, TARGETED):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == TARGETED and self.target is None:
            raise ValueError("targeted mode needs a target class")
        if self.mode == NONTARGETED and self.target is not None:
            raise ValueError("target class given for a non-targeted attack")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.xi < 0:
            raise TensorError("negative budget")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.directions not in (PIXEL, DCT):
            raise ValueError(f"unknown direction kind {self.directions!r}")

    def to_dict(self):
        out = asdict(self)
        out["norm"] = norm_name(self.norm)
        return out

    def direction_set(self, shape):
        h, w, c = shape
        fd = self.freq_fraction if self.directions == DCT else 1.0
        return DirectionSet(self.directions, h, w, c, fd)


class TraceRow(NamedTuple):
    iteration: int
    queries: int
    objective: float
    success_rate: float
    accepted: bool
    direction_index: int
    alpha_sign: int
    delta_norm: float


@dataclass
class AttackReport:
    delta: Perturbation
    iterations: int
    accepted: int
    queries: int
    reason: Optional[str]
    objective: float
    success_rate: float
    trace: List[TraceRow] = field(default_factory=list)
    labels: Optional[np.ndarray] = None

    def accepted_objectives(self):
        """Objective after each accepted update, in order."""
        return [row.objective for row in self.trace if row.accepted]


def stack_images(images):
    X = np.asarray(images, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise TensorError(f"expected a stack of (h, w, c) images, got shape {X.shape}")
    return X


def objective_sum(oracle, X, labels, delta, clip=True):
    """Summed probability of ``labels`` under ``X + delta``.

    Returns ``(total, score_matrix)``. The sum is exactly rounded
    (``math.fsum``) so it does not depend on batching or summation order.
    """
    X = stack_images(X)
    sc = oracle.scores(apply_perturbation(X, delta, clip))
    picked = sc[np.arange(X.shape[0]), np.asarray(labels)]
    return math.fsum(picked.tolist()), sc


def success_rate(score_matrix, labels, mode, target=None):
    pred = np.argmax(score_matrix, axis=1)
    if mode == TARGETED:
        return float(np.mean(pred == target))
    return float(np.mean(pred != labels))


class _TraceWriter:
    def __init__(self, path):
        self.fh = open(path, "w", newline="") if path else None
        if self.fh:
            self.writer = csv.writer(self.fh)
            self.writer.writerow(TRACE_COLUMNS)

    def write(self, row):
        if self.fh:
            self.writer.writerow([
                row.iteration, row.queries, repr(row.objective), repr(row.success_rate),
                int(row.accepted), row.direction_index, row.alpha_sign,
            ])

    def close(self):
        if self.fh:
            self.fh.close()


def run_attack(oracle, images, config):
    """Search for a universal perturbation against ``oracle`` over ``images``.

    Parameters
    ----------
    oracle : ScoreOracle
        Queried only through ``scores``.
    images : array_like, shape (n, h, w, c)
        Input set the perturbation is fitted on.
    config : AttackConfig

    Returns
    -------
    AttackReport

    Raises
    ------
    AttackAborted
        If the oracle fails; the exception carries the partial report.
    """
    if len(images) == 0:
        raise TensorError("empty dataset")
    X = stack_images(images)
    shape = X.shape[1:]
    if tuple(shape) != tuple(oracle.input_shape):
        raise TensorError("shape mismatch")
    n = X.shape[0]
    ds = config.direction_set(shape)
    sampler = DirectionSampler(ds, config.seed, config.without_replacement)
    eps = config.epsilon
    targeted = config.mode == TARGETED
    if targeted and not 0 <= config.target < (oracle.num_classes or config.target + 1):
        raise ValueError("unknown class")

    delta = np.zeros(shape)
    report = AttackReport(
        delta=Perturbation(delta, config.norm, config.xi),
        iterations=0, accepted=0, queries=0, reason=None,
        objective=math.nan, success_rate=0.0,
    )
    start_queries = oracle.query_count
    writer = _TraceWriter(config.trace_path)

    def spent():
        return oracle.query_count - start_queries

    try:
        # One batch at delta = 0: clean labels (non-targeted) or the
        # baseline target confidence (targeted). Its scores are the cache
        # for the current delta.
        if targeted:
            labels = np.full(n, config.target, dtype=np.int64)
            cur_obj, cur_scores = objective_sum(oracle, X, labels, delta, config.clip)
        else:
            clean = oracle.scores(X)
            labels = np.argmax(clean, axis=1)
            # images lie in [0, 1], so clipped or not, x + 0 scores as x
            cur_scores = clean
            cur_obj = math.fsum(clean[np.arange(n), labels].tolist())
        report.labels = labels
        report.objective = cur_obj

        r = 0.0
        i = 0
        while r < 1 and i < config.max_iterations:
            idx, q = sampler.sample()
            accepted = False
            sign = 0
            for s in (-1, 1):
                cand = project(delta + (s * eps) * q, config.norm, config.xi)
                obj, sc = objective_sum(oracle, X, labels, cand, config.clip)
                better = obj > cur_obj if targeted else obj < cur_obj
                if better:
                    delta, cur_obj, cur_scores = cand, obj, sc
                    accepted = True
                    sign = s
                    break
            r = success_rate(cur_scores, labels, config.mode, config.target)
            i += 1
            report.accepted += accepted
            row = TraceRow(i, spent(), cur_obj, r, accepted, idx, sign,
                           lp_norm(delta, config.norm))
            report.trace.append(row)
            writer.write(row)
            report.iterations = i
            report.objective = cur_obj
            report.success_rate = r
            report.delta = Perturbation(delta, config.norm, config.xi)
            if config.progress_every and i % config.progress_every == 0:
                log.info("iter %d  r=%.4f  objective=%.6f  queries=%d", i, r, cur_obj, spent())
    except OracleError as exc:
        report.queries = spent()
        raise AttackAborted(f"attack aborted: {exc}", report) from exc
    finally:
        writer.close()

    report.queries = spent()
    report.reason = SUCCESS if r >= 1 else MAX_ITERATIONS
    return report
