"""Decoding strategies that turn predictions (or nothing) into placements.

* ``benchmark``: the exact solver on the full problem.
* ``cnn_rmilp``: the exact solver restricted to the confident entries of a
  probability matrix, with an unrestricted fallback.
* ``hcls``: hill climbing over one-flow moves guided by the matrix and
  scored with the penalty function.
* ``gca``: greedy first fit at the EC nearest to each flow's likeliest AR.
* ``pure_cnn_cascade`` / ``hybrid_cascade``: height-5 sub-images predicted
  one after the other, with capacities updated between rounds.

Every policy returns a :class:`PolicyOutcome` whose cost, score and
feasibility come from :func:`cost.evaluate`.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import cost
from .cnn import ProbMatrix, predict_matrix
from .encoder import SUB_HEIGHT, apply_assignment_update, encode, partition
from .solver import count_variables, solve_exact

log = logging.getLogger(__name__)

DEFAULT_DELTA = 0.001
POLICIES = ("benchmark", "pure_cnn", "cnn_rmilp", "cnn_hcls", "gca")


class InfeasibleInstanceError(ValueError):
    """The unrestricted problem has no feasible placement."""


@dataclass(frozen=True)
class HclsMove:
    flow: int
    from_ec: int
    to_ec: int
    score_before: float
    score_after: float

    def to_dict(self):
        return {"flow": self.flow, "from_ec": self.from_ec, "to_ec": self.to_ec,
                "score_before": self.score_before, "score_after": self.score_after}


@dataclass
class PolicyOutcome:
    policy: str
    solution: cost.Solution
    elapsed: float
    fallback_used: bool = False
    variable_count: int | None = None
    evaluations: int | None = None  # HCLS state evaluations
    moves: list = field(default_factory=list)
    prob_matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy tag {self.policy!r}")

    @property
    def x(self):
        return self.solution.x

    @property
    def routing(self):
        return self.solution.routing

    @property
    def objective(self):
        return self.solution.objective

    @property
    def penalty_score(self):
        return self.solution.penalty_score

    @property
    def feasible(self):
        return self.solution.feasible

    @property
    def unassigned(self):
        return np.flatnonzero(~self.x.any(axis=1)).tolist()

    def to_dict(self):
        return {
            "policy": self.policy,
            "solution": self.solution.to_dict(),
            "elapsed": self.elapsed,
            "fallback_used": self.fallback_used,
            "variable_count": self.variable_count,
            "evaluations": self.evaluations,
            "moves": [m.to_dict() for m in self.moves],
            "prob_matrix": None if self.prob_matrix is None else self.prob_matrix.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        prob = d.get("prob_matrix")
        return cls(d["policy"], cost.Solution.from_dict(d["solution"]), d["elapsed"],
                   d["fallback_used"], d["variable_count"], d["evaluations"],
                   [HclsMove(**m) for m in d["moves"]],
                   None if prob is None else np.array(prob, dtype=float))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _matrix(prob_matrix, instance=None):
    o = np.asarray(getattr(prob_matrix, "o", prob_matrix), dtype=float)
    if o.ndim != 2:
        raise ValueError("probability matrix must be 2-D")
    if instance is not None:
        K, _, E, _ = instance.shape
        if o.shape != (K, E):
            raise ValueError(f"probability matrix must be {K}x{E}, got {o.shape[0]}x{o.shape[1]}")
    if np.any(o < 0) or np.any(o > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    return o


def _placement_matrix(assign, K, E):
    """0/1 ``(K, E)`` matrix from EC indices, -1 leaving the row empty."""
    x = np.zeros((K, E), dtype=np.int8)
    for k, e in enumerate(assign):
        if e >= 0:
            x[k, e] = 1
    return x


def _outcome(policy, instance, x, start, gamma, routing=None, **extra):
    sol = cost.evaluate(instance, x, routing, gamma=gamma)
    return PolicyOutcome(policy, sol, time.perf_counter() - start, **extra)


def threshold_mask(prob_matrix, delta=DEFAULT_DELTA):
    """Keep candidates with ``o[k, e] >= delta``.

    A row with nothing above ``delta`` keeps its largest entry so that no
    flow is left without a candidate.
    """
    if not 0 <= delta < 1:
        raise ValueError(f"delta must lie in [0, 1), got {delta}")
    o = _matrix(prob_matrix)
    mask = (o >= delta).astype(np.int8)
    for k in np.flatnonzero(~mask.any(axis=1)):
        e = int(np.argmax(o[k]))
        log.info("flow %d has no entry >= %g; keeping its argmax EC %d", k, delta, e)
        mask[k, e] = 1
    return mask


def benchmark(instance, gamma=cost.DEFAULT_GAMMA):
    """Exact optimum of the full problem."""
    start = time.perf_counter()
    report = solve_exact(instance)
    if not report.feasible:
        raise InfeasibleInstanceError("instance has no feasible placement")
    return _outcome("benchmark", instance, report.solution.x, start, gamma,
                    report.solution.routing, variable_count=report.variable_count)


def cnn_rmilp(instance, prob_matrix, delta=DEFAULT_DELTA, gamma=cost.DEFAULT_GAMMA):
    """Exact search over the candidates kept by :func:`threshold_mask`."""
    start = time.perf_counter()
    o = _matrix(prob_matrix, instance)
    report = solve_exact(instance, mask=threshold_mask(o, delta))
    if not report.feasible:
        raise InfeasibleInstanceError("instance has no feasible placement, even without the mask")
    return _outcome("cnn_rmilp", instance, report.solution.x, start, gamma,
                    report.solution.routing, fallback_used=report.fallback_used,
                    variable_count=report.variable_count, prob_matrix=o)


def ranked_candidates(prob_matrix, delta=DEFAULT_DELTA):
    """Masked ECs of every flow, by decreasing probability (ties: lower EC first).

    The first entry of each list is the flow's starting EC in :func:`hcls`.
    """
    o = _matrix(prob_matrix)
    mask = threshold_mask(o, delta)
    return [sorted(np.flatnonzero(mask[k]).tolist(), key=lambda e, k=k: (-o[k, e], e))
            for k in range(o.shape[0])]


def hcls(instance, prob_matrix, delta=DEFAULT_DELTA, gamma=cost.DEFAULT_GAMMA):
    """Hill climbing from the per-flow argmax of the masked matrix.

    Each flow walks down its masked candidates in order of decreasing
    probability (equal probabilities: lower EC first).  A successor moves
    one flow to its next candidate.  All successors are scored and the
    lowest score wins if it is strictly below the current one; equal scores
    go to the lowest flow index.  The climb stops at a local minimum or
    once ``|K| * |E|`` states (the start included) have been scored.
    """
    start = time.perf_counter()
    o = _matrix(prob_matrix, instance)
    K, _, E, _ = instance.shape
    ranked = ranked_candidates(o, delta)
    pos = [0] * K
    budget = K * E

    def score(p):
        x = _placement_matrix([ranked[k][p[k]] for k in range(K)], K, E)
        r = cost.complete_routing(instance, x)
        return cost.penalty_score(instance, x, r.z, r.y, gamma)

    current = score(pos)
    evaluations = 1
    moves = []
    while evaluations < budget:
        best = None
        for k in range(K):
            if pos[k] + 1 >= len(ranked[k]) or evaluations >= budget:
                continue
            trial = pos.copy()
            trial[k] += 1
            s = score(trial)
            evaluations += 1
            if s < current and (best is None or s < best[1]):
                best = (k, s)
        if best is None:
            break
        k, s = best
        moves.append(HclsMove(k, ranked[k][pos[k]], ranked[k][pos[k] + 1], current, s))
        pos[k] += 1
        current = s
    x = _placement_matrix([ranked[k][pos[k]] for k in range(K)], K, E)
    return _outcome("cnn_hcls", instance, x, start, gamma, evaluations=evaluations,
                    moves=moves, prob_matrix=o)


def gca(instance, gamma=cost.DEFAULT_GAMMA):
    """Greedy placement at the nearest EC with room left.

    Flows are taken in input order.  Each flow's EC queue is ordered by hop
    count from its most likely AR (then by EC index); the first EC whose
    residual storage is at least ``s_k`` takes it.  Bandwidth is not
    checked.  Flows that fit nowhere stay unassigned and are scored as
    cache misses.
    """
    start = time.perf_counter()
    K, _, E, _ = instance.shape
    hops = instance.topology.hop_matrix
    residual = instance.w.astype(float).copy()
    assign = [-1] * K
    for k in range(K):
        a = int(np.argmax(instance.p[k]))
        for e in sorted(range(E), key=lambda e: (hops[a, e], e)):
            if instance.s[k] <= residual[e]:
                assign[k] = e
                residual[e] -= instance.s[k]
                break
        else:
            log.info("gca: flow %d fits in no EC", k)
    return _outcome("gca", instance, _placement_matrix(assign, K, E), start, gamma)


def _cascade(instance, models, sub_height=SUB_HEIGHT):
    """Predict sub-images in turn, re-encoding residual capacities after each.

    Returns the EC index per flow (-1 when unassigned) and the stacked
    probability rows (uniform for flows never predicted).
    """
    K, _, E, _ = instance.shape
    assign = [-1] * K
    o = np.full((K, E), 1.0 / E)
    x = np.zeros((K, E), dtype=np.int8)
    y = np.zeros((K, instance.shape[3]), dtype=np.int8)
    image = encode(instance)
    rounds = -(-K // sub_height)
    for i in range(rounds):
        if i:
            image = apply_assignment_update(instance, x, y)
        banned = image.excluded_ecs
        if len(banned) == E:
            log.info("cascade: every EC is full after %d rounds; %d flows unassigned",
                     i, K - i * sub_height)
            break
        sub = partition(image, sub_height)[i]
        probs = predict_matrix(models, sub)
        allowed = np.array([e not in banned for e in range(E)])
        for row, k in enumerate(range(i * sub_height, min(K, (i + 1) * sub_height))):
            o[k] = probs.o[row]
            e = int(np.argmax(np.where(allowed, probs.o[row], -1.0)))
            assign[k] = e
            x[k, e] = 1
        y = cost.complete_routing(instance, x).y
    return assign, o


def pure_cnn_cascade(instance, models, gamma=cost.DEFAULT_GAMMA, sub_height=SUB_HEIGHT):
    """Per-flow argmax of the predictions, sub-image by sub-image."""
    start = time.perf_counter()
    K, _, E, _ = instance.shape
    assign, o = _cascade(instance, models, sub_height)
    return _outcome("pure_cnn", instance, _placement_matrix(assign, K, E), start, gamma,
                    prob_matrix=o)


def hybrid_cascade(instance, models, mode="rmilp", delta=DEFAULT_DELTA,
                   gamma=cost.DEFAULT_GAMMA, sub_height=SUB_HEIGHT):
    """Cascade for the probability matrix, then rMILP or HCLS on the whole instance.

    The image updates between rounds use the argmax placements, the same as
    :func:`pure_cnn_cascade`; only the collected probability rows are passed on.
    """
    if mode not in ("rmilp", "hcls"):
        raise ValueError(f"mode must be 'rmilp' or 'hcls', got {mode!r}")
    start = time.perf_counter()
    _, o = _cascade(instance, models, sub_height)
    out = (cnn_rmilp if mode == "rmilp" else hcls)(instance, o, delta, gamma)
    out.elapsed = time.perf_counter() - start
    return out


def run_policy(name, instance, models=None, delta=DEFAULT_DELTA, gamma=cost.DEFAULT_GAMMA):
    """Dispatch by policy tag (``-`` and ``_`` are interchangeable)."""
    name = name.replace("-", "_")
    if name == "benchmark":
        return benchmark(instance, gamma)
    if name == "gca":
        return gca(instance, gamma)
    if models is None:
        raise ValueError(f"policy {name!r} needs trained models")
    if name == "pure_cnn":
        return pure_cnn_cascade(instance, models, gamma)
    if name == "cnn_rmilp":
        return hybrid_cascade(instance, models, "rmilp", delta, gamma)
    if name == "cnn_hcls":
        return hybrid_cascade(instance, models, "hcls", delta, gamma)
    raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICIES)}")


__all__ = ["DEFAULT_DELTA", "POLICIES", "HclsMove", "InfeasibleInstanceError", "PolicyOutcome",
           "ProbMatrix", "benchmark", "cnn_rmilp", "count_variables", "gca", "hcls",
           "hybrid_cascade", "pure_cnn_cascade", "ranked_candidates", "run_policy",
           "threshold_mask"]
