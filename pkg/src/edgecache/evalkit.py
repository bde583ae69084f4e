"""Datasets, classification metrics and the policy comparison harness."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from . import policies
from .cnn import LabeledDataset
from .cost import DEFAULT_GAMMA, SLACK, ec_loads
from .encoder import encode
from .netmodel import generate_instance
from .solver import solve_exact

log = logging.getLogger(__name__)

DESK_SPLIT = (256, 64, 64)
FULL_SPLIT = (1024, 128, 128)
DESK_TEST_SIZE = 32
POLICY_ORDER = ("benchmark", "pure_cnn", "cnn_rmilp", "cnn_hcls", "gca")


# -- dataset -------------------------------------------------------------------

@dataclass
class DatasetSplit:
    train: LabeledDataset
    validation: LabeledDataset
    test: LabeledDataset
    resampled: int = 0  # generated instances dropped as infeasible


def _instance_stream(seed, topology, num_flows, alpha=1.0, beta=1.0):
    """Feasible instances with their optimal placements, in seed order.

    Yields ``(instance, solution, skipped)``; ``skipped`` counts the
    infeasible draws discarded before this one.
    """
    ss = np.random.SeedSequence(seed)
    skipped = 0
    while True:
        child = int(ss.spawn(1)[0].generate_state(1)[0])
        inst = generate_instance(child, topology, num_flows, alpha, beta)
        report = solve_exact(inst)
        if report.feasible:
            yield inst, report.solution, skipped
            skipped = 0
        else:
            log.info("generated instance %d is infeasible; drawing another", child)
            skipped += 1


def solved_instances(seed, topology, num_flows, count, alpha=1.0, beta=1.0):
    """``count`` feasible instances with their optimal solutions.

    Returns ``(instances, solutions, resampled)``.
    """
    stream = _instance_stream(seed, topology, num_flows, alpha, beta)
    insts, sols, skipped = [], [], 0
    for _ in range(count):
        inst, sol, n = next(stream)
        insts.append(inst)
        sols.append(sol)
        skipped += n
    return insts, sols, skipped


def label_instances(instances):
    """Optimal placement rows of each instance as a ``(N, K, E)`` array."""
    return np.stack([solve_exact(inst).solution.x for inst in instances])


def build_dataset(seed, topology, num_instances=None, num_flows=5, split=DESK_SPLIT,
                  alpha=1.0, beta=1.0):
    """Generate, solve and encode instances, then split them by a seeded shuffle.

    ``num_instances`` defaults to ``sum(split)``.  Instances without a
    feasible placement are replaced by fresh draws and counted in
    ``resampled``.
    """
    split = tuple(int(v) for v in split)
    if num_instances is None:
        num_instances = sum(split)
    if num_instances != sum(split) or min(split) < 0:
        raise ValueError(f"split {split} does not add up to {num_instances} instances")
    if num_flows < 1:
        raise ValueError("num_flows must be positive")
    insts, sols, skipped = solved_instances(seed, topology, num_flows, num_instances,
                                            alpha, beta)
    labels = [sol.x for sol in sols]
    images = [encode(inst) for inst in insts]
    order = np.random.default_rng(seed).permutation(num_instances)
    full = LabeledDataset(images, np.stack(labels), insts)
    a, b = split[0], split[0] + split[1]
    return DatasetSplit(full.subset(order[:a]), full.subset(order[a:b]),
                        full.subset(order[b:]), skipped)


# -- confusion counts and averages -------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    """Per-EC tallies over all (instance, flow) pairs; arrays of length ``|E|``."""

    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray

    @property
    def total(self):
        return int(self.tp[0] + self.fp[0] + self.tn[0] + self.fn[0])


def _one_hot(a, name):
    a = np.asarray(a)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"{name} must be (N, K, E) or (K, E)")
    if np.any((a != 0) & (a != 1)) or np.any(a.sum(axis=2) != 1):
        raise ValueError(f"every {name} row must be one-hot")
    return a.reshape(-1, a.shape[2]).astype(bool)


def confusion(predictions, labels):
    """Per-EC true/false positives and negatives.

    Each (instance, flow) pair is one sample; for EC ``e`` it is a positive
    prediction when the flow is predicted at ``e``.
    """
    pred = _one_hot(predictions, "prediction")
    true = _one_hot(labels, "label")
    if pred.shape != true.shape:
        raise ValueError(f"predictions {pred.shape} and labels {true.shape} differ in shape")
    return ConfusionCounts(
        tp=np.sum(pred & true, axis=0), fp=np.sum(pred & ~true, axis=0),
        tn=np.sum(~pred & ~true, axis=0), fn=np.sum(~pred & true, axis=0))


def _ratio(num, den):
    return Fraction(int(num), int(den)) if den else None


@dataclass
class MetricBundle:
    """Fractions (exact) for every metric; ``undefined_ecs`` lists the ECs
    whose precision or recall had a zero denominator and counted as 0."""

    macro: dict
    micro: dict
    undefined_ecs: list = field(default_factory=list)

    def as_float(self):
        return {"macro": {k: float(v) for k, v in self.macro.items()},
                "micro": {k: float(v) for k, v in self.micro.items()}}


def _f1(p, r):
    return Fraction(0) if p + r == 0 else 2 * p * r / (p + r)


def macro_micro(counts):
    """Macro (mean over ECs) and micro (pooled counts) accuracy/precision/recall/F1."""
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    E = len(tp)
    undefined = []
    acc, prec, rec, f1 = [], [], [], []
    for e in range(E):
        acc.append(_ratio(tp[e] + tn[e], tp[e] + fp[e] + tn[e] + fn[e]))
        p = _ratio(tp[e], tp[e] + fp[e])
        r = _ratio(tp[e], tp[e] + fn[e])
        if p is None or r is None:
            undefined.append(e)
        p = p or Fraction(0)
        r = r or Fraction(0)
        prec.append(p)
        rec.append(r)
        f1.append(_f1(p, r))
    if undefined:
        log.debug("ECs %s have no positives in prediction or truth; they count as 0", undefined)
    macro = {"accuracy": sum(acc) / E, "precision": sum(prec) / E,
             "recall": sum(rec) / E, "f1": sum(f1) / E}
    TP, FP, TN, FN = (int(v.sum()) for v in (tp, fp, tn, fn))
    mp = _ratio(TP, TP + FP) or Fraction(0)
    mr = _ratio(TP, TP + FN) or Fraction(0)
    micro = {"accuracy": _ratio(TP + TN, TP + FP + TN + FN), "precision": mp,
             "recall": mr, "f1": _f1(mp, mr)}
    return MetricBundle(macro, micro, undefined)


# -- policy comparison ---------------------------------------------------------------

CSV_COLUMNS = ("policy", "num_flows", "instances", "mean_cost", "mean_penalty_score",
               "feasible_ratio", "flow_feasible_ratio", "max_cost_diff_vs_benchmark",
               "mean_variable_count", "macro_accuracy", "macro_precision", "macro_recall",
               "macro_f1", "micro_accuracy", "micro_precision", "micro_recall", "micro_f1",
               "mean_elapsed")


@dataclass
class MetricsReport:
    policy: str
    num_flows: int
    instances: int
    mean_cost: float
    mean_penalty_score: float
    feasible_ratio: float
    flow_feasible_ratio: float
    max_cost_diff_vs_benchmark: float
    mean_variable_count: float | None
    macro: dict
    micro: dict
    mean_elapsed: float

    def row(self):
        d = asdict(self)
        for avg in ("macro", "micro"):
            for k, v in d.pop(avg).items():
                d[f"{avg}_{k}"] = v
        return {c: d.get(c) for c in CSV_COLUMNS}


def _flow_feasible(instance, outcome):
    """Share of flows that are placed on an EC that is not overloaded."""
    x = outcome.x
    over = ec_loads(instance, x) >= instance.w * (1 - SLACK)
    ok = x.any(axis=1) & ~(x.astype(bool) & over[None, :]).any(axis=1)
    return float(ok.mean())


def _one_hot_or_none(x):
    x = np.asarray(x)
    return x if np.all(x.sum(axis=1) == 1) else None


def summarize(policy, instances, outcomes, benchmark_outcomes, labels=None):
    """:class:`MetricsReport` of ``outcomes`` on ``instances``.

    ``max_cost_diff_vs_benchmark`` compares penalty scores, so infeasible
    outcomes are charged their penalty.  Classification metrics compare the
    placements against ``labels`` (the optimal placements); they are left
    empty when some outcome leaves a flow unassigned.
    """
    n = len(outcomes)
    costs = np.array([o.objective for o in outcomes])
    scores = np.array([o.penalty_score for o in outcomes])
    bench = np.array([o.penalty_score for o in benchmark_outcomes])
    counts = [o.variable_count for o in outcomes]
    macro, micro = {}, {}
    if labels is not None:
        preds = [_one_hot_or_none(o.x) for o in outcomes]
        if all(p is not None for p in preds):
            bundle = macro_micro(confusion(np.stack(preds), labels)).as_float()
            macro, micro = bundle["macro"], bundle["micro"]
    return MetricsReport(
        policy=policy, num_flows=int(instances[0].num_flows), instances=n,
        mean_cost=float(costs.mean()), mean_penalty_score=float(scores.mean()),
        feasible_ratio=float(np.mean([o.feasible for o in outcomes])),
        flow_feasible_ratio=float(np.mean([_flow_feasible(i, o)
                                           for i, o in zip(instances, outcomes)])),
        max_cost_diff_vs_benchmark=float(np.max(scores - bench)),
        mean_variable_count=None if None in counts else float(np.mean(counts)),
        macro=macro, micro=micro,
        mean_elapsed=float(np.mean([o.elapsed for o in outcomes])))


def _run_one(args):
    name, inst, models, delta, gamma = args
    return policies.run_policy(name, inst, models, delta, gamma)


def evaluate_policies(instances, models, names=POLICY_ORDER, delta=policies.DEFAULT_DELTA,
                      gamma=DEFAULT_GAMMA, jobs=1):
    """Outcomes per policy name, each a list aligned with ``instances``."""
    work = [(name, inst, models, delta, gamma) for name in names for inst in instances]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            flat = list(pool.map(_run_one, work))
    else:
        flat = [_run_one(w) for w in work]
    n = len(instances)
    return {name: flat[i * n:(i + 1) * n] for i, name in enumerate(names)}


def make_test_set(seed, topology, num_flows, count=DESK_TEST_SIZE, alpha=1.0, beta=1.0):
    """``count`` feasible instances with ``num_flows`` flows, seeded per flow count."""
    return solved_instances([seed, num_flows], topology, num_flows, count, alpha, beta)[0]


def run_comparison(seed, topology, models, flows_list=(5, 10, 15, 20), count=DESK_TEST_SIZE,
                   names=POLICY_ORDER, delta=policies.DEFAULT_DELTA, gamma=DEFAULT_GAMMA,
                   jobs=1, test_sets=None, alpha=1.0, beta=1.0):
    """Evaluate every policy on a test set per flow count.

    ``test_sets`` optionally maps a flow count to a ready list of instances;
    otherwise ``count`` instances are generated from ``seed``.  The
    benchmark always runs since the other rows are measured against it.
    """
    names = tuple(n.replace("-", "_") for n in names)
    if "benchmark" not in names:
        names = ("benchmark",) + names
    reports = []
    for K in flows_list:
        insts = (test_sets or {}).get(K) or make_test_set(seed, topology, K, count, alpha, beta)
        outcomes = evaluate_policies(insts, models, names, delta, gamma, jobs)
        labels = np.stack([o.x for o in outcomes["benchmark"]])
        for name in names:
            reports.append(summarize(name, insts, outcomes[name], outcomes["benchmark"], labels))
    return reports


def to_csv(reports):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.row())
    return buf.getvalue()


_TABLE_ROWS = (
    ("Mean total cost", "mean_cost", "{:.2f}"),
    ("Mean penalty score", "mean_penalty_score", "{:.2f}"),
    ("Mean feasible ratio", "feasible_ratio", "{:.2%}"),
    ("Max total cost difference", "max_cost_diff_vs_benchmark", "{:.2f}"),
    ("Mean number of variables", "mean_variable_count", "{:.0f}"),
    ("Macro accuracy", "macro_accuracy", "{:.2%}"),
    ("Macro precision", "macro_precision", "{:.2%}"),
    ("Macro recall", "macro_recall", "{:.2%}"),
    ("Macro F1", "macro_f1", "{:.2%}"),
    ("Micro precision/recall/F1", "micro_precision", "{:.2%}"),
    ("Mean time (s)", "mean_elapsed", "{:.3f}"),
)


def render_table(reports):
    """Plain-text tables, one per flow count, policies as columns."""
    out = []
    for K in sorted({r.num_flows for r in reports}):
        rows = [r.row() for r in reports if r.num_flows == K]
        head = ["|K| = %d" % K] + [r["policy"] for r in rows]
        lines = [head]
        for label, key, fmt in _TABLE_ROWS:
            cells = [label]
            for r in rows:
                v = r.get(key)
                cells.append("-" if v is None else fmt.format(v))
            lines.append(cells)
        widths = [max(len(line[i]) for line in lines) for i in range(len(head))]
        out.append("\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip()
                             for line in lines))
    return "\n\n".join(out) + "\n"
