"""Exact branch-and-bound for the caching placement problem.

The search branches on placements flow by flow.  Once every flow has an
EC, the remaining choice is which ARs to serve from that EC; serving an AR
saves expected backhaul hops but occupies link bandwidth.  That routing
subproblem is solved exactly by a second, nested branch-and-bound.

Bounds are combinatorial (no LP relaxation):

* the marginal caching cost of adding a flow to an EC only grows as the EC
  fills up, so unplaced flows are priced at current marginals, then jointly
  through a flow-to-slot assignment problem;
* transmission cost is bounded by letting every flow pick its best set of
  served ARs on its own, with link capacities priced in through Lagrange
  multipliers tuned once at the root.

Ties are resolved towards the lexicographically smallest vector of EC
indices, then the smallest flattened ``z``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cost import SLACK, Routing, evaluate, routing_links

log = logging.getLogger(__name__)

TIE_TOL = 1e-9
_BIG = 1e15


@dataclass
class SolveReport:
    solution: object  # cost.Solution, or None when infeasible
    nodes_explored: int
    fallback_used: bool
    variable_count: int
    status: str = "optimal"

    @property
    def objective(self):
        return None if self.solution is None else self.solution.objective

    @property
    def feasible(self):
        return self.solution is not None


def count_variables(instance, mask=None):
    """Number of decision variables in the linearized model.

    ``x``, ``y``, ``z``, the products ``chi`` and the per-EC ``t``.  Each
    masked-out (flow, EC) pair removes its ``x``, its ``chi`` and ``|A|``
    routing variables.
    """
    K, A, E, L = instance.shape
    n = K * E + K * L + K * A * E + K * E + E
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != (K, E):
            raise ValueError(f"mask must have shape {(K, E)}")
        n -= int(np.sum(mask == 0)) * (2 + A)
    return n


class _Search:
    """State shared by one solve; not reusable across instances."""

    def __init__(self, instance, allowed, ignore_links=False):
        self.inst = instance
        K, A, E, L = instance.shape
        self.K, self.A, self.E, self.L = K, A, E, L
        topo = instance.topology
        NT = topo.n_backhaul
        N = topo.hop_matrix
        self.alpha, self.beta = instance.alpha, instance.beta
        self.s = [float(v) for v in instance.s]
        self.b = [float(v) for v in instance.b]
        self.w = [float(v) for v in instance.w]
        self.c = [float(v) for v in instance.c]
        self.cap_w = [w * (1 - SLACK) for w in self.w]
        self.cap_c = [np.inf if ignore_links else c * (1 - SLACK) for c in self.c]
        self.allowed = allowed
        self.base = [self.beta * NT] * K
        paths = {(a, e): topo.path_links(a, e) for a in range(A) for e in range(E)}
        # items[k][e]: ARs worth serving when flow k sits on EC e
        self.items = [[[] for _ in range(E)] for _ in range(K)]
        self.ideal = [[0.0] * E for _ in range(K)]
        for k in range(K):
            for e in range(E):
                total = 0.0
                for a in range(A):
                    g = self.beta * float(instance.p[k, a]) * (NT - int(N[a, e]))
                    if g > 0:
                        self.items[k][e].append((g, a, paths[a, e]))
                        total += g
                self.ideal[k][e] = self.base[k] - total
        self.s_arr = np.array(self.s)
        self.w_arr = np.array(self.w)
        self.capw_arr = np.array(self.cap_w)
        self.ideal_arr = np.array(self.ideal)
        self.allowed_arr = np.zeros((K, E), dtype=bool)
        for k, ecs in enumerate(allowed):
            self.allowed_arr[k, ecs] = True
        self.ignore_links = ignore_links
        # Link-capacity multipliers: transmission of flow k on EC e is priced
        # at ideal_mu[k][e], plus the constant mu_const for the whole solve.
        self.ideal_mu = [row[:] for row in self.ideal]
        self.ideal_mu_arr = self.ideal_arr.copy()
        self.mu_const = 0.0
        self.nodes = 0
        self.best_j = np.inf
        self.best = None  # (assign, served set)

    def zkey(self, served):
        """Flattened z bits for a set of served (k, a) pairs."""
        return tuple((k, a) in served for k in range(self.K) for a in range(self.A))

    # -- routing subproblem ---------------------------------------------------

    def route(self, assign, cutoff, upto=None):
        """Best set of served (k, a) pairs for a fixed placement.

        Only flows ``0..upto-1`` are routed (all by default).  Returns
        ``(transmission_cost, served)`` for those flows, or ``None`` if
        nothing beats ``cutoff`` (in transmission-cost units).
        """
        K = self.K if upto is None else upto
        always, pending = [], []
        flows_on = {}
        for k in range(K):
            for g, a, links in self.items[k][assign[k]]:
                if not links:
                    always.append((g, k, a))
                    continue
                for l in links:
                    flows_on.setdefault(l, set()).add(k)
        full_load = {l: sum(self.b[k] for k in ks) for l, ks in flows_on.items()}
        binding = {l for l, v in full_load.items() if v >= self.cap_c[l]}
        for k in range(K):
            for g, a, links in self.items[k][assign[k]]:
                if not links:
                    continue
                hot = tuple(l for l in links if l in binding)
                if hot:
                    pending.append((g, k, a, hot))
                else:
                    always.append((g, k, a))
        base = sum(self.base[:K]) - sum(g for g, _, _ in always)
        self.nodes += 1
        if not pending:
            return (base, frozenset((k, a) for _, k, a in always)) if base <= cutoff + TIE_TOL else None

        pending.sort(key=lambda it: (-it[0], it[1], it[2]))
        n = len(pending)
        suffix = [0.0] * (n + 1)
        for i in range(n - 1, -1, -1):
            suffix[i] = suffix[i + 1] + pending[i][0]
        load = {l: 0.0 for l in binding}
        count = {}  # (k, l) -> served paths of flow k crossing l
        chosen = []
        best = [cutoff + TIE_TOL, None]

        def dfs(i, gain):
            self.nodes += 1
            cost = base - gain
            if cost - suffix[i] > best[0]:
                return
            if i == n:
                sel = frozenset(chosen)
                if best[1] is None or cost < best[0] - TIE_TOL or \
                        self.zkey(sel) < self.zkey(best[1]):
                    best[0], best[1] = cost, sel
                return
            g, k, a, hot = pending[i]
            added = [l for l in hot if count.get((k, l), 0) == 0]
            if all(load[l] + self.b[k] < self.cap_c[l] for l in added):
                for l in hot:
                    count[k, l] = count.get((k, l), 0) + 1
                for l in added:
                    load[l] += self.b[k]
                chosen.append((k, a))
                dfs(i + 1, gain + g)
                chosen.pop()
                for l in added:
                    load[l] -= self.b[k]
                for l in hot:
                    count[k, l] -= 1
            dfs(i + 1, gain)

        dfs(0, 0.0)
        if best[1] is None:
            return None
        served = best[1] | frozenset((k, a) for _, k, a in always)
        return best[0], served

    # -- placement search -----------------------------------------------------

    def caching(self, load, count):
        return sum(count[e] / (1 - load[e] / self.w[e]) for e in range(self.E) if count[e])

    def offer(self, assign, load, count):
        cc = self.alpha * self.caching(load, count)
        lb = cc + sum(self.ideal_mu[k][assign[k]] for k in range(self.K)) + self.mu_const
        if lb > self.best_j + TIE_TOL:
            return
        res = self.route(assign, self.best_j - cc)
        if res is None:
            return
        ct, served = res
        j = cc + ct
        if j > self.best_j + TIE_TOL:
            return
        cand = (tuple(assign), served)
        if self.best is None or j < self.best_j - TIE_TOL or \
                (cand[0], self.zkey(served)) < (self.best[0], self.zkey(self.best[1])):
            self.best_j = j
            self.best = cand

    def lower_bound(self, j, load, count, assign):
        alpha = self.alpha
        ideal = self.ideal_mu
        lb = alpha * self.caching(load, count) + self.mu_const
        lb += sum(ideal[k][assign[k]] for k in range(j))
        # Marginal caching cost grows with the EC's load and flow count, so
        # the marginal at the current state bounds each later addition.
        w = self.w
        now = [count[e] / (1 - load[e] / w[e]) for e in range(self.E)]
        quick = lb
        for k in range(j, self.K):
            sk = self.s[k]
            cheapest = np.inf
            for e in self.allowed[k]:
                new = load[e] + sk
                if new < self.cap_w[e]:
                    v = alpha * ((count[e] + 1) / (1 - new / w[e]) - now[e]) + ideal[k][e]
                    if v < cheapest:
                        cheapest = v
            if cheapest == np.inf:
                return np.inf
            quick += cheapest
        if quick > self.best_j + TIE_TOL or self.K - j < 2:
            return quick
        return lb + self.slot_bound(j, load, count)

    def slot_bound(self, j, load, count, ideal=None, matching=False):
        """Joint bound for flows ``j..K-1`` via a flow-to-slot matching.

        List the flows each EC receives by decreasing size (ties by index).
        The flow in slot ``i`` then follows ``i`` flows that rank above it,
        so its marginal caching cost is priced as if those were the ``i``
        smallest flows ranking above it.  Every completion maps onto a
        matching that costs no more, hence the cheapest matching is a valid
        lower bound.
        """
        m = self.K - j
        s = self.s_arr[j:]
        order = np.lexsort((np.arange(m), -s))
        rank = np.empty(m, dtype=int)
        rank[order] = np.arange(m)
        csum = np.concatenate(([0.0], np.cumsum(s[order])))
        slot = np.arange(m)[None, :]
        r = rank[:, None]
        ok = slot <= r  # (m, m): flow k can occupy slot i
        before = csum[r] - csum[np.maximum(r - slot, 0)]
        load = np.asarray(load)[None, :, None] + before[:, None, :]  # (m, E, m)
        n = np.asarray(count)[None, :, None] + slot[:, None, :]
        w = self.w_arr[None, :, None]
        after = load + s[:, None, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            price = self.alpha * ((n + 1) / (1 - after / w) - n / (1 - load / w))
        price += (self.ideal_mu_arr if ideal is None else ideal)[j:, :, None]
        bad = ~ok[:, None, :] | (after >= self.capw_arr[None, :, None]) \
            | ~self.allowed_arr[j:, :, None]
        price[bad] = _BIG
        price = price.reshape(m, -1)
        rows, cols = linear_sum_assignment(price)
        total = float(price[rows, cols].sum())
        total = np.inf if total >= _BIG else total
        if matching:
            ecs = np.empty(m, dtype=int)
            ecs[rows] = cols // m
            return total, ecs
        return total

    # -- link-capacity multipliers ----------------------------------------------

    def tune_multipliers(self, iterations=80):
        """Subgradient ascent on the root bound over link multipliers ``mu``.

        For ``mu >= 0`` the link rows are moved into the objective as
        ``mu_l * (load_l - c_l)``, which never exceeds zero on a feasible
        routing.  Each flow then routes on its own: the cheapest AR subset
        under the link prices.  Any ``mu`` gives a valid bound; the loop only
        searches for a tight one.
        """
        if self.ignore_links or self.L == 0 or self.A > 12 or not np.isfinite(self.best_j):
            return
        inst, topo = self.inst, self.inst.topology
        A, E, K = self.A, self.E, self.K
        subsets = ((np.arange(1 << A)[:, None] >> np.arange(A)) & 1).astype(bool)  # (S, A)
        inc = topo.incidence.astype(bool).transpose(1, 2, 0)  # (A, E, L)
        uses = np.any(subsets[:, :, None, None] & inc[None], axis=1)  # (S, E, L)
        N = topo.hop_matrix
        gain = self.beta * inst.p[:, :, None] * (topo.n_backhaul - N)[None]  # (K, A, E)
        gain = np.maximum(gain, 0.0)
        fixed = np.array(self.base)[:, None, None] - np.einsum("sa,kae->kse", subsets, gain)
        b = np.array(self.b)
        cap = np.array(self.cap_c)
        uses_f = uses.astype(float)

        def evaluate(mu):
            price = fixed + b[:, None, None] * np.einsum("sel,l->se", uses_f, mu)[None]
            best_s = price.argmin(axis=1)  # (K, E)
            table = np.take_along_axis(price, best_s[:, None, :], axis=1)[:, 0, :]
            value, ecs = self.slot_bound(0, [0.0] * E, [0] * E, ideal=table, matching=True)
            value -= float(mu @ cap)
            chosen = best_s[np.arange(K), ecs]
            load = (b[:, None] * uses[chosen, ecs, :]).sum(axis=0)
            return value, table, load - cap

        mu = np.zeros(self.L)
        best_val, best_table, grad = evaluate(mu)
        best_mu = mu
        theta, stall = 1.0, 0
        for _ in range(iterations):
            gap = self.best_j - best_val
            norm = float(grad @ grad)
            if gap <= TIE_TOL or norm == 0 or not np.isfinite(best_val):
                break
            mu = np.maximum(0.0, mu + theta * gap / norm * grad)
            val, table, grad = evaluate(mu)
            if val > best_val + 1e-12:
                best_val, best_table, best_mu, stall = val, table, mu, 0
            else:
                stall += 1
                if stall >= 5:
                    theta, stall = theta / 2, 0
                    if theta < 1e-3:
                        break
        self.ideal_mu_arr = best_table
        self.ideal_mu = best_table.tolist()
        self.mu_const = -float(best_mu @ cap)

    def loads(self, assign):
        load = [0.0] * self.E
        count = [0] * self.E
        for k, e in enumerate(assign):
            load[e] += self.s[k]
            count[e] += 1
        return load, count

    def warm_start(self, hints=()):
        """Incumbent from a greedy pass and the given placements, then polished."""
        load = [0.0] * self.E
        count = [0] * self.E
        assign = []
        for k in range(self.K):
            choice, value = None, np.inf
            for e in self.allowed[k]:
                new = load[e] + self.s[k]
                if new < self.cap_w[e]:
                    v = self.alpha / (1 - new / self.w[e]) + self.ideal[k][e]
                    if v < value:
                        choice, value = e, v
            if choice is None:
                break
            assign.append(choice)
            load[choice] += self.s[k]
            count[choice] += 1
        for cand in [assign] + [list(h) for h in hints]:
            if len(cand) != self.K:
                continue
            load, count = self.loads(cand)
            if all(load[e] < self.cap_w[e] for e in range(self.E)):
                self.offer(cand, load, count)
        self.polish()

    def polish(self):
        """Local search from the incumbent: single-flow moves and pair swaps."""
        K = self.K
        improved = True
        while improved and self.best is not None:
            improved = False
            start = list(self.best[0])
            candidates = []
            for k in range(K):
                candidates += [((k, e),) for e in self.allowed[k] if e != start[k]]
            for k1 in range(K):
                for k2 in range(k1 + 1, K):
                    e1, e2 = start[k1], start[k2]
                    if e1 != e2 and e2 in self.allowed[k1] and e1 in self.allowed[k2]:
                        candidates.append(((k1, e2), (k2, e1)))
            for moves in candidates:
                trial = list(start)
                for k, e in moves:
                    trial[k] = e
                ld, ct = self.loads(trial)
                if any(ld[e] >= self.cap_w[e] for e in range(self.E)):
                    continue
                before = self.best_j
                self.offer(trial, ld, ct)
                if self.best_j < before - TIE_TOL:
                    improved = True
                    break

    def run(self, hints=()):
        w = self.w
        order = [sorted(ecs, key=lambda e: (-w[e], e)) for ecs in self.allowed]
        load = [0.0] * self.E
        count = [0] * self.E
        assign = [0] * self.K
        self.warm_start(hints)
        self.tune_multipliers()

        def dfs(j):
            self.nodes += 1
            if j == self.K:
                self.offer(assign, load, count)
                return
            if self.lower_bound(j, load, count, assign) > self.best_j + TIE_TOL:
                return
            sk = self.s[j]
            for e in order[j]:
                if load[e] + sk >= self.cap_w[e]:
                    continue
                assign[j] = e
                load[e] += sk
                count[e] += 1
                dfs(j + 1)
                load[e] -= sk
                count[e] -= 1

        dfs(0)
        return self.best


def _solve(instance, allowed):
    # The problem without link capacities is usually much easier and its
    # optimal placement is a strong first incumbent for the real search.
    relaxed = _Search(instance, allowed, ignore_links=True)
    hint = relaxed.run()
    search = _Search(instance, allowed)
    best = search.run(hints=[hint[0]] if hint else ())
    return best, relaxed.nodes + search.nodes


def _build_solution(instance, assign, served):
    K, A, E, _ = instance.shape
    x = np.zeros((K, E), dtype=np.int8)
    x[np.arange(K), list(assign)] = 1
    z = np.zeros((K, A, E), dtype=np.int8)
    for k, a in served:
        z[k, a, assign[k]] = 1
    routing = Routing(z, routing_links(instance, z))
    return evaluate(instance, x, routing)


def solve_exact(instance, mask=None):
    """Globally optimal placement and routing.

    With ``mask`` (K x E, 0/1) placements are restricted to unmasked
    entries.  If that restricted problem has no feasible solution the mask
    is dropped and the full problem solved instead (``fallback_used``).
    An infeasible full problem yields ``status="infeasible"`` and no
    solution.
    """
    K, A, E, L = instance.shape
    nodes = 0
    fallback = False
    variable_count = count_variables(instance, mask)
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != (K, E):
            raise ValueError(f"mask must have shape {(K, E)}, got {mask.shape}")
        allowed = [[e for e in range(E) if mask[k, e]] for k in range(K)]
        best = None
        if all(allowed):
            best, nodes = _solve(instance, allowed)
        else:
            log.info("mask leaves a flow without candidate ECs")
        if best is None:
            log.info("masked problem infeasible; solving without mask")
            fallback = True
            variable_count = count_variables(instance)
    if mask is None or fallback:
        best, extra = _solve(instance, [list(range(E))] * K)
        nodes += extra
    if best is None:
        return SolveReport(None, nodes, fallback, variable_count, status="infeasible")
    solution = _build_solution(instance, *best)
    if not solution.feasible:  # pragma: no cover - guards the search invariants
        raise AssertionError(f"solver produced an infeasible solution: {solution.violations}")
    return SolveReport(solution, nodes, fallback, variable_count)
