"""Linearized MILP model written in CPLEX LP text format.

Variable names are fixed: ``x_k_e``, ``y_k_l``, ``z_k_a_e``, ``chi_k_e`` and
``t_e`` with zero-based indices.  The caching cost ``sum x_ke * t_e`` is
linearized through ``chi_ke = x_ke * t_e`` with big-M rows, and
``t_e = 1/(1 - u_e)`` becomes the linear row ``t_e - sum_k q_ke chi_ke = 1``.
"""

from __future__ import annotations

import re

import numpy as np

from .cost import SLACK
from .netmodel import utilization

# Big-M for the chi rows; caps t_e, i.e. utilization at 1 - 1/CHI_BIG_M.
CHI_BIG_M = 1e3
# Lower bound encoding the strict positivity of t_e.
T_FLOOR = 1e-9
_TERMS_PER_LINE = 6

_SECTIONS = ("minimize", "maximize", "subject to", "st", "s.t.", "such that",
             "bounds", "bound", "binary", "binaries", "bin", "general", "generals",
             "end")
_TOKEN = re.compile(r"(\d*\.?\d+(?:[eE][-+]?\d+)?)|([A-Za-z_][\w.]*)")


def _num(v):
    return repr(float(v))


def _expr(terms):
    """``[(coef, name), ...]`` as wrapped LP text, zero coefficients dropped."""
    parts = []
    for coef, name in terms:
        if coef == 0:
            continue
        sign = "-" if coef < 0 else "+"
        mag = abs(coef)
        parts.append(f"{sign} {name}" if mag == 1 else f"{sign} {_num(mag)} {name}")
    if not parts:
        return "0 " + terms[0][1] if terms else "0"
    if parts[0].startswith("+ "):
        parts[0] = parts[0][2:]
    lines = [" ".join(parts[i:i + _TERMS_PER_LINE]) for i in range(0, len(parts), _TERMS_PER_LINE)]
    return "\n   ".join(lines)


def export_milp(instance, mask=None, big_m=None, chi_big_m=CHI_BIG_M):
    """LP-format text of the linearized placement model.

    Parameters
    ----------
    instance : Instance
    mask : array_like, optional
        ``(K, E)`` 0/1 candidate mask.  Every zero appends a row
        ``x_k_e <= 0``.
    big_m : float, optional
        Constant for the link-usage rows; defaults to ``1 + |A|``, the
        largest possible number of served paths of one flow over one link.
    chi_big_m : float
        Constant for the ``chi`` product rows.
    """
    K, A, E, L = instance.shape
    topo = instance.topology
    N, NT = topo.hop_matrix, topo.n_backhaul
    B = topo.incidence
    if big_m is None:
        big_m = 1 + A
    if big_m < A:
        raise ValueError(f"big_m={big_m} is below |A|={A}; routing rows would cut solutions")
    view = utilization(instance)
    x = [[f"x_{k}_{e}" for e in range(E)] for k in range(K)]
    y = [[f"y_{k}_{l}" for l in range(L)] for k in range(K)]
    z = [[[f"z_{k}_{a}_{e}" for e in range(E)] for a in range(A)] for k in range(K)]
    chi = [[f"chi_{k}_{e}" for e in range(E)] for k in range(K)]
    t = [f"t_{e}" for e in range(E)]

    out = ["\\ linearized edge caching placement model",
           f"\\ flows={K} ars={A} ecs={E} links={L}", "Minimize"]
    obj = [(instance.alpha, chi[k][e]) for k in range(K) for e in range(E)]
    obj += [(instance.beta * float(instance.p[k, a]) * (int(N[a, e]) - NT), z[k][a][e])
            for k in range(K) for a in range(A) for e in range(E)]
    const = instance.beta * K * NT
    out.append(" obj: " + _expr(obj) + (f" + {_num(const)}" if const else ""))

    out.append("Subject To")

    def row(name, terms, sense, rhs):
        out.append(f" {name}: {_expr(terms)} {sense} {_num(rhs)}")

    for k in range(K):
        row(f"one_ec_{k}", [(1, x[k][e]) for e in range(E)], "=", 1)
    for e in range(E):
        row(f"storage_{e}", [(float(instance.s[k]), x[k][e]) for k in range(K)], "<=",
            float(instance.w[e]) * (1 - SLACK))
    for l in range(L):
        row(f"bandwidth_{l}", [(float(instance.b[k]), y[k][l]) for k in range(K)], "<=",
            float(instance.c[l]) * (1 - SLACK))
    for k in range(K):
        for a in range(A):
            row(f"unique_{k}_{a}", [(1, z[k][a][e]) for e in range(E)], "<=", 1)
    for k in range(K):
        for a in range(A):
            for e in range(E):
                row(f"serve_{k}_{a}_{e}", [(1, z[k][a][e]), (-1, x[k][e])], "<=", 0)
    for k in range(K):
        for l in range(L):
            on = [(-1, z[k][a][e]) for a in range(A) for e in range(E) if B[l, a, e]]
            row(f"on_path_{k}_{l}", [(1, y[k][l])] + on, "<=", 0)
            row(f"uses_link_{k}_{l}", [(-c, n) for c, n in on] + [(-big_m, y[k][l])], "<=", 0)
    for k in range(K):
        for e in range(E):
            row(f"chi_le_t_{k}_{e}", [(1, chi[k][e]), (-1, t[e])], "<=", 0)
            row(f"chi_le_mx_{k}_{e}", [(1, chi[k][e]), (-chi_big_m, x[k][e])], "<=", 0)
            row(f"chi_ge_t_{k}_{e}", [(1, chi[k][e]), (-1, t[e]), (-chi_big_m, x[k][e])],
                ">=", -chi_big_m)
    for e in range(E):
        row(f"t_def_{e}", [(1, t[e])] + [(-float(view.q[k, e]), chi[k][e]) for k in range(K)],
            "=", 1)
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != (K, E):
            raise ValueError(f"mask must have shape {(K, E)}, got {mask.shape}")
        for k, e in np.argwhere(mask == 0):
            out.append(f" h_{k}_{e}: {x[k][e]} <= 0")

    out.append("Bounds")
    for e in range(E):
        out.append(f" t_{e} >= {_num(T_FLOOR)}")
    out.append("Binary")
    names = [n for row_ in x for n in row_] + [n for row_ in y for n in row_] + \
        [n for k in range(K) for a in range(A) for n in z[k][a]]
    for i in range(0, len(names), 10):
        out.append(" " + " ".join(names[i:i + 10]))
    out.append("End")
    return "\n".join(out) + "\n"


def lp_variables(text):
    """Variable names appearing in an LP-format model, split by kind.

    Returns ``(names, binaries)`` as sorted lists.  Row labels, section
    keywords, comments and numbers are skipped.
    """
    names, binaries = set(), set()
    section = None
    for raw in text.splitlines():
        line = raw.split("\\", 1)[0].strip()
        if not line:
            continue
        low = line.lower()
        if low in _SECTIONS:
            section = low
            continue
        if re.match(r"^[A-Za-z_][\w.]*\s*:", line):
            line = line.split(":", 1)[1]
        tokens = {name for _, name in _TOKEN.findall(line) if name}
        tokens -= {"inf", "infinity", "free"}
        names |= tokens
        if section in ("binary", "binaries", "bin"):
            binaries |= tokens
    return sorted(names), sorted(binaries)


def fixed_by_mask(text):
    """Placement variables pinned to zero by ``h_k_e`` rows."""
    return sorted(re.findall(r"^\s*h_\d+_\d+:\s*(x_\d+_\d+)\s*<=\s*0", text, re.M))


def effective_variable_count(text):
    """Variables left free once masked placements are removed.

    A pinned ``x_k_e`` also pins ``chi_k_e`` and every ``z_k_*_e``, which
    matches the masked count of :func:`solver.count_variables`.
    """
    names, _ = lp_variables(text)
    gone = set()
    for xn in fixed_by_mask(text):
        _, k, e = xn.split("_")
        gone.add(xn)
        gone.add(f"chi_{k}_{e}")
        gone |= {n for n in names if re.fullmatch(rf"z_{k}_\d+_{e}", n)}
    return len(names) - len(gone)
