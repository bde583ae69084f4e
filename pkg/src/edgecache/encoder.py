"""Grayscale feature images of caching instances.

Row ``k`` of an image describes flow ``k``: its attachment probabilities
(one column per AR), its storage share of every EC and its bandwidth share
of every link.  Values live in [0, 1]; a resource that cannot take any more
load has its whole column set to 1.0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .netmodel import utilization

FORMAT_VERSION = 1
SUB_HEIGHT = 5


@dataclass(frozen=True, eq=False)
class FeatureImage:
    """``pixels`` is ``(rows, |A| + |E| + |L|)`` laid out as ``[p | q | r]``."""

    pixels: np.ndarray
    num_ars: int
    num_ecs: int
    num_links: int
    excluded_ecs: frozenset = frozenset()
    excluded_links: frozenset = frozenset()
    padded: tuple = ()  # one flag per row; empty means no padding rows

    def __post_init__(self):
        px = np.array(self.pixels, dtype=float)
        if px.ndim != 2 or px.shape[1] != self.num_ars + self.num_ecs + self.num_links:
            raise ValueError(f"pixel matrix of shape {px.shape} does not match the column layout")
        if np.any(px < 0) or np.any(px > 1):
            raise ValueError("pixels must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "excluded_ecs", frozenset(int(e) for e in self.excluded_ecs))
        object.__setattr__(self, "excluded_links", frozenset(int(l) for l in self.excluded_links))
        flags = tuple(bool(f) for f in self.padded) or (False,) * px.shape[0]
        if len(flags) != px.shape[0]:
            raise ValueError("need one padding flag per row")
        object.__setattr__(self, "padded", flags)

    @property
    def shape(self):
        return self.pixels.shape

    @property
    def p_block(self):
        return self.pixels[:, :self.num_ars]

    @property
    def q_block(self):
        return self.pixels[:, self.num_ars:self.num_ars + self.num_ecs]

    @property
    def r_block(self):
        return self.pixels[:, self.num_ars + self.num_ecs:]

    @property
    def real_rows(self):
        return np.flatnonzero(~np.array(self.padded, dtype=bool))

    def __eq__(self, other):
        if not isinstance(other, FeatureImage):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "num_ars": self.num_ars,
            "num_ecs": self.num_ecs,
            "num_links": self.num_links,
            "pixels": self.pixels.tolist(),
            "excluded_ecs": sorted(self.excluded_ecs),
            "excluded_links": sorted(self.excluded_links),
            "padded": list(self.padded),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported format_version {d.get('format_version')!r}")
        return cls(np.array(d["pixels"], dtype=float), d["num_ars"], d["num_ecs"],
                   d["num_links"], frozenset(d["excluded_ecs"]),
                   frozenset(d["excluded_links"]), tuple(d["padded"]))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_pgm(self):
        """Binary 8-bit PGM (P5); gray level ``round(pixel * 255)``."""
        h, w = self.shape
        # np.rint rounds halves to even, same as the builtin round
        body = np.rint(self.pixels * 255).astype(np.uint8).tobytes()
        return f"P5\n{w} {h}\n255\n".encode("ascii") + body


def read_pgm(data):
    """Gray levels of a P5 file written by :meth:`FeatureImage.to_pgm`."""
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or parts[2] != b"255":
        raise ValueError("not an 8-bit binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def _layout(instance, p, q, r, excluded_ecs=(), excluded_links=()):
    K, A, E, L = instance.shape
    q = np.clip(q, 0.0, 1.0)
    r = np.clip(r, 0.0, 1.0)
    q[:, sorted(excluded_ecs)] = 1.0
    r[:, sorted(excluded_links)] = 1.0
    return FeatureImage(np.hstack([np.clip(p, 0.0, 1.0), q, r]), A, E, L,
                        frozenset(excluded_ecs), frozenset(excluded_links))


def encode(instance):
    """Feature image of ``instance`` with no prior assignments."""
    view = utilization(instance)
    return _layout(instance, instance.p, view.q.copy(), view.r.copy())


def partition(image, sub_height=SUB_HEIGHT):
    """Split into ``ceil(rows / sub_height)`` images of exactly ``sub_height`` rows.

    The last piece is topped up with all-zero rows flagged as padding.
    """
    rows = image.shape[0]
    if rows < 1:
        raise ValueError("image has no rows")
    out = []
    for i in range(math.ceil(rows / sub_height)):
        block = image.pixels[i * sub_height:(i + 1) * sub_height]
        flags = list(image.padded[i * sub_height:(i + 1) * sub_height])
        extra = sub_height - block.shape[0]
        if extra:
            block = np.vstack([block, np.zeros((extra, block.shape[1]))])
            flags += [True] * extra
        out.append(FeatureImage(block, image.num_ars, image.num_ecs, image.num_links,
                                image.excluded_ecs, image.excluded_links, tuple(flags)))
    return out


def join(images):
    """Stack the real (non-padding) rows of ``images`` back into one image."""
    first = images[0]
    rows = [im.pixels[im.real_rows] for im in images]
    return FeatureImage(np.vstack(rows), first.num_ars, first.num_ecs, first.num_links,
                        first.excluded_ecs, first.excluded_links)


def residual_shares(instance, x, y):
    """Storage and bandwidth shares left after the flows placed in ``x``/``y``.

    Returns ``(q, r, excluded_ecs, excluded_links)``.  ``q[k, e]`` is
    ``s_k / (w_e - stored_e)``; an EC whose residual is zero or negative is
    excluded and its column reads 1.0.  Links are handled the same way.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    res_w = instance.w - instance.s @ x
    res_c = instance.c - instance.b @ y
    bad_e = res_w <= 0
    bad_l = res_c <= 0
    with np.errstate(divide="ignore"):
        q = np.divide.outer(instance.s, np.where(bad_e, 1.0, res_w))
        r = np.divide.outer(instance.b, np.where(bad_l, 1.0, res_c))
    q[:, bad_e] = 1.0
    r[:, bad_l] = 1.0
    return q, r, frozenset(np.flatnonzero(bad_e).tolist()), frozenset(np.flatnonzero(bad_l).tolist())


def apply_assignment_update(instance, prior_assignments, prior_routings):
    """Re-encode ``instance`` given flows that already hold resources.

    Parameters
    ----------
    prior_assignments : array_like
        ``(K, E)`` placement of the flows handled so far; rows of flows not
        yet handled are zero.
    prior_routings : array_like or cost.Routing
        ``(K, L)`` link usage of those flows (or a Routing holding it).

    Rows of flows that are already placed keep their original encoding;
    the other rows see residual capacities, clamped to [0, 1].
    """
    y = getattr(prior_routings, "y", prior_routings)
    x = np.asarray(prior_assignments)
    q, r, bad_e, bad_l = residual_shares(instance, x, y)
    view = utilization(instance)
    placed = np.asarray(x).any(axis=1)
    q[placed] = view.q[placed]
    r[placed] = view.r[placed]
    return _layout(instance, instance.p, q, r, bad_e, bad_l)
