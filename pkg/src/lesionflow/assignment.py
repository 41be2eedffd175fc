"""Geodesic-cost lesion assignment with per-item dummy nodes.

Every lesion may match at most one lesion on the other side or its own
dummy at cost ``beta``.  The problem is solved exactly as a square linear
assignment of size ``n0 + n1``.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geodesic import DEFAULT_STEINER, geodesic_matrix, pair_distances

logger = logging.getLogger(__name__)


class ConstraintError(AssertionError):
    """A matching violates the one-partner-per-lesion constraints."""


@dataclass
class AssignConfig:
    """``alpha`` scales geodesic millimeters; ``beta`` is the dummy cost per unmatched lesion."""

    alpha: float = 1.0
    beta: float = 20.0
    steiner: int = DEFAULT_STEINER
    cutoff: bool = True

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.beta >= 0:
            raise ValueError("beta must be nonnegative")
        if int(self.steiner) < 0:
            raise ValueError("steiner level must be >= 0")

    @property
    def forced_dummy_cost(self):
        """Cost substituted for unreachable pairs; above ``2 beta`` so the pair never matches."""
        return 2.0 * self.beta + 1.0

    def to_dict(self):
        return asdict(self)


class MatchMatrix:
    """Binary (n0+1, n1+1) matching with the dummy at row and column 0."""

    def __init__(self, entries, src_ids, tgt_ids):
        self.entries = np.asarray(entries, dtype=np.uint8)
        self.src_ids = [str(i) for i in src_ids]
        self.tgt_ids = [str(i) for i in tgt_ids]
        if self.entries.shape != (len(self.src_ids) + 1, len(self.tgt_ids) + 1):
            raise ValueError("entries shape does not match the id lists")
        check_constraints(self.entries)

    @classmethod
    def from_pairs(cls, src_ids, tgt_ids, pairs):
        si = {s: i + 1 for i, s in enumerate(src_ids)}
        ti = {t: j + 1 for j, t in enumerate(tgt_ids)}
        E = np.zeros((len(src_ids) + 1, len(tgt_ids) + 1), dtype=np.uint8)
        for s, t in pairs:
            E[si[s], ti[t]] = 1
        E[1:, 0] = E[1:, 1:].sum(axis=1) == 0
        E[0, 1:] = E[1:, 1:].sum(axis=0) == 0
        return cls(E, src_ids, tgt_ids)

    @property
    def real(self):
        return self.entries[1:, 1:]

    def pairs(self):
        r, c = np.nonzero(self.real)
        return [(self.src_ids[i], self.tgt_ids[j]) for i, j in zip(r, c)]

    def unmatched_src(self):
        return [self.src_ids[i] for i in np.nonzero(self.entries[1:, 0])[0]]

    def unmatched_tgt(self):
        return [self.tgt_ids[j] for j in np.nonzero(self.entries[0, 1:])[0]]

    def __eq__(self, other):
        return (isinstance(other, MatchMatrix) and self.src_ids == other.src_ids
                and self.tgt_ids == other.tgt_ids and np.array_equal(self.entries, other.entries))


def check_constraints(entries):
    """Each real row and column has exactly one 1 (a real partner or the dummy)."""
    E = np.asarray(entries)
    if E.size == 0:
        return
    if not np.all((E == 0) | (E == 1)):
        raise ConstraintError("matching entries must be binary")
    if np.any(E[1:, :].sum(axis=1) != 1):
        raise ConstraintError("a source lesion is not assigned exactly once")
    if np.any(E[:, 1:].sum(axis=0) != 1):
        raise ConstraintError("a target lesion is not assigned exactly once")


def build_cost(src_tri, src_bary, tgt_tri, tgt_bary, template, cfg):
    """Real-to-real cost ``alpha * geodesic`` on the template, shape (n0, n1).

    With ``cfg.cutoff`` the searches stop at ``2 beta / alpha``; pairs
    beyond that can never be matched and get :attr:`AssignConfig.forced_dummy_cost`,
    as do pairs on disconnected components (with a warning).
    """
    src_tri = np.asarray(src_tri, dtype=np.int64).reshape(-1)
    tgt_tri = np.asarray(tgt_tri, dtype=np.int64).reshape(-1)
    if len(src_tri) == 0 or len(tgt_tri) == 0:
        return np.zeros((len(src_tri), len(tgt_tri)))
    limit = 2.0 * cfg.beta / cfg.alpha if cfg.cutoff else None
    D = geodesic_matrix(template, src_tri, src_bary, tgt_tri, tgt_bary, limit=limit, steiner=cfg.steiner)
    cost = cfg.alpha * D
    far = ~np.isfinite(cost)
    if far.any():
        if limit is None:
            logger.warning("%d lesion pairs are on disconnected components; forcing dummy matches",
                           int(far.sum()))
        cost[far] = cfg.forced_dummy_cost
    return cost


def padded_cost(cost, beta):
    """Square (n0+n1) matrix: real block, per-item dummies at ``beta`` on the diagonals, zero dummy block."""
    cost = np.asarray(cost, dtype=np.float64)
    n0, n1 = cost.shape
    P = np.zeros((n0 + n1, n1 + n0))
    P[:n0, :n1] = cost
    src_dummy = np.full((n0, n0), np.inf)
    np.fill_diagonal(src_dummy, beta)
    tgt_dummy = np.full((n1, n1), np.inf)
    np.fill_diagonal(tgt_dummy, beta)
    P[:n0, n1:] = src_dummy
    P[n0:, :n1] = tgt_dummy
    return P


def solve_assignment(cost, cfg, src_ids=None, tgt_ids=None):
    """Globally optimal matching for a finite real-to-real ``cost`` matrix.

    Returns
    -------
    MatchMatrix
        Constraint-checked; ``objective`` attribute holds the minimized value.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite (use build_cost to cap unreachable pairs)")
    n0, n1 = cost.shape
    src_ids = [f"{i}" for i in range(n0)] if src_ids is None else list(src_ids)
    tgt_ids = [f"{j}" for j in range(n1)] if tgt_ids is None else list(tgt_ids)
    E = np.zeros((n0 + 1, n1 + 1), dtype=np.uint8)
    if n0 + n1:
        rows, cols = linear_sum_assignment(padded_cost(cost, cfg.beta))
        for r, c in zip(rows, cols):
            if r < n0 and c < n1:
                E[r + 1, c + 1] = 1
            elif r < n0:
                E[r + 1, 0] = 1
            elif c < n1:
                E[0, c + 1] = 1
    check_constraints(E)
    out = MatchMatrix(E, src_ids, tgt_ids)
    out.objective = objective(E, cost, cfg.beta)
    return out


def objective(entries, cost, beta):
    """Matched real costs plus ``beta`` per unmatched lesion on either side."""
    E = np.asarray(entries)
    real = E[1:, 1:].astype(bool)
    return float(np.sum(np.asarray(cost)[real]) + beta * (int(E[1:, 0].sum()) + int(E[0, 1:].sum())))


def match_report(pi, src_tri, src_bary, tgt_tri, tgt_bary, template, steiner=DEFAULT_STEINER):
    """Structured result: matched pairs with template geodesic residuals and unmatched locations."""
    src_tri = np.asarray(src_tri, dtype=np.int64).reshape(-1)
    tgt_tri = np.asarray(tgt_tri, dtype=np.int64).reshape(-1)
    src_bary = np.asarray(src_bary, dtype=np.float64).reshape(-1, 3)
    tgt_bary = np.asarray(tgt_bary, dtype=np.float64).reshape(-1, 3)
    r, c = np.nonzero(pi.real)
    d = pair_distances(template, src_tri[r], src_bary[r], tgt_tri[c], tgt_bary[c], steiner=steiner)
    matches = [{"src": pi.src_ids[i], "tgt": pi.tgt_ids[j], "geodesic_mm": float(dd)}
               for i, j, dd in zip(r, c, d)]

    def unmatched(ids, flags, tri, bary):
        idx = np.nonzero(flags)[0]
        pos = template.embed_many(tri[idx], bary[idx])
        return [{"id": ids[i], "template_tri": int(tri[i]), "bary": [float(x) for x in bary[i]],
                 "pos_mm": [float(x) for x in p]} for i, p in zip(idx, pos)]

    return {"matches": matches,
            "unmatched_src": unmatched(pi.src_ids, pi.entries[1:, 0], src_tri, src_bary),
            "unmatched_tgt": unmatched(pi.tgt_ids, pi.entries[0, 1:], tgt_tri, tgt_bary)}


def report_to_matrix(report, src_ids, tgt_ids):
    return MatchMatrix.from_pairs(src_ids, tgt_ids, [(m["src"], m["tgt"]) for m in report["matches"]])
