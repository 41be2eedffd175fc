"""Evaluation: map quality, matching accuracy, precision/recall/F1, dropout harness."""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .geodesic import DEFAULT_STEINER, pair_distances

logger = logging.getLogger(__name__)

SUCCESS_THRESHOLD_MM = 10.0


@dataclass
class GroundTruth:
    """Annotated pairs ``(src_id, tgt_id)`` plus ids known to have no partner."""

    pairs: list
    unpaired_src: list = field(default_factory=list)
    unpaired_tgt: list = field(default_factory=list)

    def __post_init__(self):
        self.pairs = [(str(s), str(t)) for s, t in self.pairs]
        src = [s for s, _ in self.pairs] + [str(s) for s in self.unpaired_src]
        tgt = [t for _, t in self.pairs] + [str(t) for t in self.unpaired_tgt]
        if len(set(src)) != len(src) or len(set(tgt)) != len(tgt):
            raise ValueError("ground truth ids must be unique per side and pairs one-to-one")
        self.unpaired_src = [str(s) for s in self.unpaired_src]
        self.unpaired_tgt = [str(t) for t in self.unpaired_tgt]

    def restrict(self, src_ids, tgt_ids):
        """Ground truth among surviving ids; pairs with a removed partner become unpaired."""
        s_ok, t_ok = set(src_ids), set(tgt_ids)
        pairs = [(s, t) for s, t in self.pairs if s in s_ok and t in t_ok]
        ps, pt = {s for s, _ in pairs}, {t for _, t in pairs}
        return GroundTruth(pairs, [s for s in src_ids if s not in ps], [t for t in tgt_ids if t not in pt])

    def to_json(self):
        return {"pairs": [list(p) for p in self.pairs], "unpaired_src": list(self.unpaired_src),
                "unpaired_tgt": list(self.unpaired_tgt)}

    @classmethod
    def from_json(cls, data):
        return cls([tuple(p) for p in data["pairs"]], data.get("unpaired_src", []),
                   data.get("unpaired_tgt", []))


@dataclass
class EvalReport:
    d_lp_mean: float = float("nan")
    d_lp_std: float = float("nan")
    d_sw_mean: float = float("nan")
    d_sw_std: float = float("nan")
    success_rate: dict = field(default_factory=dict)
    matching_accuracy: float = float("nan")
    precision: float = float("nan")
    recall: float = float("nan")
    f1: float = float("nan")
    k_pred: int = 0
    k_gt: int = 0
    flags: list = field(default_factory=list)
    coarse_d_lp_mean: float = float("nan")
    coarse_success_rate: dict = field(default_factory=dict)
    distances: list = field(default_factory=list)
    coarse_distances: list = field(default_factory=list)

    def success_rate_at(self, threshold):
        return self.success_rate[_tkey(threshold)]

    def to_json(self):
        return asdict(self)


def _tkey(t):
    return f"{float(t):g}"


def pair_geodesics(gt, src_ids, src_tri, src_bary, tgt_ids, tgt_tri, tgt_bary, template,
                   steiner=DEFAULT_STEINER):
    """Template geodesic between the mapped members of every ground-truth pair."""
    si = {s: i for i, s in enumerate(src_ids)}
    ti = {t: j for j, t in enumerate(tgt_ids)}
    try:
        a = np.array([si[s] for s, _ in gt.pairs], dtype=np.int64)
        b = np.array([ti[t] for _, t in gt.pairs], dtype=np.int64)
    except KeyError as exc:
        raise KeyError(f"ground-truth id {exc.args[0]!r} missing from the mapped lesions") from None
    src_tri, tgt_tri = np.asarray(src_tri), np.asarray(tgt_tri)
    src_bary, tgt_bary = np.asarray(src_bary).reshape(-1, 3), np.asarray(tgt_bary).reshape(-1, 3)
    return pair_distances(template, src_tri[a], src_bary[a], tgt_tri[b], tgt_bary[b], steiner=steiner)


def success_rate(distances, threshold=SUCCESS_THRESHOLD_MM):
    d = np.asarray(distances, dtype=np.float64)
    return float(np.mean(d < threshold)) if d.size else float("nan")


def map_quality(gt, src_ids, src_tri, src_bary, tgt_ids, tgt_tri, tgt_bary, template,
                thresholds=(SUCCESS_THRESHOLD_MM,), steiner=DEFAULT_STEINER):
    """D_LP statistics and success rates for one subject.

    Returns
    -------
    dict
        ``distances``, ``d_lp_mean``, ``d_lp_std`` (population) and
        ``success_rate`` keyed by threshold.
    """
    d = pair_geodesics(gt, src_ids, src_tri, src_bary, tgt_ids, tgt_tri, tgt_bary, template, steiner)
    return {"distances": d,
            "d_lp_mean": float(d.mean()) if d.size else float("nan"),
            "d_lp_std": float(d.std()) if d.size else float("nan"),
            "success_rate": {_tkey(t): success_rate(d, t) for t in thresholds}}


def aggregate_subjects(per_subject_distances, thresholds=(SUCCESS_THRESHOLD_MM,)):
    """Pooled D_LP and subject-wise D_SW (mean of subject means, population std)."""
    pooled = np.concatenate([np.asarray(d, dtype=np.float64) for d in per_subject_distances])
    means = np.array([np.mean(d) for d in per_subject_distances if len(d)])
    return EvalReport(d_lp_mean=float(pooled.mean()), d_lp_std=float(pooled.std()),
                      d_sw_mean=float(means.mean()), d_sw_std=float(means.std()),
                      success_rate={_tkey(t): success_rate(pooled, t) for t in thresholds})


def matching_accuracy(pi, gt):
    """Fraction of ground-truth pairs reproduced by the matching."""
    if not gt.pairs:
        return float("nan")
    pred = set(pi.pairs())
    return sum(1 for p in gt.pairs if p in pred) / len(gt.pairs)


def prf1(pred, truth):
    """Precision, recall and F1 over real-to-real entries.

    Returns ``(precision, recall, f1, flags)``; precision is 0 and flagged
    when nothing is predicted.
    """
    P = np.asarray(pred.real if hasattr(pred, "real") else pred)
    G = np.asarray(truth.real if hasattr(truth, "real") else truth)
    if P.shape != G.shape:
        raise ValueError("prediction and ground truth shapes differ")
    hits = int(np.sum(P.astype(np.int64) * G.astype(np.int64)))
    k_pred, k_gt = int(P.sum()), int(G.sum())
    flags = []
    if k_pred == 0:
        precision = 0.0
        flags.append("no_predictions")
    else:
        precision = hits / k_pred
    if k_gt == 0:
        recall = 0.0
        flags.append("no_ground_truth_pairs")
    else:
        recall = hits / k_gt
    # harmonic mean written over the counts so rational cases are exact
    f1 = 0.0 if precision * recall == 0 else 2 * hits / (k_pred + k_gt)
    return precision, recall, f1, flags


def gt_matrix(gt, src_ids, tgt_ids):
    from .assignment import MatchMatrix

    return MatchMatrix.from_pairs(src_ids, tgt_ids, gt.pairs)


def dropout_ids(ids, p_percent, rng):
    """Remove floor(p% n) ids uniformly without replacement; survivors keep input order."""
    if not 0 <= p_percent < 100:
        raise ValueError("dropout percentage must be in [0, 100)")
    n = len(ids)
    k = int(np.floor(p_percent / 100.0 * n + 1e-9))
    removed = set(rng.choice(n, size=k, replace=False).tolist()) if k else set()
    return [x for i, x in enumerate(ids) if i not in removed]


def dropout_harness(fixture, p_percent, seed, pipeline_cfg=None, coarse=None):
    """Drop lesions independently per side, run the pipeline, and score it.

    ``coarse`` may carry precomputed coarse maps for the fixture (they do
    not depend on the lesions).
    """
    from .pipeline import run_fixture

    rng = np.random.default_rng(seed)
    keep_src = dropout_ids(fixture.lesions_src.ids, p_percent, rng)
    keep_tgt = dropout_ids(fixture.lesions_tgt.ids, p_percent, rng)
    result = run_fixture(fixture, pipeline_cfg, keep_src=keep_src, keep_tgt=keep_tgt, coarse=coarse)
    return result.evaluation
