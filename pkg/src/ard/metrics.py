"""Instance-level clustering/classification metrics.

B-cubed precision/recall/F1, V-measure (homogeneity/completeness/V), and the
adjusted Rand index, plus an exhaustive pair-enumeration ARI used as an
independent cross-check in tests. All functions treat labels as opaque.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, fields


@dataclass(frozen=True)
class Labeling:
    """Predicted and gold labels for the same instance ids."""

    pred: dict
    gold: dict

    def __post_init__(self):
        if set(self.pred) != set(self.gold):
            raise ValueError("predicted and gold labelings cover different ids")
        if not self.pred:
            raise ValueError("empty labeling")

    @classmethod
    def from_sequences(cls, ids, pred, gold) -> "Labeling":
        ids = list(ids)
        if not (len(ids) == len(pred) == len(gold)):
            raise ValueError("ids/pred/gold length mismatch")
        return cls(dict(zip(ids, pred)), dict(zip(ids, gold)))

    def swapped(self) -> "Labeling":
        return Labeling(pred=dict(self.gold), gold=dict(self.pred))


@dataclass(frozen=True)
class MetricReport:
    b3_precision: float
    b3_recall: float
    b3_f1: float
    homogeneity: float
    completeness: float
    v_measure: float
    ari: float

    COLUMNS = (
        "b3_precision",
        "b3_recall",
        "b3_f1",
        "homogeneity",
        "completeness",
        "v_measure",
        "ari",
    )

    @classmethod
    def from_labeling(cls, l: Labeling) -> "MetricReport":
        p, r, f = bcubed(l)
        h, c, v = v_measure(l)
        return cls(p, r, f, h, c, v, ari(l))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


def _harmonic(a: float, b: float) -> float:
    return 0.0 if a + b == 0 else 2.0 * a * b / (a + b)


def bcubed(l: Labeling) -> tuple[float, float, float]:
    """Per-instance cluster precision/recall averaged over instances."""
    pred_sizes = Counter(l.pred.values())
    gold_sizes = Counter(l.gold.values())
    joint = Counter((l.pred[i], l.gold[i]) for i in l.pred)
    p_sum = r_sum = 0.0
    for i in l.pred:
        inter = joint[(l.pred[i], l.gold[i])]
        p_sum += inter / pred_sizes[l.pred[i]]
        r_sum += inter / gold_sizes[l.gold[i]]
    n = len(l.pred)
    precision, recall = p_sum / n, r_sum / n
    return precision, recall, _harmonic(precision, recall)


def _entropy(counts, n: int) -> float:
    return -sum((c / n) * math.log(c / n) for c in counts if c)


def _conditional_entropy(joint: Counter, cond_sizes: Counter, n: int) -> float:
    # H(target | cond), natural log, empirical distributions.
    h = 0.0
    for (cond_label, _), c in joint.items():
        h -= (c / n) * math.log(c / cond_sizes[cond_label])
    return h


def v_measure(l: Labeling) -> tuple[float, float, float]:
    """Homogeneity, completeness, and their harmonic mean.

    A zero-entropy denominator (single gold class or single predicted
    cluster) yields a component score of 1.
    """
    n = len(l.pred)
    pred_sizes = Counter(l.pred.values())
    gold_sizes = Counter(l.gold.values())
    h_gold = _entropy(gold_sizes.values(), n)
    h_pred = _entropy(pred_sizes.values(), n)
    joint_pg = Counter((l.pred[i], l.gold[i]) for i in l.pred)
    joint_gp = Counter((l.gold[i], l.pred[i]) for i in l.pred)
    hom = 1.0 if h_gold == 0 else 1.0 - _conditional_entropy(joint_pg, pred_sizes, n) / h_gold
    comp = 1.0 if h_pred == 0 else 1.0 - _conditional_entropy(joint_gp, gold_sizes, n) / h_pred
    return hom, comp, _harmonic(hom, comp)


def _pairs(x: int) -> float:
    return x * (x - 1) / 2.0


def ari(l: Labeling) -> float:
    """Adjusted Rand index from the contingency table of the two partitions."""
    n = len(l.pred)
    if n < 2:
        raise ValueError("ARI needs at least 2 instances")
    joint = Counter((l.pred[i], l.gold[i]) for i in l.pred)
    index = sum(_pairs(c) for c in joint.values())
    sum_pred = sum(_pairs(c) for c in Counter(l.pred.values()).values())
    sum_gold = sum(_pairs(c) for c in Counter(l.gold.values()).values())
    expected = sum_pred * sum_gold / _pairs(n)
    maximum = (sum_pred + sum_gold) / 2.0
    if maximum == expected:
        return 1.0
    return (index - expected) / (maximum - expected)


def pair_oracle(l: Labeling) -> float:
    """ARI recomputed by enumerating every unordered instance pair.

    Quadratic and intentionally free of the contingency-table shortcut;
    restricted to small labelings.
    """
    ids = sorted(l.pred, key=str)
    n = len(ids)
    if n > 12:
        raise ValueError(f"pair_oracle is capped at 12 instances, got {n}")
    if n < 2:
        raise ValueError("ARI needs at least 2 instances")
    both = pred_only = gold_only = 0
    total = 0
    for a in range(n):
        for b in range(a + 1, n):
            i, j = ids[a], ids[b]
            same_pred = l.pred[i] == l.pred[j]
            same_gold = l.gold[i] == l.gold[j]
            total += 1
            if same_pred and same_gold:
                both += 1
            elif same_pred:
                pred_only += 1
            elif same_gold:
                gold_only += 1
    sum_pred = both + pred_only
    sum_gold = both + gold_only
    expected = sum_pred * sum_gold / total
    maximum = (sum_pred + sum_gold) / 2.0
    if maximum == expected:
        return 1.0
    return (both - expected) / (maximum - expected)
