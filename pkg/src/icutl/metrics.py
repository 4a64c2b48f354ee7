"""Discrimination and calibration metrics: AUC, bootstrap CIs, risk deciles,
the Hosmer-Lemeshow goodness-of-fit test, and the chi-square survival function
it needs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SingleClass, TooFew


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and equal length")
    if len(np.unique(y)) < 2:
        raise SingleClass("both classes must be present")
    return s, y


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks, ties sharing the average rank of their group."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores, labels) -> float:
    """P(score+ > score-) + 0.5 P(score+ = score-), the Mann-Whitney statistic."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    ranks = _average_ranks(s)
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def bootstrap_auc_ci(scores, labels, n_resamples: int = 1000, seed: int = 0):
    """2.5/97.5 percentile interval of AUC over resamples with replacement.

    A resample missing one class is redrawn up to 10 times, then skipped.
    """
    s, y = _as_arrays(scores, labels)
    rng = np.random.default_rng(seed)
    n = len(s)
    stats = []
    for _ in range(n_resamples):
        for _attempt in range(10):
            idx = rng.integers(0, n, size=n)
            y_b = y[idx]
            if 0 < y_b.sum() < n:
                stats.append(auc(s[idx], y_b))
                break
    lo, hi = np.percentile(stats, [2.5, 97.5])
    return float(lo), float(hi)


def _contiguous_bins(n: int, g: int):
    """g bin sizes summing to n: the first n % g bins take one extra element."""
    base, extra = divmod(n, g)
    return [base + 1 if i < extra else base for i in range(g)]


def calibration_deciles(probs, labels, g: int = 10):
    """Sort by predicted probability and split into g contiguous equal-count
    bins; each reports (mean predicted, observed event rate, count)."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(p) < g:
        raise TooFew(f"need at least {g} samples, got {len(p)}")
    order = np.argsort(p, kind="mergesort")
    p, y = p[order], y[order]
    bins = []
    start = 0
    for size in _contiguous_bins(len(p), g):
        stop = start + size
        bins.append((float(p[start:stop].mean()), float(y[start:stop].mean()), size))
        start = stop
    return bins


def hosmer_lemeshow(probs, labels, g: int = 10):
    """(chi2, dof, p) over g equal-count risk bins.

    chi2 sums (O1-E1)^2/E1 + (O0-E0)^2/E0 per bin, E1 the sum of predicted
    probabilities. Bins with a zero expected count are merged toward the
    center bin (dof follows the merged bin count, floored at 1).
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(p) < g:
        raise TooFew(f"need at least {g} samples, got {len(p)}")
    order = np.argsort(p, kind="mergesort")
    p, y = p[order], y[order]
    cells = []
    start = 0
    for size in _contiguous_bins(len(p), g):
        stop = start + size
        cells.append([float(p[start:stop].sum()), int(y[start:stop].sum()), size])
        start = stop

    def degenerate(c):
        e1, _, count = c
        return e1 <= 0.0 or count - e1 <= 0.0

    while len(cells) > 1 and any(degenerate(c) for c in cells):
        i = next(i for i, c in enumerate(cells) if degenerate(c))
        j = i + 1 if i < (len(cells) - 1) / 2 else i - 1
        j = min(max(j, 0), len(cells) - 1)
        if j == i:
            break
        keep, drop = min(i, j), max(i, j)
        cells[keep] = [a + b for a, b in zip(cells[keep], cells[drop])]
        del cells[drop]

    chi2 = 0.0
    for e1, o1, count in cells:
        e0 = count - e1
        o0 = count - o1
        chi2 += (o1 - e1) ** 2 / e1 + (o0 - e0) ** 2 / e0
    dof = max(len(cells) - 2, 1)
    return float(chi2), dof, chi2_sf(chi2, dof)


def chi2_sf(x: float, k: int) -> float:
    """Upper tail of the chi-square distribution: Q(k/2, x/2).

    Regularized upper incomplete gamma, by power series for x < k + 1 and by
    Lentz's continued fraction otherwise.
    """
    if x < 0 or k < 1:
        raise DomainError(f"require x >= 0 and k >= 1, got x={x}, k={k}")
    a = 0.5 * k
    z = 0.5 * float(x)
    if z == 0.0:
        return 1.0
    if z < a + 1.0:
        # P(a,z) series: z^a e^-z / Gamma(a) * sum z^n / (a (a+1) ... (a+n))
        term = 1.0 / a
        total = term
        denom = a
        for _ in range(10000):
            denom += 1.0
            term *= z / denom
            total += term
            if abs(term) < abs(total) * 1e-16:
                break
        p_lower = total * math.exp(-z + a * math.log(z) - math.lgamma(a))
        return min(max(1.0 - p_lower, 0.0), 1.0)
    # Lentz continued fraction for Q(a,z)
    tiny = 1e-300
    b = z + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    q = h * math.exp(-z + a * math.log(z) - math.lgamma(a))
    return min(max(q, 0.0), 1.0)


@dataclass
class HorizonEvaluation:
    t_hours: int
    n_patients: int
    n_events: int
    auc: float
    auc_ci_lo: float
    auc_ci_hi: float
    hl_chi2: float
    hl_dof: int
    hl_p: float
    calibration_bins: list  # [(mean_pred, obs_rate, count)] x 10

    def to_json_dict(self):
        return {
            "t_hours": self.t_hours,
            "n_patients": self.n_patients,
            "n_events": self.n_events,
            "auc": self.auc,
            "auc_ci_lo": self.auc_ci_lo,
            "auc_ci_hi": self.auc_ci_hi,
            "hl_chi2": self.hl_chi2,
            "hl_dof": self.hl_dof,
            "hl_p": self.hl_p,
            "calibration_bins": [
                {"mean_pred": m, "obs_rate": o, "count": c} for m, o, c in self.calibration_bins
            ],
        }


@dataclass
class EvaluationReport:
    horizons: list = field(default_factory=list)  # HorizonEvaluation, ascending t
    skipped: list = field(default_factory=list)  # [(t_hours, reason)]

    def to_json_dict(self):
        return {
            "horizons": [h.to_json_dict() for h in self.horizons],
            "skipped": [{"t_hours": t, "reason": r} for t, r in self.skipped],
        }

    @classmethod
    def from_json_dict(cls, body: dict) -> "EvaluationReport":
        report = cls()
        for h in body.get("horizons", []):
            report.horizons.append(
                HorizonEvaluation(
                    t_hours=int(h["t_hours"]),
                    n_patients=int(h["n_patients"]),
                    n_events=int(h["n_events"]),
                    auc=float(h["auc"]),
                    auc_ci_lo=float(h["auc_ci_lo"]),
                    auc_ci_hi=float(h["auc_ci_hi"]),
                    hl_chi2=float(h["hl_chi2"]),
                    hl_dof=int(h["hl_dof"]),
                    hl_p=float(h["hl_p"]),
                    calibration_bins=[
                        (float(b["mean_pred"]), float(b["obs_rate"]), int(b["count"]))
                        for b in h["calibration_bins"]
                    ],
                )
            )
        report.skipped = [(int(s["t_hours"]), str(s["reason"])) for s in body.get("skipped", [])]
        return report

    def to_csv_text(self) -> str:
        lines = ["t_hours,n,events,auc,lo,hi,hl_chi2,hl_p"]
        for h in self.horizons:
            lines.append(
                f"{h.t_hours},{h.n_patients},{h.n_events},{h.auc:.6f},"
                f"{h.auc_ci_lo:.6f},{h.auc_ci_hi:.6f},{h.hl_chi2:.6f},{h.hl_p:.6g}"
            )
        return "\n".join(lines) + "\n"

    def to_table_text(self) -> str:
        header = f"{'t (h)':>6} {'n':>6} {'events':>7} {'AUC':>7} {'95% CI':>17} {'HL chi2':>9} {'HL p':>9}"
        lines = [header, "-" * len(header)]
        for h in self.horizons:
            ci = f"[{h.auc_ci_lo:.3f}, {h.auc_ci_hi:.3f}]"
            lines.append(
                f"{h.t_hours:>6} {h.n_patients:>6} {h.n_events:>7} {h.auc:>7.3f} {ci:>17} "
                f"{h.hl_chi2:>9.3f} {h.hl_p:>9.4f}"
            )
        for t, reason in self.skipped:
            lines.append(f"{t:>6} skipped: {reason}")
        return "\n".join(lines) + "\n"
