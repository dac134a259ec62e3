'''Selection metrics: TRC, APFD, improvement percentage, budget curves, the
Wilcoxon signed-rank test, and summaries over many curves.'''
import logging
import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import norm, rankdata

from .errors import ConfigException, DataException, DegenerateException, UndefinedMetricException

logger = logging.getLogger(__name__)

DEFAULT_BUDGETS = (0.01, 0.03, 0.05, 0.10, 0.15, 0.20, 0.30, 0.40, 0.50, 0.60, 0.70, 0.80, 0.90, 1.00)
EXACT_LIMIT = 20

WilcoxonResult = namedtuple('WilcoxonResult', ['statistic', 'pvalue'])


@dataclass(frozen=True)
class Ranking:
    ids: np.ndarray
    scores: np.ndarray
    method: str = ''
    subject: str = ''

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        scores = np.asarray(self.scores, dtype=np.float64)
        if ids.shape != scores.shape:
            raise DataException("{} ids for {} scores".format(len(ids), len(scores)))
        if len(np.unique(ids)) != len(ids):
            raise DataException("ranking ids must be unique")
        if np.any(np.diff(scores) > 0):
            raise DataException("ranking scores must be non-increasing")
        object.__setattr__(self, 'ids', ids)
        object.__setattr__(self, 'scores', scores)

    @classmethod
    def from_scores(cls, ids, scores, method='', subject=''):
        '''Descending score; ties broken by ascending id.'''
        ids = np.asarray(ids, dtype=np.int64)
        scores = np.asarray(scores, dtype=np.float64)
        if ids.shape != scores.shape:
            raise DataException("{} ids for {} scores".format(len(ids), len(scores)))
        if np.any(np.isnan(scores)):
            raise DataException("{} produced NaN scores".format(method or 'ranking'))
        order = np.lexsort((ids, -scores))
        return cls(ids[order], scores[order], method, subject)

    def __len__(self):
        return len(self.ids)

    @property
    def entries(self):
        return list(zip(self.ids.tolist(), self.scores.tolist()))

    def rank_of(self):
        return {int(i): r for r, i in enumerate(self.ids)}

    def to_frame(self):
        return pd.DataFrame({
            'rank': np.arange(1, len(self) + 1),
            'input_id': self.ids,
            'score': self.scores,
            'method': self.method,
            'subject': self.subject,
        })


@dataclass(frozen=True)
class MisclassificationOracle:
    misclassified: dict

    @classmethod
    def from_predictions(cls, ids, predicted, labels):
        bits = (np.asarray(predicted) != np.asarray(labels)).astype(int)
        return cls({int(i): int(b) for i, b in zip(ids, bits)})

    @property
    def total(self):
        return sum(self.misclassified.values())

    def bits(self, ranking):
        try:
            return np.array([self.misclassified[int(i)] for i in ranking.ids], dtype=int)
        except KeyError as err:
            raise DataException("ranking holds id {} unknown to the oracle".format(err))


@dataclass(frozen=True)
class TrcCurve:
    points: tuple

    def to_frame(self):
        return pd.DataFrame(list(self.points), columns=['budget_fraction', 'budget_count', 'trc', 'apfd'])


def budget_count(fraction, size):
    '''max(1, round-half-up(fraction * size))'''
    return max(1, int(math.floor(fraction * size + 0.5)))


def _check_budget(ranking, b):
    if not 1 <= b <= len(ranking):
        raise ConfigException("budget {} outside [1, {}]".format(b, len(ranking)))


def trc(r, oracle, b):
    '''Misclassified inputs among the first b ranked, over min(b, all misclassified).'''
    _check_budget(r, b)
    total = oracle.total
    if total == 0:
        raise UndefinedMetricException("TRC is undefined when the test set has no misclassified inputs")
    return float(oracle.bits(r)[:b].sum()) / min(b, total)


def apfd(r, oracle, b):
    '''1 - sum(o_i) / (b * k) + 1 / (2b), o_i the 1-based positions of the k
    misclassified inputs among the first b.'''
    _check_budget(r, b)
    positions = np.flatnonzero(oracle.bits(r)[:b]) + 1
    if len(positions) == 0:
        raise UndefinedMetricException("APFD is undefined with no misclassified input in the first {}".format(b))
    return 1.0 - positions.sum() / (b * len(positions)) + 1.0 / (2 * b)


def improvement(trc_candidate, trc_reference):
    '''Percentage of the reference's remaining headroom closed by the candidate; 0 when
    the reference is already perfect.'''
    if trc_reference >= 1.0:
        return 0.0
    return (trc_candidate - trc_reference) / (1.0 - trc_reference) * 100.0


def trc_curve(r, oracle, fractions=DEFAULT_BUDGETS):
    points = []
    for fraction in fractions:
        if not 0 < fraction <= 1:
            raise ConfigException("budget fraction {} outside (0, 1]".format(fraction))
        b = budget_count(fraction, len(r))
        try:
            a = apfd(r, oracle, b)
        except UndefinedMetricException:
            a = float('nan')
        points.append((float(fraction), b, trc(r, oracle, b), a))
    return TrcCurve(tuple(points))


def _exact_upper_tail(ranks, w_plus):
    '''P(W+ >= w_plus) and P(W+ <= w_plus) under random signs, via a count DP over doubled ranks.'''
    doubled = np.rint(np.asarray(ranks) * 2).astype(int)
    counts = np.zeros(doubled.sum() + 1)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:len(counts) - r]
        counts = counts + shifted
    counts /= counts.sum()
    target = int(round(2 * w_plus))
    return counts[target:].sum(), counts[:target + 1].sum()


def wilcoxon_signed_rank(pairs, alternative='two-sided'):
    '''Wilcoxon signed-rank test on paired samples (a, b), differences a - b.

    Zero differences are dropped and tied |differences| share average ranks. Up to
    20 non-zero differences the p-value is exact (sign enumeration); above that a
    normal approximation with tie and continuity corrections is used.
    returns:
        WilcoxonResult(statistic, pvalue). statistic is min(W+, W-) for the two-sided
        test and W+ otherwise.
    '''
    if alternative not in ('two-sided', 'greater', 'less'):
        raise ConfigException("unknown alternative '{}'".format(alternative))
    d = np.array([a - b for a, b in pairs], dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise DegenerateException("all paired differences are zero")

    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())

    if n <= EXACT_LIMIT:
        p_ge, p_le = _exact_upper_tail(ranks, w_plus)
    else:
        mean = n * (n + 1) / 4.0
        _, ties = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(ties ** 3 - ties) / 48.0
        sd = math.sqrt(var)
        p_ge = norm.sf((w_plus - mean - 0.5) / sd)
        p_le = norm.cdf((w_plus - mean + 0.5) / sd)

    if alternative == 'greater':
        return WilcoxonResult(w_plus, float(min(1.0, p_ge)))
    if alternative == 'less':
        return WilcoxonResult(w_plus, float(min(1.0, p_le)))
    return WilcoxonResult(min(w_plus, w_minus), float(min(1.0, 2 * min(p_ge, p_le))))


def curve_rows(r, oracle, fractions, corruption='', severity=0):
    '''TRC-curve CSV rows for one ranking.'''
    frame = trc_curve(r, oracle, fractions).to_frame()
    frame.insert(0, 'subject', r.subject)
    frame.insert(1, 'method', r.method)
    frame.insert(2, 'severity', severity)
    frame.insert(3, 'corruption', corruption)
    frame.insert(4, 'budget_pct', (frame['budget_fraction'] * 100).round(6))
    return frame.drop(columns=['budget_fraction'])


def summarize(curves, candidate='metasel'):
    '''Per (subject, budget): TRC per method, the best method other than `candidate`
    and the candidate's improvement over it; plus per (method, budget) TRC medians
    and quartiles.
    args:
        curves: DataFrame with the TRC curve CSV columns.
    returns:
        dict with DataFrames 'summary' and 'distribution'.
    '''
    methods = sorted(curves['method'].unique())
    if len(methods) < 2:
        raise ConfigException("summarize needs at least two methods, got {}".format(methods))
    if candidate not in methods:
        raise ConfigException("candidate method '{}' was not evaluated".format(candidate))
    baselines = [m for m in methods if m != candidate]

    keys = ['subject', 'corruption', 'severity', 'budget_pct']
    wide = curves.pivot_table(index=keys, columns='method', values='trc', aggfunc='first').reset_index()
    wide.columns.name = None

    best = wide[baselines].idxmax(axis=1)
    best_trc = wide[baselines].max(axis=1)
    summary = wide[keys].copy()
    for method in methods:
        summary['trc_' + method] = wide[method]
    summary['second_best_method'] = best
    summary['improvement_pct'] = [improvement(c, b) for c, b in zip(wide[candidate], best_trc)]
    summary = summary.sort_values(keys).reset_index(drop=True)

    grouped = curves.groupby(['method', 'budget_pct'])['trc']
    distribution = pd.DataFrame({
        'median': grouped.median(),
        'q1': grouped.quantile(0.25),
        'q3': grouped.quantile(0.75),
        'count': grouped.count(),
    }).reset_index()
    return {'summary': summary, 'distribution': distribution}
