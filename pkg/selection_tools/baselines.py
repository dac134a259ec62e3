'''Baseline prioritizers. Every score is "higher = more suspicious".'''
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist
from sklearn.linear_model import LogisticRegression
from sklearn.neighbors import KernelDensity, NearestNeighbors

from .errors import ConfigException, DataException, NumericException
from .evaluation import Ranking
from .models import TrainConfig, train

logger = logging.getLogger(__name__)

PROBABILITY_TOLERANCE = 1e-9
MDSA_REGULARIZATION = 1e-6
DATIS_SENTINEL = np.inf

PROBABILITY_METHODS = ('gini', 'vanilla', 'margin')
SURPRISE_METHODS = ('dsa', 'lsa', 'mdsa')
NEIGHBOR_METHODS = ('nns', 'datis')
BASELINE_METHODS = PROBABILITY_METHODS + SURPRISE_METHODS + NEIGHBOR_METHODS + ('ensemble',)


def _check_probabilities(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim < 1 or p.shape[-1] < 1 or np.any(p < -PROBABILITY_TOLERANCE):
        raise DataException("not a probability vector: {}".format(p))
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > PROBABILITY_TOLERANCE):
        raise DataException("probabilities must sum to 1")
    return p


def gini(p):
    '''1 - sum p_i^2'''
    p = _check_probabilities(p)
    return 1.0 - np.sum(p * p, axis=-1)


def vanilla(p):
    '''1 - max p_i'''
    p = _check_probabilities(p)
    return 1.0 - np.max(p, axis=-1)


def margin_suspiciousness(p):
    '''1 - (p_m - p_n), m and n the most and second-most probable classes.'''
    p = _check_probabilities(p)
    if p.shape[-1] < 2:
        raise ConfigException("margin needs at least two classes")
    top = np.sort(p, axis=-1)[..., ::-1]
    return 1.0 - (top[..., 0] - top[..., 1])


UNCERTAINTY = {
    'gini': gini,
    'vanilla': vanilla,
    'margin': margin_suspiciousness,
}


@dataclass
class SAReference:
    '''Activation traces of correctly classified training inputs, grouped by class,
    with per-class means, regularized covariances and KDE bandwidths.'''
    traces: dict
    means: dict = field(default_factory=dict)
    covariances: dict = field(default_factory=dict)
    bandwidths: dict = field(default_factory=dict)

    def __post_init__(self):
        self.traces = {int(c): np.atleast_2d(np.asarray(t, dtype=np.float64)) for c, t in self.traces.items()}
        self._inverse = {}
        self._kde = {}

    @classmethod
    def fit(cls, traces, labels, predicted=None, regularization=MDSA_REGULARIZATION):
        traces = np.asarray(traces, dtype=np.float64)
        labels = np.asarray(labels)
        keep = np.ones(len(labels), dtype=bool) if predicted is None else np.asarray(predicted) == labels
        grouped, means, covariances, bandwidths = {}, {}, {}, {}
        for c in np.unique(labels[keep]):
            members = traces[keep & (labels == c)]
            grouped[int(c)] = members
            means[int(c)] = members.mean(axis=0)
            if len(members) > 1:
                covariances[int(c)] = np.cov(members, rowvar=False).reshape(members.shape[1], -1) \
                    + regularization * np.eye(members.shape[1])
                bandwidths[int(c)] = scott_bandwidth(members)
        return cls(grouped, means, covariances, bandwidths)

    def class_traces(self, c):
        if c not in self.traces or len(self.traces[c]) == 0:
            raise DataException("no reference traces for class {}".format(c))
        return self.traces[c]

    def inverse_covariance(self, c):
        if c not in self._inverse:
            if c not in self.covariances:
                raise DataException("no covariance for class {}".format(c))
            try:
                self._inverse[c] = linalg.inv(self.covariances[c])
            except (linalg.LinAlgError, ValueError) as err:
                raise NumericException("covariance of class {} is not invertible: {}".format(c, err))
        return self._inverse[c]

    def density(self, c):
        if c not in self._kde:
            members = self.class_traces(c)
            if len(members) < 2:
                raise DataException("LSA needs at least two traces for class {}".format(c))
            h = self.bandwidths.get(c) or scott_bandwidth(members)
            if not np.isfinite(h) or h <= 0:
                raise NumericException("singular KDE bandwidth {} for class {} ({} traces, spread {:.3g})".format(
                    h, c, len(members), float(np.ptp(members))))
            self._kde[c] = KernelDensity(kernel='gaussian', bandwidth=h).fit(members)
        return self._kde[c]


def scott_bandwidth(members):
    '''Isotropic Scott's-rule bandwidth: n^(-1/(d+4)) times the mean per-dimension std.'''
    n, dim = members.shape
    return float(n ** (-1.0 / (dim + 4)) * np.mean(np.std(members, axis=0, ddof=1)))


def dsa(trace, predicted_class, ref):
    '''Distance to the nearest same-class reference trace x_a, divided by the distance
    from x_a to the nearest reference trace of any other class.'''
    trace = np.asarray(trace, dtype=np.float64).reshape(1, -1)
    same = ref.class_traces(predicted_class)
    others = [t for c, t in ref.traces.items() if c != predicted_class and len(t)]
    if not others:
        raise DataException("DSA needs reference traces of a class other than {}".format(predicted_class))
    others = np.vstack(others)

    to_same = cdist(trace, same)[0]
    nearest = int(np.argmin(to_same))
    dist_a = to_same[nearest]
    dist_b = cdist(same[nearest:nearest + 1], others)[0].min()
    if dist_b == 0:
        return np.inf if dist_a > 0 else 0.0
    return float(dist_a / dist_b)


def lsa(trace, predicted_class, ref):
    '''Negative log Gaussian-KDE density of the trace under its predicted class.'''
    trace = np.asarray(trace, dtype=np.float64).reshape(1, -1)
    return float(-ref.density(predicted_class).score_samples(trace)[0])


def mdsa(trace, predicted_class, ref):
    '''Mahalanobis distance to the predicted class mean.'''
    trace = np.asarray(trace, dtype=np.float64).reshape(-1)
    if predicted_class not in ref.means:
        raise DataException("no mean for class {}".format(predicted_class))
    delta = trace - ref.means[predicted_class]
    value = float(delta @ ref.inverse_covariance(predicted_class) @ delta)
    return float(np.sqrt(max(value, 0.0)))


def nns_smooth(p_m, neighbors, alpha):
    '''alpha * p_M(x) + (1 - alpha) * mean of the neighbours' distributions.'''
    if not 0 <= alpha <= 1:
        raise ConfigException("alpha must be in [0, 1], got {}".format(alpha))
    neighbors = np.asarray(neighbors, dtype=np.float64)
    if neighbors.size == 0:
        raise DataException("NNS needs at least one neighbour")
    p_m = _check_probabilities(p_m)
    return alpha * p_m + (1.0 - alpha) * _check_probabilities(neighbors).reshape(-1, len(p_m)).mean(axis=0)


def datis(z_x, predicted_class, neighbor_latents, neighbor_labels, tau, num_classes):
    '''Ratio of the strongest training support for a class other than the prediction to
    the support for the prediction. Support p*_c weights each of the k nearest training
    neighbours by exp(-||z(x) - z(t)||^2 / tau). Returns +inf when p*_m is 0.'''
    if tau <= 0:
        raise ConfigException("tau must be > 0, got {}".format(tau))
    if num_classes < 2:
        raise ConfigException("DATIS needs at least two classes")
    neighbor_latents = np.atleast_2d(np.asarray(neighbor_latents, dtype=np.float64))
    neighbor_labels = np.asarray(neighbor_labels, dtype=int).reshape(-1)
    if len(neighbor_labels) < 1:
        raise DataException("DATIS needs at least one neighbour")

    sq = np.sum((neighbor_latents - np.asarray(z_x, dtype=np.float64).reshape(1, -1)) ** 2, axis=1)
    return _datis_from_distances(sq, neighbor_labels, predicted_class, tau, num_classes)


def _datis_from_distances(sq, labels, predicted_class, tau, num_classes):
    weights = np.exp(-(sq - sq.min()) / tau)
    support = np.bincount(labels, weights=weights, minlength=num_classes) / weights.sum()
    p_m = support[predicted_class]
    p_n = np.max(np.delete(support, predicted_class))
    if p_m == 0:
        return DATIS_SENTINEL
    return float(p_n / p_m)


@dataclass(frozen=True)
class NeighborIndex:
    references: np.ndarray
    metric: str = 'euclidean'
    k: int = 10

    def __post_init__(self):
        if self.metric not in ('euclidean', 'cosine'):
            raise ConfigException("unknown metric '{}'".format(self.metric))
        if not 1 <= self.k <= len(self.references):
            raise ConfigException("k={} with {} reference vectors".format(self.k, len(self.references)))

    def query(self, vectors, exclude_self=False):
        '''Indices and distances of the k nearest references, exact brute force.'''
        extra = 1 if exclude_self else 0
        k = min(self.k + extra, len(self.references))
        search = NearestNeighbors(n_neighbors=k, algorithm='brute', metric=self.metric).fit(self.references)
        distances, indices = search.kneighbors(vectors)
        if not exclude_self:
            return indices, distances
        kept_idx, kept_dist = [], []
        for row, (idx, dist) in enumerate(zip(indices, distances)):
            keep = idx != row
            if keep.all():
                keep[-1] = False
            kept_idx.append(idx[keep][:self.k])
            kept_dist.append(dist[keep][:self.k])
        return np.array(kept_idx), np.array(kept_dist)


def ensemble_variation(mut_predicted, member_predictions):
    '''Number of ensemble members whose prediction differs from the model under test.'''
    member_predictions = np.atleast_2d(member_predictions)
    return np.sum(member_predictions != np.asarray(mut_predicted)[None, :], axis=0)


def ensemble_metamodel_baseline(mut, target_train, target_test, n_ensembles=5, seed=0,
                                members=None, fit_data=None, cfg=None, metric='gini', subject=''):
    '''Deep-ensemble Meta-model baseline.

    Trains `n_ensembles` models of the architecture of `mut` (the model under test)
    with distinct seeds, continued from `members` when given, else from scratch, on
    `fit_data` (default target_train). A logistic regression on (uncertainty of `mut`,
    ensemble variation) is then fitted over target_train, labeled by whether `mut`
    misclassifies each input. Its predicted misclassification probability ranks
    target_test.
    '''
    cfg = cfg or TrainConfig(seed=seed)
    fit_data = fit_data or target_train
    ensemble = []
    for i in range(n_ensembles):
        start = members[i] if members is not None else None
        ensemble.append(train(mut.layers, fit_data, cfg.with_seed(seed + 1000 * (i + 1)), init=start))

    def features(data):
        out = mut.outputs(data.inputs)
        votes = np.stack([m.outputs(data.inputs).predicted for m in ensemble])
        return np.column_stack([UNCERTAINTY[metric](out.probs), ensemble_variation(out.predicted, votes)]), out

    x_train, out_train = features(target_train)
    y_train = (out_train.predicted != target_train.labels).astype(int)
    if len(np.unique(y_train)) < 2:
        raise DataException("ensemble meta-model needs both correct and misclassified training inputs")
    logistic = LogisticRegression(random_state=seed).fit(x_train, y_train)

    x_test, _ = features(target_test)
    scores = logistic.predict_proba(x_test)[:, 1]
    return Ranking.from_scores(target_test.ids, scores, 'ensemble', subject)


@dataclass
class RankingInputs:
    '''Everything the score-based baselines may need for one subject.

    test_*: outputs of the model under test on the unlabeled target test set.
    train_*: its traces, ground truth and predictions on the labeled training reference.
    '''
    test_ids: np.ndarray
    test_probs: np.ndarray
    test_predicted: np.ndarray
    test_traces: np.ndarray
    train_traces: Optional[np.ndarray] = None
    train_labels: Optional[np.ndarray] = None
    train_predicted: Optional[np.ndarray] = None
    num_classes: int = 0
    subject: str = ''
    nns_k: int = 10
    nns_alpha: float = 0.5
    nns_metric: str = 'euclidean'
    base_metric: str = 'gini'
    datis_k: int = 10
    datis_tau: float = 1.0
    sa_reference: Optional[SAReference] = None
    ensemble: Optional[dict] = None

    def reference(self):
        if self.sa_reference is None:
            if self.train_traces is None:
                raise DataException("surprise adequacy needs training traces")
            self.sa_reference = SAReference.fit(self.train_traces, self.train_labels, self.train_predicted)
        return self.sa_reference


def _nns_scores(inputs):
    index = NeighborIndex(inputs.test_traces, inputs.nns_metric, min(inputs.nns_k, len(inputs.test_ids) - 1))
    neighbors, _ = index.query(inputs.test_traces, exclude_self=True)
    base = UNCERTAINTY[inputs.base_metric]
    return np.array([base(nns_smooth(p, inputs.test_probs[nb], inputs.nns_alpha))
                     for p, nb in zip(inputs.test_probs, neighbors)])


def _datis_scores(inputs):
    if inputs.train_traces is None:
        raise DataException("DATIS needs labeled training latents")
    index = NeighborIndex(inputs.train_traces, 'euclidean', min(inputs.datis_k, len(inputs.train_traces)))
    neighbors, distances = index.query(inputs.test_traces)
    return np.array([_datis_from_distances(dist ** 2, inputs.train_labels[nb], int(m), inputs.datis_tau,
                                           inputs.num_classes)
                     for nb, dist, m in zip(neighbors, distances, inputs.test_predicted)])


def _surprise_scores(score_fn, inputs):
    ref = inputs.reference()
    return np.array([score_fn(t, int(c), ref) for t, c in zip(inputs.test_traces, inputs.test_predicted)])


def scores_for(method, inputs):
    if method in UNCERTAINTY:
        return UNCERTAINTY[method](inputs.test_probs)
    if method == 'dsa':
        return _surprise_scores(dsa, inputs)
    if method == 'lsa':
        return _surprise_scores(lsa, inputs)
    if method == 'mdsa':
        return _surprise_scores(mdsa, inputs)
    if method == 'nns':
        return _nns_scores(inputs)
    if method == 'datis':
        return _datis_scores(inputs)
    raise ConfigException("unknown baseline '{}'".format(method))


def rank_with(method, inputs):
    '''Ranks the test inputs with one baseline: descending score, ties by ascending id.'''
    if method == 'ensemble':
        if not inputs.ensemble:
            raise DataException("the ensemble baseline needs its models and datasets")
        return ensemble_metamodel_baseline(subject=inputs.subject, metric=inputs.base_metric, **inputs.ensemble)
    return Ranking.from_scores(inputs.test_ids, scores_for(method, inputs), method, inputs.subject)
