import logging
import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .datagen import Role, split
from .errors import (ConfigException, DataException, DimensionException,
                     FormatException, UnsupportedVersionException)
from .tensor import (GradTape, Tensor, add, backward, concat, conv, matmul,
                     relu, reshape, sgd_step, softmax, softmax_cross_entropy)

logger = logging.getLogger(__name__)

MAGIC = b'MSEL'
VERSION = 1


class LayerKind(IntEnum):
    DENSE = 1
    RELU = 2
    FLATTEN = 3
    CONV1D = 4
    CONV2D = 5
    CONCAT = 6


@dataclass(frozen=True)
class Layer:
    '''One layer of a feed-forward network. `dims` per kind:
        DENSE   (in, out)
        RELU    (width,)        width of the flattened activation, informational
        FLATTEN (input dims...)
        CONV1D  (L, cin, k, cout)
        CONV2D  (H, W, cin, kh, kw, cout)
        CONCAT  (width,)        width of the auxiliary input appended here
    '''
    kind: LayerKind
    dims: tuple

    def param_shapes(self):
        if self.kind == LayerKind.DENSE:
            return [(self.dims[0], self.dims[1]), (self.dims[1],)]
        if self.kind == LayerKind.CONV1D:
            _, cin, k, cout = self.dims
            return [(k, cin, cout), (cout,)]
        if self.kind == LayerKind.CONV2D:
            _, _, cin, kh, kw, cout = self.dims
            return [(kh, kw, cin, cout), (cout,)]
        return []

    def fan_in(self):
        if self.kind == LayerKind.DENSE:
            return self.dims[0]
        if self.kind == LayerKind.CONV1D:
            return self.dims[1] * self.dims[2]
        if self.kind == LayerKind.CONV2D:
            return self.dims[2] * self.dims[3] * self.dims[4]
        return 0


def mlp_small(input_shape, num_classes, hidden=64):
    '''flatten -> 64 -> relu -> C'''
    width = int(np.prod(input_shape))
    return [
        Layer(LayerKind.FLATTEN, tuple(input_shape)),
        Layer(LayerKind.DENSE, (width, hidden)),
        Layer(LayerKind.RELU, (hidden,)),
        Layer(LayerKind.DENSE, (hidden, num_classes)),
    ]


def conv_small(input_shape, num_classes, filters=8, kernel=3, hidden=32):
    '''conv 3x3x8 -> relu -> flatten -> 32 -> relu -> C'''
    h, w, cin = input_shape
    oh, ow = h - kernel + 1, w - kernel + 1
    return [
        Layer(LayerKind.CONV2D, (h, w, cin, kernel, kernel, filters)),
        Layer(LayerKind.RELU, (oh * ow * filters,)),
        Layer(LayerKind.FLATTEN, (oh, ow, filters)),
        Layer(LayerKind.DENSE, (oh * ow * filters, hidden)),
        Layer(LayerKind.RELU, (hidden,)),
        Layer(LayerKind.DENSE, (hidden, num_classes)),
    ]


ARCHITECTURES = {
    'mlp_small': mlp_small,
    'conv_small': conv_small,
}


def input_shape_of(layers):
    first = layers[0]
    if first.kind == LayerKind.CONV2D:
        return tuple(first.dims[:3])
    if first.kind == LayerKind.CONV1D:
        return tuple(first.dims[:2])
    if first.kind == LayerKind.FLATTEN:
        return tuple(first.dims)
    if first.kind == LayerKind.DENSE:
        return (first.dims[0],)
    raise FormatException("network cannot start with a {} layer".format(first.kind.name))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise ConfigException("epochs must be >= 1, got {}".format(self.epochs))
        if not self.learning_rate > 0:
            raise ConfigException("learning_rate must be > 0, got {}".format(self.learning_rate))
        if not 0 <= self.momentum < 1:
            raise ConfigException("momentum must be in [0, 1), got {}".format(self.momentum))
        if int(self.batch_size) < 1:
            raise ConfigException("batch_size must be >= 1, got {}".format(self.batch_size))

    def with_seed(self, seed):
        return TrainConfig(self.epochs, self.learning_rate, self.momentum, self.batch_size, seed)


@dataclass(frozen=True)
class ModelOutputs:
    logits: np.ndarray
    probs: np.ndarray
    predicted: np.ndarray
    traces: np.ndarray


@dataclass(frozen=True)
class FinetuneReport:
    acc_pretrained_on_target: float
    acc_finetuned_on_target: float
    acc_scratch_on_target: float
    n_s: int
    admissible: bool

    @classmethod
    def evaluate(cls, acc_pretrained, acc_finetuned, acc_scratch, n_s):
        admissible = acc_finetuned > acc_scratch and acc_finetuned > acc_pretrained
        return cls(acc_pretrained, acc_finetuned, acc_scratch, n_s, bool(admissible))


class Classifier:
    '''A feed-forward network. After training it is treated as immutable:
    training always works on a copy (see `copy`).'''

    def __init__(self, layers, params, num_classes=None, input_shape=None):
        self.layers = list(layers)
        self.params = list(params)
        final = [l for l in self.layers if l.kind == LayerKind.DENSE][-1]
        self.num_classes = final.dims[1] if num_classes is None else num_classes
        self.input_shape = input_shape_of(self.layers) if input_shape is None else tuple(input_shape)

        if final.dims[1] != self.num_classes:
            raise DimensionException("final layer width {} != num_classes {}".format(final.dims[1], self.num_classes))
        expected = [s for l in self.layers for s in l.param_shapes()]
        if [tuple(p.shape) for p in self.params] != expected:
            raise DimensionException("parameter shapes do not match the layers")

    @classmethod
    def build(cls, layers, seed=0):
        '''He-uniform weights and zero biases from a seeded generator.'''
        rng = np.random.default_rng(seed)
        params = []
        for layer in layers:
            shapes = layer.param_shapes()
            if not shapes:
                continue
            limit = np.sqrt(6.0 / layer.fan_in())
            params.append(Tensor(rng.uniform(-limit, limit, size=shapes[0]), requires_grad=True))
            params.append(Tensor(np.zeros(shapes[1]), requires_grad=True))
        return cls(layers, params)

    @property
    def aux_width(self):
        widths = [l.dims[0] for l in self.layers if l.kind == LayerKind.CONCAT]
        return widths[0] if widths else 0

    def copy(self):
        return Classifier(self.layers, [p.copy() for p in self.params], self.num_classes, self.input_shape)

    def forward(self, x, aux=None, tape=None, trainable=False):
        '''Runs a batch through the network.
        args:
            x: Tensor of shape (N,) + input_shape.
            aux: optional (N, width) Tensor appended at a CONCAT layer.
            tape: GradTape to record on.
            trainable: when False the parameters enter the computation as constants.
        returns:
            tuple (logits, trace) where trace is the input of the final dense layer.
        '''
        if tuple(x.shape[1:]) != self.input_shape:
            raise DimensionException("input shape {} does not match {}".format(tuple(x.shape[1:]), self.input_shape))
        params = self.params if trainable else [Tensor.wrap(p.data) for p in self.params]
        last_dense = max(i for i, l in enumerate(self.layers) if l.kind == LayerKind.DENSE)

        out, trace, k = x, None, 0
        for i, layer in enumerate(self.layers):
            if i == last_dense:
                trace = out
            if layer.kind == LayerKind.DENSE:
                out = add(matmul(out, params[k], tape=tape), params[k + 1], tape=tape)
                k += 2
            elif layer.kind in (LayerKind.CONV1D, LayerKind.CONV2D):
                dims = 1 if layer.kind == LayerKind.CONV1D else 2
                out = add(conv(out, params[k], dims, tape=tape), params[k + 1], tape=tape)
                k += 2
            elif layer.kind == LayerKind.RELU:
                out = relu(out, tape=tape)
            elif layer.kind == LayerKind.FLATTEN:
                out = reshape(out, (out.shape[0], -1), tape=tape)
            elif layer.kind == LayerKind.CONCAT:
                if aux is None or aux.shape != (out.shape[0], layer.dims[0]):
                    raise DimensionException("CONCAT layer needs an auxiliary input of width {}".format(layer.dims[0]))
                out = concat((out, aux), tape=tape)
        return out, trace

    def outputs(self, inputs, aux=None, batch_size=256):
        '''Logits, probabilities, predictions and deepest hidden traces for a batch of inputs.'''
        inputs = np.asarray(inputs, dtype=np.float64)
        logits, traces = [], []
        for start in range(0, len(inputs), batch_size):
            chunk_aux = None if aux is None else Tensor.wrap(aux[start:start + batch_size])
            z, t = self.forward(Tensor.wrap(inputs[start:start + batch_size]), aux=chunk_aux)
            logits.append(z.data)
            traces.append(t.data.reshape(len(z.data), -1))
        logits = np.concatenate(logits) if logits else np.zeros((0, self.num_classes))
        traces = np.concatenate(traces) if traces else np.zeros((0, 0))
        probs = softmax(logits).data
        return ModelOutputs(logits, probs, np.argmax(probs, axis=1), traces)

    def accuracy(self, data):
        if len(data) == 0:
            raise DataException("cannot measure accuracy on an empty dataset")
        return float(np.mean(self.outputs(data.inputs).predicted == data.labels))


def forward_full(m, x):
    '''Single-input forward pass.
    returns:
        tuple (logits (C,), probs (C,), predicted class, trace (deepest hidden layer))
    '''
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if tuple(x.shape) != m.input_shape:
        raise DimensionException("input shape {} does not match {}".format(tuple(x.shape), m.input_shape))
    out = m.outputs(x[None])
    return Tensor(out.logits[0]), Tensor(out.probs[0]), int(out.predicted[0]), Tensor(out.traces[0])


def sgd_epochs(model, inputs, targets, cfg, loss_fn, weights=None, aux=None):
    '''Mini-batch SGD with momentum over shuffled batches, yielding after each epoch.
    The model's parameters are updated in place.'''
    rng = np.random.default_rng(cfg.seed)
    n = len(inputs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            tape = GradTape()
            batch_aux = None if aux is None else Tensor.wrap(aux[idx])
            logits, _ = model.forward(Tensor.wrap(inputs[idx]), aux=batch_aux, tape=tape, trainable=True)
            loss = loss_fn(logits, targets[idx], None if weights is None else weights[idx], tape=tape)
            backward(loss)
            sgd_step(model.params, cfg.learning_rate, cfg.momentum)
            running += loss.item() * len(idx)
        logger.debug("epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, running / max(n, 1))
        yield epoch


def _check_labels(data, num_classes):
    if len(data) == 0:
        raise DataException("training data is empty")
    if np.any(data.labels >= num_classes) or np.any(data.labels < 0):
        raise DataException("labels must lie in [0, {})".format(num_classes))


def train(arch, data, cfg, init=None):
    '''Trains a classifier on `data`.
    args:
        arch: list of Layers or an architecture id from ARCHITECTURES.
        data: labeled Dataset.
        cfg: TrainConfig. cfg.seed drives both initialisation and shuffling.
        init: optional Classifier to continue from; it is copied, never mutated.
    returns:
        the trained Classifier.
    '''
    if init is not None:
        model = init.copy()
    else:
        if isinstance(arch, str):
            if arch not in ARCHITECTURES:
                raise ConfigException("unknown architecture '{}'".format(arch))
            arch = ARCHITECTURES[arch](data.input_shape, data.num_classes)
        model = Classifier.build(arch, seed=cfg.seed)
    _check_labels(data, model.num_classes)

    for _ in sgd_epochs(model, data.inputs, data.labels, cfg, softmax_cross_entropy):
        pass
    return model


def finetune_split(target_train, n_s, seed):
    '''Held-out 20% validation split plus an n_s fine-tuning sample drawn from the rest.
    returns:
        tuple (sample, validation), disjoint and seeded.
    '''
    if n_s < 1:
        raise ConfigException("n_s must be >= 1, got {}".format(n_s))
    if n_s > len(target_train):
        raise ConfigException("n_s={} exceeds the target training set ({})".format(n_s, len(target_train)))
    validation, rest = split(target_train, (0.2, 0.8), seed)
    if n_s > len(rest):
        raise ConfigException("n_s={} exceeds the {} inputs left after the validation split".format(n_s, len(rest)))
    rng = np.random.default_rng([seed, 1])
    chosen = np.sort(rng.choice(len(rest), size=n_s, replace=False))
    return rest.subset(chosen, role=Role.TARGET_TRAIN), validation.with_role(Role.VALIDATION)


def finetune(m, target_train, n_s, cfg):
    '''Continues training a copy of `m` on an n_s sample of the target training set and
    checks that fine-tuning beats both the pre-trained model and a model trained from
    scratch on the same sample, on a held-out target validation split.
    returns:
        tuple (fine-tuned Classifier, FinetuneReport)
    '''
    sample, validation = finetune_split(target_train, n_s, cfg.seed)
    tuned = train(m.layers, sample, cfg, init=m)
    scratch = train(m.layers, sample, cfg)

    report = FinetuneReport.evaluate(
        m.accuracy(validation), tuned.accuracy(validation), scratch.accuracy(validation), n_s)
    logger.info("fine-tuned on %d inputs: pre-trained %.3f, fine-tuned %.3f, scratch %.3f, admissible=%s",
                n_s, report.acc_pretrained_on_target, report.acc_finetuned_on_target,
                report.acc_scratch_on_target, report.admissible)
    return tuned, report


def to_bytes(m):
    chunks = [MAGIC, struct.pack('<II', VERSION, len(m.layers))]
    for layer in m.layers:
        chunks.append(struct.pack('<BI', int(layer.kind), len(layer.dims)))
        chunks.append(struct.pack('<{}I'.format(len(layer.dims)), *layer.dims))
    for p in m.params:
        chunks.append(np.ascontiguousarray(p.data, dtype='<f8').tobytes())
    return b''.join(chunks)


def from_bytes(raw):
    def take(fmt, offset, what):
        size = struct.calcsize(fmt)
        if offset + size > len(raw):
            raise FormatException("truncated model file while reading {}".format(what), offset)
        return struct.unpack_from(fmt, raw, offset), offset + size

    if raw[:4] != MAGIC:
        raise FormatException("bad magic {!r}, expected {!r}".format(raw[:4], MAGIC), 0)
    (version, count), offset = take('<II', 4, 'header')
    if version != VERSION:
        raise UnsupportedVersionException("unsupported model format version {}".format(version), 4)

    layers = []
    for _ in range(count):
        (tag, ndims), start = take('<BI', offset, 'layer header')
        try:
            kind = LayerKind(tag)
        except ValueError:
            raise FormatException("unknown layer kind tag {}".format(tag), offset)
        dims, offset = take('<{}I'.format(ndims), start, 'layer dims')
        layers.append(Layer(kind, tuple(dims)))
    if not layers or not any(l.kind == LayerKind.DENSE for l in layers):
        raise FormatException("model has no dense output layer", offset)

    params = []
    for layer in layers:
        for shape in layer.param_shapes():
            size = int(np.prod(shape)) * 8
            if offset + size > len(raw):
                raise FormatException("truncated model file while reading parameters", offset)
            values = np.frombuffer(raw, dtype='<f8', count=size // 8, offset=offset)
            params.append(Tensor(values.reshape(shape), requires_grad=True))
            offset += size
    if offset != len(raw):
        raise FormatException("{} trailing bytes after parameters".format(len(raw) - offset), offset)
    return Classifier(layers, params)


def save(m, path):
    with open(path, 'wb') as fh:
        fh.write(to_bytes(m))


def load(path):
    with open(path, 'rb') as fh:
        return from_bytes(fh.read())
