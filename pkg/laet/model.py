"""
Desk-scale decoder-only transformer exposing every layer's hidden states.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from constants import (
    BYTE_VOCAB_SIZE, SPECIAL_TOKENS, PAD_ID, FEED_FORWARD_MULTIPLIER, EMBEDDING_INIT_STD,
    POSITIONAL_INIT_RANGE, RECENCY_SLOPE_EXPONENT, PROBE_STRATEGIES, model_defaults,
)
from .errors import InvalidArgument
from .numerics import Tensor, ComputationRecord

logger = logging.getLogger(__name__)

LAYER_PARAMETER_NAMES = (
    'wq', 'wk', 'wv', 'wo', 'ff_in', 'ff_out',
    'ln1_gain', 'ln1_bias', 'ln2_gain', 'ln2_bias',
)


class Tokenizer:
    """Byte-level tokenizer; one token per byte plus the padding token"""

    def __init__(self):
        self.vocabulary = {bytes([b]).decode('latin-1'): b for b in range(BYTE_VOCAB_SIZE)}
        for offset, token in enumerate(SPECIAL_TOKENS):
            self.vocabulary[token] = BYTE_VOCAB_SIZE + offset
        self.pad_id = PAD_ID

    @property
    def vocab_size(self):
        return len(self.vocabulary)

    def encode(self, text):
        if isinstance(text, str):
            text = text.encode('utf-8')
        return list(text)

    def decode(self, ids):
        return bytes(i for i in ids if i < BYTE_VOCAB_SIZE)

    def tokenize(self, text, max_context):
        """Encode and keep the last max_context tokens; never empty"""
        ids = self.encode(text)
        if not ids:
            return [self.pad_id]
        return ids[-max_context:]


@dataclass
class ModelConfig:
    num_layers: int = model_defaults['layers']
    hidden_dim: int = model_defaults['dim']
    num_heads: int = model_defaults['heads']
    max_context: int = model_defaults['context']
    seed: int = 0

    def validate(self):
        for name in ('num_layers', 'hidden_dim', 'num_heads', 'max_context'):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be positive")
        if self.hidden_dim % self.num_heads:
            raise InvalidArgument("num_heads must divide hidden_dim")
        return self


@dataclass
class LayerRepresentations:
    """r^(0) followed by H_1..H_L, each an n x d array"""
    hidden: list = field(default_factory=list)

    @property
    def num_layers(self):
        return len(self.hidden) - 1

    @property
    def length(self):
        return self.hidden[0].shape[0]


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def recency_slopes(num_heads):
    """Per-head distance penalty; the last head is close to uniform"""
    heads = np.arange(1, num_heads + 1, dtype=np.float64)
    return 2.0 ** (-RECENCY_SLOPE_EXPONENT * heads / num_heads)


def recency_bias(slopes, n):
    """(heads, n, n) additive score bias: -slope * (i - j) for keys j <= i, zero above"""
    distance = np.arange(n)[:, None] - np.arange(n)[None, :]
    return -slopes[:, None, None] * np.maximum(distance, 0)[None, :, :]


class TransformerLayer:
    """Pre-norm block: causal multi-head attention then a GELU feed-forward"""

    def __init__(self, hidden_dim, num_heads, rng, index):
        d = hidden_dim
        ff = FEED_FORWARD_MULTIPLIER * d
        self.index = index
        self.num_heads = num_heads
        self.params = {
            'wq': Tensor(_uniform(rng, d, (d, d))),
            'wk': Tensor(_uniform(rng, d, (d, d))),
            'wv': Tensor(_uniform(rng, d, (d, d))),
            'wo': Tensor(_uniform(rng, d, (d, d))),
            'ff_in': Tensor(_uniform(rng, d, (d, ff))),
            'ff_out': Tensor(_uniform(rng, ff, (ff, d))),
            'ln1_gain': Tensor(np.ones(d)),
            'ln1_bias': Tensor(np.zeros(d)),
            'ln2_gain': Tensor(np.ones(d)),
            'ln2_bias': Tensor(np.zeros(d)),
        }
        for name, tensor in self.params.items():
            tensor.name = f"layers.{index}.{name}"

    def set_requires_grad(self, flag):
        for tensor in self.params.values():
            tensor.requires_grad = flag

    def forward(self, rec, x, bias=None):
        p = self.params
        batch, n, d = x.shape
        heads = self.num_heads
        head_dim = d // heads

        def split_heads(t):
            return rec.transpose(rec.reshape(t, (batch, n, heads, head_dim)), (0, 2, 1, 3))

        # Attention half: normalize, project, score with the causal mask, mix values
        h = rec.layer_norm(x, p['ln1_gain'], p['ln1_bias'])
        q = split_heads(rec.matmul(h, p['wq']))
        k = split_heads(rec.matmul(h, p['wk']))
        v = split_heads(rec.matmul(h, p['wv']))
        scores = rec.scale(rec.matmul(q, rec.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(head_dim))
        context = rec.matmul(rec.causal_softmax(scores, bias), v)
        context = rec.reshape(rec.transpose(context, (0, 2, 1, 3)), (batch, n, d))
        x = rec.add(x, rec.matmul(context, p['wo']))

        # Feed-forward half, also residual
        h = rec.layer_norm(x, p['ln2_gain'], p['ln2_bias'])
        x = rec.add(x, rec.matmul(rec.gelu(rec.matmul(h, p['ff_in'])), p['ff_out']))
        return x


class LayeredModel:
    """L-layer transformer M with per-layer trainable flags"""

    def __init__(self, config=None, tokenizer=None):
        self.config = (config or ModelConfig()).validate()
        self.tokenizer = tokenizer or Tokenizer()
        rng = np.random.default_rng(self.config.seed)
        d = self.config.hidden_dim
        # Draw order is fixed: E, P, then layer 1..L, so a seed pins every tensor
        self.embedding = Tensor(
            rng.normal(0.0, EMBEDDING_INIT_STD, size=(self.tokenizer.vocab_size, d)), name='embedding',
        )
        self.positional = Tensor(
            rng.uniform(-POSITIONAL_INIT_RANGE, POSITIONAL_INIT_RANGE, size=(self.config.max_context, d)),
            name='positional',
        )
        self.layers = [
            TransformerLayer(d, self.config.num_heads, rng, index)
            for index in range(1, self.config.num_layers + 1)
        ]
        self.slopes = recency_slopes(self.config.num_heads)
        self.trainable_mask = [False] * self.config.num_layers
        self.set_trainable(set())
        logger.debug(f"Built {self.config.num_layers}-layer model, d={d}, "
                     f"{self.parameter_count()} parameters")

    @property
    def num_layers(self):
        return self.config.num_layers

    def check_layer(self, layer):
        if not 1 <= layer <= self.num_layers:
            raise InvalidArgument(f"layer {layer} outside 1..{self.num_layers}")

    def set_trainable(self, layers):
        """Train exactly the given 1-based layers; E and P stay frozen"""
        layers = set(layers)
        for layer in layers:
            self.check_layer(layer)
        self.trainable_mask = [index in layers for index in range(1, self.num_layers + 1)]
        for block, flag in zip(self.layers, self.trainable_mask):
            block.set_requires_grad(flag)
        self.embedding.requires_grad = False
        self.positional.requires_grad = False

    def named_parameters(self):
        yield 'embedding', self.embedding
        yield 'positional', self.positional
        for block in self.layers:
            for name in LAYER_PARAMETER_NAMES:
                yield f"layers.{block.index}.{name}", block.params[name]

    def layer_parameters(self, layer):
        self.check_layer(layer)
        block = self.layers[layer - 1]
        return [block.params[name] for name in LAYER_PARAMETER_NAMES]

    def trainable_parameters(self):
        return [t for _, t in self.named_parameters() if t.requires_grad]

    def layer_parameter_count(self):
        return sum(t.size for t in self.layer_parameters(1))

    def parameter_count(self):
        return sum(t.size for _, t in self.named_parameters())

    def tokenize(self, text):
        return self.tokenizer.tokenize(text, self.config.max_context)

    def embed(self, tokens, rec=None):
        """r^(0): row i is E[t_i] + P[i]"""
        if rec is None:
            rec = ComputationRecord.inference()
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.shape[-1] > self.config.max_context:
            raise InvalidArgument(f"sequence of {ids.shape[-1]} tokens exceeds context {self.config.max_context}")
        if ids.min() < 0 or ids.max() >= self.tokenizer.vocab_size:
            raise InvalidArgument(f"token id outside vocabulary of {self.tokenizer.vocab_size}")
        return rec.add(rec.gather_rows(self.embedding, ids), rec.narrow(self.positional, ids.shape[-1]))

    def forward_batch(self, sequences, rec=None, upto=None):
        """Right-pad token sequences and run layers 1..upto.

        Causal masking keeps every real position independent of the padding,
        so each row equals the unpadded computation. Returns the list of
        (B, n, d) hidden tensors (r^(0) first) and the sequence lengths.
        """
        if rec is None:
            rec = ComputationRecord.inference()
        lengths = np.array([len(s) for s in sequences], dtype=np.int64)
        if lengths.min() < 1:
            raise InvalidArgument("empty token sequence")
        # Right-pad to the longest sequence
        ids = np.full((len(sequences), lengths.max()), self.tokenizer.pad_id, dtype=np.int64)
        for row, seq in enumerate(sequences):
            ids[row, :len(seq)] = seq
        x = self.embed(ids, rec)
        hidden = [x]
        # One bias table per padded length, shared by every layer
        bias = recency_bias(self.slopes, ids.shape[1])
        for block in self.layers[:upto or self.num_layers]:
            x = block.forward(rec, x, bias)
            hidden.append(x)
        return hidden, lengths

    def forward_all_layers(self, tokens):
        hidden, _ = self.forward_batch([list(tokens)])
        return LayerRepresentations([h.data[0] for h in hidden])


def pool(rec, hidden, lengths, strategy):
    """Sequence representation from a (B, n, d) hidden tensor: LT, SaT or AvT"""
    strategy = strategy.lower()
    if strategy == 'lt':
        return rec.take_positions(hidden, np.asarray(lengths) - 1)
    if strategy not in PROBE_STRATEGIES:
        raise InvalidArgument(f"unknown probing strategy '{strategy}'")
    n = hidden.shape[1]
    mask = (np.arange(n)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)
    summed = rec.sum(rec.mul(hidden, Tensor(mask[:, :, None])), axis=1)
    if strategy == 'sat':
        return summed
    return rec.mul(summed, Tensor(1.0 / np.asarray(lengths, dtype=np.float64)[:, None]))


def extract_representation(reps, layer, strategy):
    if not 1 <= layer <= reps.num_layers:
        raise InvalidArgument(f"layer {layer} outside 1..{reps.num_layers}")
    matrix = reps.hidden[layer]
    strategy = strategy.lower()
    if strategy == 'lt':
        return matrix[-1].copy()
    if strategy == 'sat':
        return matrix.sum(axis=0)
    if strategy == 'avt':
        return matrix.sum(axis=0) / matrix.shape[0]
    raise InvalidArgument(f"unknown probing strategy '{strategy}'")


def set_trainable(model, layers):
    model.set_trainable(layers)
