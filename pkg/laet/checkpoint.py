"""
Single-file checkpoint codec for a LayeredModel and its probe head.

Layout: 8-byte magic, uint64 LE manifest length, UTF-8 JSON manifest, then
float64 LE tensor data in manifest order. Offsets in the manifest are
relative to the start of the data block.
"""
import hashlib
import json
import logging
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from constants import CHECKPOINT_MAGIC
from .errors import CorruptCheckpoint, InvalidArgument
from .model import LayeredModel, ModelConfig
from .probe import ProbeClassifier

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_HEADER = struct.Struct('<8sQ')
_ITEM = np.dtype('<f8')


def _named_tensors(model, classifier=None):
    named = list(model.named_parameters())
    if classifier is not None:
        named.extend(classifier.named_parameters())
        named.extend(classifier.named_buffers())
    return named


def _tensor_bytes(tensor):
    return np.ascontiguousarray(tensor.data, dtype=_ITEM).tobytes()


def build_manifest(model, classifier=None, extra=None):
    entries, offset = [], 0
    for name, tensor in _named_tensors(model, classifier):
        entries.append({'name': name, 'shape': list(tensor.shape), 'offset': offset, 'count': int(tensor.size)})
        offset += tensor.size * _ITEM.itemsize
    cfg = model.config
    manifest = {
        'format': FORMAT_VERSION,
        'model': {
            'num_layers': cfg.num_layers, 'hidden_dim': cfg.hidden_dim,
            'num_heads': cfg.num_heads, 'max_context': cfg.max_context, 'seed': cfg.seed,
        },
        'trainable_mask': list(model.trainable_mask),
        'classifier': None,
        'tensors': entries,
        'extra': extra or {},
    }
    if classifier is not None:
        manifest['classifier'] = {
            'input_dim': classifier.input_dim,
            'num_outputs': classifier.num_outputs,
            'regression': classifier.regression,
            'scaled_layers': classifier.scaled_layers,
        }
    return manifest


def serialize(model, classifier=None, extra=None):
    manifest = build_manifest(model, classifier, extra)
    header = json.dumps(manifest, sort_keys=True).encode('utf-8')
    data = b''.join(_tensor_bytes(t) for _, t in _named_tensors(model, classifier))
    return _HEADER.pack(CHECKPOINT_MAGIC, len(header)) + header + data


def save_checkpoint(model, classifier, path, extra=None):
    """Write atomically: a temporary sibling file is renamed over the target"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = serialize(model, classifier, extra)
    fd, tmp_name = tempfile.mkstemp(prefix='.tmpckpt-', dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
    logger.info(f"Saved checkpoint {path} ({len(payload)} bytes)")
    return path


def _parse(blob):
    if len(blob) < _HEADER.size:
        raise CorruptCheckpoint("file shorter than the checkpoint header")
    magic, length = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint("bad magic bytes")
    start = _HEADER.size + length
    if len(blob) < start:
        raise CorruptCheckpoint("truncated manifest")
    try:
        manifest = json.loads(blob[_HEADER.size:start].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable manifest: {exc}") from exc
    if not isinstance(manifest, dict) or not isinstance(manifest.get('tensors'), list):
        raise CorruptCheckpoint("manifest is not an object with a tensor list")
    data = blob[start:]
    expected = 0
    for entry in manifest['tensors']:
        # every entry must be a complete dict: name, shape, offset, count
        try:
            name, shape, offset, count = entry['name'], entry['shape'], entry['offset'], entry['count']
            described = int(np.prod(shape))
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptCheckpoint(f"malformed manifest entry: {exc!r}") from exc
        if offset != expected or described != count:
            raise CorruptCheckpoint(f"manifest entry '{name}' is inconsistent")
        expected += count * _ITEM.itemsize
    if expected != len(data):
        raise CorruptCheckpoint(f"data block holds {len(data)} bytes, manifest describes {expected}")
    return manifest, data


def read_manifest(path):
    return _parse(Path(path).read_bytes())[0]


def load_checkpoint(path):
    """(model, classifier) with bitwise-identical parameters; classifier may be None"""
    path = Path(path)
    if not path.exists():
        raise InvalidArgument(f"checkpoint not found: {path}")
    manifest, data = _parse(path.read_bytes())
    try:
        model = LayeredModel(ModelConfig(**manifest['model']))
        classifier = None
        if manifest['classifier'] is not None:
            classifier = ProbeClassifier(**manifest['classifier'])
        trainable = [i for i, flag in enumerate(manifest['trainable_mask'], start=1) if flag]
    except (KeyError, TypeError, InvalidArgument) as exc:
        raise CorruptCheckpoint(f"manifest does not describe a model: {exc}") from exc

    tensors = dict(_named_tensors(model, classifier))
    entries = {entry['name']: entry for entry in manifest['tensors']}
    if set(entries) != set(tensors):
        raise CorruptCheckpoint("manifest tensors do not match the model layout")
    for name, tensor in tensors.items():
        entry = entries[name]
        if tuple(entry['shape']) != tensor.shape:
            raise CorruptCheckpoint(f"tensor '{name}' has shape {entry['shape']}, expected {list(tensor.shape)}")
        values = np.frombuffer(data, dtype=_ITEM, count=entry['count'], offset=entry['offset'])
        if not np.isfinite(values).all():
            raise CorruptCheckpoint(f"tensor '{name}' holds non-finite values")
        tensor.data = values.astype(np.float64).reshape(tensor.shape)
    try:
        model.set_trainable(trainable)
    except InvalidArgument as exc:
        raise CorruptCheckpoint(f"trainable mask does not fit the model: {exc}") from exc
    logger.debug(f"Loaded checkpoint {path}")
    return model, classifier


def layer_bytes(model, layer):
    """Serialized bytes of theta_l, for frozen-layer comparisons"""
    return b''.join(_tensor_bytes(t) for t in model.layer_parameters(layer))


def model_digest(model, classifier=None):
    digest = hashlib.sha256()
    for name, tensor in _named_tensors(model, classifier):
        digest.update(name.encode('utf-8'))
        digest.update(_tensor_bytes(tensor))
    return digest.hexdigest()
