"""Checkpoint layout, bitwise restore and corruption detection."""

import json
import struct

import numpy as np
import pytest

from laet.checkpoint import (
    load_checkpoint, model_digest, read_manifest, save_checkpoint, serialize,
)
from laet.errors import CorruptCheckpoint, InvalidArgument
from laet.model import LayeredModel, ModelConfig
from laet.probe import ProbeClassifier


def model_and_head():
    model = LayeredModel(ModelConfig(num_layers=3, hidden_dim=8, num_heads=2, max_context=16, seed=2))
    model.set_trainable([2, 3])
    return model, ProbeClassifier(8, 4, seed=2)


class TestRoundTrip:

    def test_bitwise_restore(self, tmp_path):
        model, head = model_and_head()
        path = save_checkpoint(model, head, tmp_path / 'model.ckpt', extra={'selected': [2, 3]})
        loaded, loaded_head = load_checkpoint(path)
        assert model_digest(loaded, loaded_head) == model_digest(model, head)
        assert loaded.trainable_mask == [False, True, True]
        assert loaded_head.num_outputs == 4
        assert read_manifest(path)['extra'] == {'selected': [2, 3]}

    def test_without_classifier(self, tmp_path):
        model, _ = model_and_head()
        loaded, head = load_checkpoint(save_checkpoint(model, None, tmp_path / 'm.ckpt'))
        assert head is None
        assert model_digest(loaded) == model_digest(model)

    def test_same_model_same_bytes(self, tmp_path):
        a = save_checkpoint(*model_and_head(), tmp_path / 'a.ckpt')
        b = save_checkpoint(*model_and_head(), tmp_path / 'b.ckpt')
        assert a.read_bytes() == b.read_bytes()

    def test_no_temporary_files_left(self, tmp_path):
        save_checkpoint(*model_and_head(), tmp_path / 'a.ckpt')
        assert [p.name for p in tmp_path.iterdir()] == ['a.ckpt']

    def test_forward_unchanged_after_restore(self, tmp_path):
        model, head = model_and_head()
        loaded, _ = load_checkpoint(save_checkpoint(model, head, tmp_path / 'm.ckpt'))
        for x, y in zip(model.forward_all_layers([3, 1, 4]).hidden, loaded.forward_all_layers([3, 1, 4]).hidden):
            np.testing.assert_array_equal(x, y)


class TestLayout:

    def test_offsets_walk_without_gaps(self):
        model, head = model_and_head()
        blob = serialize(model, head)
        magic, length = struct.unpack_from('<8sQ', blob)
        assert magic == b'LAETCKPT'
        manifest = json.loads(blob[16:16 + length])
        data = blob[16 + length:]
        cursor = 0
        for entry in manifest['tensors']:
            assert entry['offset'] == cursor
            assert entry['count'] == int(np.prod(entry['shape']))
            cursor += 8 * entry['count']
        assert cursor == len(data)

    def test_values_little_endian_float64(self):
        model, head = model_and_head()
        blob = serialize(model, head)
        length = struct.unpack_from('<8sQ', blob)[1]
        manifest = json.loads(blob[16:16 + length])
        first = manifest['tensors'][0]
        assert first['name'] == 'embedding'
        values = np.frombuffer(blob, dtype='<f8', count=first['count'], offset=16 + length)
        np.testing.assert_array_equal(values.reshape(first['shape']), model.embedding.data)


class TestCorruption:

    def test_truncated(self, tmp_path):
        path = save_checkpoint(*model_and_head(), tmp_path / 'm.ckpt')
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / 'short.ckpt'
        path.write_bytes(b'LAET')
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = save_checkpoint(*model_and_head(), tmp_path / 'm.ckpt')
        blob = bytearray(path.read_bytes())
        blob[:8] = b'NOTACKPT'
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)

    def test_garbled_manifest(self, tmp_path):
        path = save_checkpoint(*model_and_head(), tmp_path / 'm.ckpt')
        blob = bytearray(path.read_bytes())
        blob[16] = ord('#')
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)

    def test_extra_trailing_bytes(self, tmp_path):
        path = save_checkpoint(*model_and_head(), tmp_path / 'm.ckpt')
        path.write_bytes(path.read_bytes() + b'\x00' * 8)
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidArgument):
            load_checkpoint(tmp_path / 'absent.ckpt')

    def test_entry_missing_a_field(self, tmp_path):
        path = save_checkpoint(*model_and_head(), tmp_path / 'm.ckpt')
        blob = path.read_bytes()
        length = struct.unpack_from('<8sQ', blob)[1]
        manifest = json.loads(blob[16:16 + length])
        for field in ('offset', 'shape', 'count'):
            broken = json.loads(json.dumps(manifest))
            del broken['tensors'][1][field]
            header = json.dumps(broken, sort_keys=True).encode('utf-8')
            path.write_bytes(struct.pack('<8sQ', b'LAETCKPT', len(header)) + header + blob[16 + length:])
            with pytest.raises(CorruptCheckpoint):
                load_checkpoint(path)

    def test_non_finite_value(self, tmp_path):
        path = save_checkpoint(*model_and_head(), tmp_path / 'm.ckpt')
        path.write_bytes(path.read_bytes()[:-8] + struct.pack('<d', float('nan')))
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)


class TestScaledHead:

    def test_fitted_scaling_survives_restore(self, tmp_path):
        model, head = model_and_head()
        rng = np.random.default_rng(4)
        head.fit_scaling([rng.normal(2.0, 3.0, size=(20, 8)) for _ in range(3)])
        loaded_model, loaded = load_checkpoint(save_checkpoint(model, head, tmp_path / 'm.ckpt'))
        assert loaded.scaled_layers == 3
        assert model_digest(loaded_model, loaded) == model_digest(model, head)
        x = rng.normal(size=(5, 8))
        np.testing.assert_array_equal(loaded.outputs(x, 2), head.outputs(x, 2))
