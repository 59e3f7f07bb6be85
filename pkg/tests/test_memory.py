import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from core.models import Box, DynamicTokenCache, Grid, Modality, Role, TokenSeq, UpdatePolicy
from core.tensor import Tensor
from core.utils.checkpoint import load_tensors
from core.utils.errors import ContractError
from features.encoder.schemas import EliminationRecord, StagedLayer
from features.memory.service import (
    dump_cache,
    extract_dynamic_tokens,
    grid_to_tokens,
    init_cache,
    maybe_update,
    restore_tokens,
    roi_align,
    tokens_to_grid,
)
from features.selftest.service import roi_align_reference, tiny_config


def _seq(data, role=Role.SEARCH, modality=Modality.RGB, grid=None) -> TokenSeq:
    return TokenSeq(Tensor(np.asarray(data, dtype=np.float64)), role, modality, grid=grid)


class RestoreTests(TestCase):
    def test_scatter_with_zero_fill(self):
        short = _seq([[1.0], [2.0], [3.0]])
        record = EliminationRecord(layer_index=1, kept_indices=(0, 2, 5), original_len=6)
        restored = restore_tokens(short, record)
        assert_array_equal(restored.tokens.data[:, 0], [1.0, 0.0, 2.0, 0.0, 0.0, 3.0])

    def test_length_mismatch_raises(self):
        record = EliminationRecord(layer_index=1, kept_indices=(0, 2), original_len=6)
        with self.assertRaises(ContractError):
            restore_tokens(_seq([[1.0], [2.0], [3.0]]), record)

    def test_grid_must_hold_original_length(self):
        record = EliminationRecord.full(4)
        with self.assertRaises(ContractError):
            restore_tokens(_seq(np.zeros((4, 2))), record, Grid(3, 3))


class GridTests(TestCase):
    def test_row_major_layout(self):
        seq = _seq(np.arange(6, dtype=np.float64)[:, None], grid=Grid(2, 3))
        fm = tokens_to_grid(seq)
        self.assertEqual(fm.shape, (2, 3, 1))
        self.assertEqual(fm.data[1, 2, 0], 5.0)
        self.assertEqual(fm.data[1, 0, 0], 3.0)

    def test_round_trip_is_bitwise(self):
        seq = _seq(np.random.default_rng(1).normal(size=(12, 4)), grid=Grid(3, 4))
        back = grid_to_tokens(tokens_to_grid(seq), Role.SEARCH, Modality.RGB)
        self.assertEqual(back.tokens.data.tobytes(), seq.tokens.data.tobytes())
        self.assertEqual(back.grid, Grid(3, 4))

    def test_missing_grid_raises(self):
        with self.assertRaises(ContractError):
            tokens_to_grid(_seq(np.zeros((4, 2))))


class RoiAlignTests(TestCase):
    def test_two_by_two_center(self):
        fm = np.array([[[0.0], [1.0]], [[2.0], [3.0]]])
        out = roi_align(fm, Box(x=0, y=0, w=2, h=2), (1, 1), 1)
        self.assertAlmostEqual(float(out[0, 0, 0]), 1.5, places=12)

    def test_constant_map_is_exact(self):
        fm = np.full((4, 5, 3), -2.25)
        out = roi_align(fm, Box(x=-0.7, y=1.2, w=6.3, h=2.9), (3, 2), 2)
        self.assertTrue((out == -2.25).all())

    def test_full_extent_is_identity(self):
        fm = np.random.default_rng(2).normal(size=(4, 5, 2))
        out = roi_align(fm, Box(x=0, y=0, w=5, h=4), (4, 5), 1)
        assert_allclose(out, fm, atol=1e-12)

    def test_matches_reference(self):
        rng = np.random.default_rng(3)
        fm = rng.normal(size=(6, 6, 3))
        roi = Box(x=0.8, y=1.3, w=3.7, h=2.2)
        assert_allclose(roi_align(fm, roi, (2, 3), 2), roi_align_reference(fm, roi, (2, 3), 2), atol=1e-10)

    def test_rejects_empty_roi_and_sampling(self):
        fm = np.zeros((2, 2, 1))
        with self.assertRaises(ContractError):
            roi_align(fm, Box(x=0, y=0, w=0, h=1), (1, 1))
        with self.assertRaises(ContractError):
            roi_align(fm, Box(x=0, y=0, w=1, h=1), (1, 1), 0)


class ExtractTests(TestCase):
    def setUp(self):
        # search crop the size of the template: the full-crop box returns the grid itself
        self.cfg = tiny_config(template_size=32, search_size=32, roi_sampling=1)
        rng = np.random.default_rng(4)
        grid = Grid(2, 2)
        self.rgb = _seq(rng.normal(size=(4, 8)), grid=grid)
        self.tir = _seq(rng.normal(size=(4, 8)), modality=Modality.TIR, grid=grid)
        self.staged = {
            1: StagedLayer(
                search={Modality.RGB: self.rgb, Modality.TIR: self.tir},
                template={},
                records={Modality.RGB: None, Modality.TIR: None},
            )
        }

    def test_full_box_is_identity(self):
        entries = extract_dynamic_tokens(self.staged, Box(x=0, y=0, w=32, h=32), self.cfg)
        m_v, m_t = entries[1]
        self.assertEqual((m_v.role, m_v.modality, m_t.modality), (Role.DYNAMIC, Modality.RGB, Modality.TIR))
        self.assertEqual(m_v.grid, Grid(2, 2))
        assert_allclose(m_v.tokens.data, self.rgb.tokens.data, atol=1e-12)
        assert_allclose(m_t.tokens.data, self.tir.tokens.data, atol=1e-12)

    def test_eliminated_tokens_are_restored_first(self):
        record = EliminationRecord(layer_index=1, kept_indices=(1, 3), original_len=4)
        short = _seq(self.rgb.tokens.data[[1, 3]])
        self.staged[1].search[Modality.RGB] = short
        self.staged[1].records[Modality.RGB] = record
        entries = extract_dynamic_tokens(self.staged, Box(x=0, y=0, w=32, h=32), self.cfg)
        m_v = entries[1][0].tokens.data
        assert_allclose(m_v[[1, 3]], self.rgb.tokens.data[[1, 3]], atol=1e-12)
        self.assertFalse(m_v[[0, 2]].any())

    def test_missing_modality_raises(self):
        del self.staged[1].search[Modality.TIR]
        with self.assertRaises(ContractError):
            extract_dynamic_tokens(self.staged, Box(x=0, y=0, w=32, h=32), self.cfg)

    def test_init_cache_is_deterministic(self):
        box = Box(x=4, y=6, w=20, h=14)
        a = init_cache(self.staged, box, self.cfg)
        b = init_cache(self.staged, box, self.cfg)
        self.assertEqual(a.digest(), b.digest())
        self.assertEqual((a.last_update_frame, a.source_score), (0, 1.0))


class ExtractReferenceTests(TestCase):
    def test_random_boxes_match_direct_pipeline(self):
        cfg = tiny_config(roi_sampling=2)
        rng = np.random.default_rng(9)
        full = {m: rng.normal(size=(16, 8)) for m in (Modality.RGB, Modality.TIR)}
        kept = (0, 2, 3, 5, 8, 9, 12, 15)
        record = EliminationRecord(layer_index=2, kept_indices=kept, original_len=16)
        staged = {
            2: StagedLayer(
                search={m: _seq(full[m][list(kept)], modality=m) for m in full},
                template={},
                records={Modality.RGB: record, Modality.TIR: record},
            )
        }
        for _ in range(5):
            x, y = rng.uniform(-8, 48, size=2)
            w, h = rng.uniform(4, 40, size=2)
            box = Box(x=x, y=y, w=w, h=h)
            entries = extract_dynamic_tokens(staged, box, cfg)
            for seq in entries[2]:
                restored = np.zeros((16, 8))
                restored[list(kept)] = full[seq.modality][list(kept)]
                roi = Box(x=x / 16, y=y / 16, w=w / 16, h=h / 16)
                expected = roi_align_reference(restored.reshape(4, 4, 8), roi, (2, 2), 2).reshape(4, 8)
                assert_allclose(seq.tokens.data, expected, atol=1e-10)
                self.assertEqual(seq.grid, Grid(2, 2))


class UpdateGateTests(TestCase):
    def setUp(self):
        self.cache = DynamicTokenCache({1: ("old_v", "old_t")}, last_update_frame=0, source_score=1.0)
        self.staged = {1: ("new_v", "new_t")}
        self.policy = UpdatePolicy(interval=25, score_threshold=0.65)

    def test_interval_not_elapsed(self):
        cache, updated = maybe_update(self.cache, self.staged, 24, 0.99, self.policy)
        self.assertFalse(updated)
        self.assertIs(cache, self.cache)

    def test_score_must_exceed_threshold(self):
        _, updated = maybe_update(self.cache, self.staged, 25, 0.65, self.policy)
        self.assertFalse(updated)

    def test_gate_opens(self):
        cache, updated = maybe_update(self.cache, self.staged, 25, 0.66, self.policy)
        self.assertTrue(updated)
        self.assertEqual(cache.entries[1], ("new_v", "new_t"))
        self.assertEqual((cache.last_update_frame, cache.source_score), (25, 0.66))

    def test_missing_layers_raise(self):
        with self.assertRaises(ContractError):
            maybe_update(self.cache, {}, 30, 0.9, self.policy)


class DumpTests(TestCase):
    def test_names_follow_layer_and_modality(self):
        grid = Grid(1, 2)
        entry = (
            _seq(np.ones((2, 3)), Role.DYNAMIC, Modality.RGB, grid),
            _seq(np.zeros((2, 3)), Role.DYNAMIC, Modality.TIR, grid),
        )
        cache = DynamicTokenCache({4: entry, 7: entry})
        with tempfile.TemporaryDirectory() as tmp:
            path = dump_cache(cache, Path(tmp) / "cache.bin")
            tensors = load_tensors(path)
        self.assertEqual(sorted(tensors), ["layer4.rgb", "layer4.tir", "layer7.rgb", "layer7.tir"])
        assert_array_equal(tensors["layer7.rgb"], np.ones((2, 3)))
