"""Model assembly, forward contracts, losses, training behavior, checkpoints."""

import dataclasses
import math

import numpy as np
import pytest

from gibrss import (ContractError, NumericError, RngStream, SegModelConfig,
                    Tensor, build_model, forward, load_checkpoint, predict,
                    save_checkpoint, synth_dataset, train)
from gibrss import autodiff as ad
from gibrss import blocks as bl
from gibrss.data import LabeledImage
from gibrss.graph import (downsample_graph, embed_patches, grid_conv,
                          grid_coords, knn_graph, split_patches,
                          upsample_nodes)
from gibrss.model import (ForwardTrace, apply_flips, flip_decisions,
                          stage_node_labels, total_loss)

SMALL = dict(classes=3, image_size=(32, 32), patch_size=8, embed_dim=8,
             stages=1, k_neighbors=3, heads=2, epochs=2, batch_size=4,
             seed=0)


def small_cfg(**over):
    kw = dict(SMALL)
    kw.update(over)
    return SegModelConfig(**kw)


class TestBuild:
    def test_deterministic_rebuild(self):
        a = build_model(small_cfg())
        b = build_model(small_cfg())
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].data, b.params[name].data)

    def test_stage_grid_arithmetic(self):
        cfg = SegModelConfig(classes=3, image_size=(64, 64), patch_size=8,
                             embed_dim=32, stages=2)
        assert cfg.stage_grids() == [(8, 8), (4, 4), (2, 2)]

    def test_output_conv_channels_follow_classes(self):
        m = build_model(small_cfg(classes=2))
        assert m.out_conv.shape[1] == 2
        m6 = build_model(small_cfg(classes=6))
        assert m6.out_conv.shape[1] == 6

    def test_invalid_configs_name_problem(self):
        with pytest.raises(ContractError, match="too small|deepest"):
            small_cfg(image_size=(32, 32), patch_size=8, stages=3).validate()
        with pytest.raises(ContractError, match="heads"):
            small_cfg(embed_dim=10, heads=4).validate()
        with pytest.raises(ContractError, match="classes"):
            small_cfg(classes=1).validate()


class TestForward:
    def test_logit_shape_contract(self):
        cfg = SegModelConfig(classes=6, image_size=(64, 64), epochs=1)
        m = build_model(cfg)
        tr = forward(m, RngStream(1).uniform((64, 64, 3)))
        assert tr.logits_hwc().shape == (64, 64, 6)

    def test_constant_image_constant_logits(self):
        m = build_model(small_cfg())
        tr = forward(m, np.full((32, 32, 3), 0.37))
        logits = tr.logits_hwc()
        np.testing.assert_allclose(logits, np.broadcast_to(logits[0, 0], logits.shape),
                                   atol=1e-9)

    def test_nondivisible_image_padding(self):
        m = build_model(small_cfg(image_size=(34, 37)))
        tr = forward(m, RngStream(2).uniform((34, 37, 3)))
        assert tr.shape == (34, 37)
        assert tr.padded == (40, 40)
        assert tr.logits.shape == (34 * 37, 3)

    def test_single_stage_matches_manual_composition(self):
        cfg = small_cfg(image_size=(16, 16), patch_size=4, stages=1,
                        k_neighbors=3, embed_dim=8, heads=2)
        m = build_model(cfg)
        img = RngStream(3).uniform((16, 16, 3))
        tr = forward(m, img)

        ps = split_patches(img, 4)
        x = embed_patches(ps, m.embed)
        g = knn_graph(x, 3, coords=grid_coords(ps.grid), grid=ps.grid)
        y = bl.ge_block(x, g, m.enc_blocks[0])
        g2, down = downsample_graph(g, y, m.down_kernels[0])
        up = upsample_nodes(down, g2.grid, ps.grid)
        merged = ad.matmul(ad.concat([up, y], axis=1), m.merge[0])
        gd = knn_graph(merged, 3, coords=grid_coords(ps.grid), grid=ps.grid)
        dec = bl.ge_block(merged, gd, m.dec_blocks[0])
        node_logits = ad.matmul(dec, m.w_cls)

        hp, wp = ps.padded_size
        pix = np.arange(hp * wp)
        node_of_pixel = (pix // wp // 4) * ps.grid[1] + (pix % wp) // 4
        base = ad.gather_rows(node_logits, node_of_pixel)
        conv_in = ad.concat([base, Tensor(img.reshape(-1, 3))], axis=1)
        out, _ = grid_conv(conv_in, (hp, wp), m.out_conv, stride=1)
        np.testing.assert_allclose(tr.logits.data, out.data, atol=1e-12)

    def test_predict_tie_breaks_to_class_zero(self):
        m = build_model(small_cfg())
        m.w_cls.data = np.zeros_like(m.w_cls.data)
        m.out_conv.data = np.zeros_like(m.out_conv.data)
        labels = predict(m, RngStream(4).uniform((32, 32, 3)))
        assert (labels == 0).all()

    def test_predict_matches_argmax_oracle(self):
        m = build_model(small_cfg())
        img = RngStream(5).uniform((32, 32, 3))
        tr = forward(m, img)
        expected = np.argmax(tr.logits_hwc(), axis=2)
        np.testing.assert_array_equal(predict(m, img), expected)


class TestNodeLabels:
    def test_stage0_majority(self):
        grids = [(2, 2), (1, 1)]
        labels = np.zeros((8, 8), dtype=int)
        labels[:4, 4:] = 1          # node (0,1) fully class 1
        labels[4:, :4][:2] = 2      # node (1,0) half class 2, half class 0
        out = stage_node_labels(labels, (8, 8), 4, grids, 0, 3)
        assert out.tolist() == [0, 1, 0, 0]

    def test_majority_tie_smaller_class(self):
        grids = [(1, 1)]
        labels = np.array([[0, 1], [1, 0]])
        out = stage_node_labels(labels, (2, 2), 2, grids, 0, 2)
        assert out.tolist() == [0]

    def test_deeper_stage_pools(self):
        grids = [(2, 2), (1, 1)]
        labels = np.ones((8, 8), dtype=int)
        out = stage_node_labels(labels, (8, 8), 4, grids, 1, 2)
        assert out.tolist() == [1]


class TestTotalLoss:
    def _fake_trace(self, logits, h, w):
        return ForwardTrace(Tensor(logits), (h, w), (h, w), [], {})

    def test_perfect_prediction_zero_loss(self):
        m = build_model(small_cfg(weight_decay=0.0, beta=0.0))
        labels = np.zeros((2, 2), dtype=int)
        logits = np.full((4, 3), -80.0)
        logits[:, 0] = 80.0
        loss, parts = total_loss(m, self._fake_trace(logits, 2, 2), labels,
                                 RngStream(6))
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_zero_params_norm_free(self):
        m = build_model(small_cfg(weight_decay=0.5))
        for p in m.params.values():
            p.data = np.zeros_like(p.data)
        labels = np.array([[0, 1]])
        logits = np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
        loss, _ = total_loss(m, self._fake_trace(logits, 1, 2), labels,
                             RngStream(7))
        expected_ce = math.log(1 + 2 * math.exp(-2.0))
        assert loss.item() == pytest.approx(expected_ce, rel=1e-12)

    def test_two_pixel_hand_oracle(self):
        m = build_model(small_cfg(weight_decay=0.25))
        trace = self._fake_trace(np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]), 1, 2)
        labels = np.array([[0, 2]])
        loss, _ = total_loss(m, trace, labels, RngStream(8))
        ce = math.log(1 + 2 * math.exp(-1.0))
        norm = math.sqrt(sum(float((p.data ** 2).sum()) for p in m.params.values()))
        assert loss.item() == pytest.approx(ce + 0.25 * norm, rel=1e-10)

    def test_gib_terms_enter_loss(self):
        m = build_model(small_cfg(beta=0.5, weight_decay=0.0))
        img = RngStream(9).uniform((32, 32, 3))
        labels = RngStream(10).integers(0, 3, (32, 32))
        tr = forward(m, img)
        loss_on, parts_on = total_loss(m, tr, labels, RngStream(11))
        m_off = build_model(small_cfg(beta=0.5, weight_decay=0.0,
                                      node_masking=False, edge_masking=False))
        tr_off = forward(m_off, img)
        loss_off, parts_off = total_loss(m_off, tr_off, labels, RngStream(11))
        assert parts_on["aib"] != 0.0 or parts_on["xib"] != 0.0
        assert parts_off["aib"] == 0.0 and parts_off["xib"] == 0.0


def tiny_dataset(n=4, size=32, classes=3, seed=0):
    return synth_dataset(n, size, classes, seed)


class TestTrain:
    def test_zero_epochs_noop(self):
        m = build_model(small_cfg(epochs=0))
        before = {k: v.data.copy() for k, v in m.params.items()}
        log = train(m, tiny_dataset())
        assert log.records == []
        for k in before:
            np.testing.assert_array_equal(m.params[k].data, before[k])

    def test_zero_lr_frozen(self):
        m = build_model(small_cfg(lr=0.0, weight_decay=0.0, epochs=2))
        before = {k: v.data.copy() for k, v in m.params.items()}
        train(m, tiny_dataset())
        for k in before:
            np.testing.assert_array_equal(m.params[k].data, before[k])

    def test_training_is_deterministic(self):
        logs = []
        finals = []
        for _ in range(2):
            m = build_model(small_cfg(epochs=2))
            log = train(m, tiny_dataset())
            logs.append([(r.loss, r.ce, r.aib, r.xib, r.oa, r.miou)
                         for r in log.records])
            finals.append({k: v.data.copy() for k, v in m.params.items()})
        assert logs[0] == logs[1]
        for k in finals[0]:
            np.testing.assert_array_equal(finals[0][k], finals[1][k])

    def test_empty_dataset_rejected(self):
        m = build_model(small_cfg())
        with pytest.raises(ContractError):
            train(m, [])

    def test_nan_abort_has_provenance(self):
        m = build_model(small_cfg(epochs=1))
        m.embed.data[0, 0] = np.nan
        with pytest.raises(NumericError, match="epoch 1"):
            train(m, tiny_dataset())

    def test_loss_decreases_on_synthetic_set(self):
        # reduced-scale screen of the descent property; the full 8-image
        # half-loss criterion runs in the acceptance suite
        m = build_model(small_cfg(epochs=8, batch_size=1, lr=2e-3))
        log = train(m, tiny_dataset())
        assert log.records[-1].loss < log.records[0].loss

    def test_flip_consistency_with_preexpanded_dataset(self):
        data = tiny_dataset()
        cfg = small_cfg(epochs=2, flip_augment=True)
        m1 = build_model(cfg)
        log1 = train(m1, data)

        # pre-apply the same flip decisions, then train without flips
        rng = RngStream(cfg.seed, stream=2)
        m2 = build_model(small_cfg(epochs=2, flip_augment=False))
        flipped_per_epoch = {}
        for epoch in (1, 2):
            for j in range(len(data)):
                fh, fv = flip_decisions(rng, epoch, j)
                flipped_per_epoch[(epoch, j)] = apply_flips(
                    data[j].image, data[j].labels, fh, fv)

        class Morph:
            """Dataset view that serves epoch-specific pre-flipped samples."""
            def __init__(self):
                self.epoch = 1
            def __len__(self):
                return len(data)
            def __bool__(self):
                return True
            def __getitem__(self, j):
                img, lab = flipped_per_epoch[(self.epoch, j)]
                return LabeledImage(img, lab, data[j].id)
            def __iter__(self):
                return (self[j] for j in range(len(data)))

        morph = Morph()
        records = []

        def advance(rec):
            records.append(rec.loss)
            morph.epoch += 1

        train(m2, morph, progress=advance)
        assert [r.loss for r in log1.records] == pytest.approx(records, rel=1e-12)


def test_untrained_model_chance_level_on_balanced_set():
    # synth seed 4 gives ~50.2% background pixels for 2 classes; averaging
    # over init seeds centers accuracy at chance (init is sign-symmetric)
    from gibrss import confusion, metrics
    data = synth_dataset(4, 64, 2, 4)
    share = np.mean([np.mean(d.labels == 0) for d in data])
    assert 0.45 <= share <= 0.55
    oas = []
    for seed in range(16):
        m = build_model(SegModelConfig(classes=2, image_size=(64, 64), seed=seed))
        cm = None
        for item in data:
            c = confusion(predict(m, item.image), item.labels, 2)
            cm = c if cm is None else cm.add(c)
        oas.append(metrics(cm).oa)
    assert abs(float(np.mean(oas)) - 0.5) <= 0.1


class TestCheckpoint:
    def test_roundtrip_logits_within_float32(self, tmp_path):
        m = build_model(small_cfg())
        train(m, tiny_dataset(2))
        path = tmp_path / "model.gibrss"
        save_checkpoint(m, path)
        m2 = load_checkpoint(path)
        img = RngStream(12).uniform((32, 32, 3))
        a = forward(m, img).logits.data
        b = forward(m2, img).logits.data
        assert np.abs(a - b).max() <= 1e-5

    def test_config_restored(self, tmp_path):
        cfg = small_cfg(conv_variant="gin", beta=0.3, classes=4)
        m = build_model(cfg)
        path = tmp_path / "model.gibrss"
        save_checkpoint(m, path)
        m2 = load_checkpoint(path)
        assert m2.cfg.conv_variant == "gin"
        assert m2.cfg.beta == pytest.approx(0.3, rel=1e-6)
        assert m2.cfg.classes == 4
        assert m2.cfg.image_size == (32, 32)

    def test_save_is_byte_stable(self, tmp_path):
        m = build_model(small_cfg())
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(m, p1)
        save_checkpoint(m, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_magic_guard(self, tmp_path):
        bad = tmp_path / "nope.bin"
        bad.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(OSError):
            load_checkpoint(bad)
