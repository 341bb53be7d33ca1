# -*- coding: utf-8 -*-
"""
Test detector training: window sampling, bookkeeping and checkpoints.
"""

import os

import numpy as np
import pandas as pd
import pytest

from lung_dpn.core.checkpoint import load_module
from lung_dpn.detection.boxes import Box3
from lung_dpn.detection.trainer import (
    LOSS_COLUMNS,
    TrainingSample,
    recall_report,
    sample_window,
    train_detector,
)
from lung_dpn.errors import DataError
from lung_dpn.network.detector import build_detector


def samples_from(volumes):
    return [TrainingSample(v.volume.voxels, v.boxes, v.series_id) for v in volumes]


@pytest.mark.unit
class TestSampleWindow:
    """Test random training windows."""

    def test_window_follows_nodule(self, rng):
        """Test that the window contains the nodule and matches the volume slice."""
        volume = rng.random((64, 64, 64))
        box = Box3(40.0, 30.0, 20.0, 6.0)
        for _ in range(10):
            window, boxes = sample_window(volume, [box], 32, rng)
            assert window.shape == (32, 32, 32)
            assert len(boxes) == 1
            moved = boxes[0]
            x0, y0, z0 = (int(round(a - b)) for a, b in zip(box.center, moved.center))
            assert np.array_equal(window, volume[z0 : z0 + 32, y0 : y0 + 32, x0 : x0 + 32])
            assert moved.d == box.d

    def test_small_volume_is_padded(self, rng):
        """Test that a volume smaller than the window is zero-padded at the high end."""
        volume = np.ones((40, 40, 40))
        window, boxes = sample_window(volume, [Box3(20, 20, 20, 5)], 48, rng)
        assert window.shape == (48, 48, 48)
        assert np.all(window[:40, :40, :40] == 1.0) and np.all(window[40:] == 0.0)
        assert boxes == [Box3(20, 20, 20, 5)]

    def test_exact_size_is_unchanged(self, rng):
        """Test that a volume of window size is returned as is."""
        volume = rng.random((16, 16, 16))
        window, boxes = sample_window(volume, [], 16, rng)
        assert window is volume and boxes == []


@pytest.mark.unit
class TestTrainDetector:
    """Test detector training bookkeeping on the desk configuration."""

    def test_empty_dataset_raises(self, fresh_config):
        """Test that training needs at least one volume."""
        with pytest.raises(DataError):
            train_detector([], fresh_config)

    def test_zero_epochs_keep_initial_weights(self, fresh_config, synth_volumes, tmp_path):
        """Test that a zero-epoch run saves the untouched network."""
        fresh_config.detector.epochs = 0
        result = train_detector(samples_from(synth_volumes[:1]), fresh_config, str(tmp_path))
        assert result.iterations == 0 and result.loss_curve == []
        reloaded = build_detector(fresh_config.detector.arch, config=fresh_config)
        load_module(os.path.join(tmp_path, "detector.dlt"), reloaded)
        fresh = build_detector(fresh_config.detector.arch, config=fresh_config)
        for (name, a), (_, b) in zip(reloaded.named_parameters(), fresh.named_parameters()):
            assert np.array_equal(a.data, b.data), f"{name} changed"

    @pytest.mark.integration
    def test_one_epoch_writes_outputs(self, fresh_config, synth_volumes, tmp_path):
        """Test iteration counts, the loss file and periodic checkpoints."""
        fresh_config.detector.epochs = 1
        fresh_config.detector.checkpoint_every = 1
        result = train_detector(samples_from(synth_volumes[:2]), fresh_config, str(tmp_path))
        assert result.iterations == 2
        assert len(result.loss_curve) == 1
        assert np.isfinite(result.loss_curve[0]["total"])
        assert [os.path.basename(p) for p in result.checkpoints] == [
            "detector_epoch0001.dlt",
            "detector.dlt",
        ]
        curve = pd.read_csv(os.path.join(tmp_path, "detector_loss.csv"))
        assert list(curve.columns) == LOSS_COLUMNS

    @pytest.mark.integration
    def test_training_is_deterministic(self, fresh_config, synth_volumes):
        """Test that two runs with one seed produce identical weights."""
        fresh_config.detector.epochs = 1
        samples = samples_from(synth_volumes[:1])
        a = train_detector(samples, fresh_config).net
        b = train_detector(samples, fresh_config).net
        for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert np.array_equal(pa.data, pb.data), f"{name} differs between runs"

    @pytest.mark.integration
    def test_recall_report_counts_nodules(self, desk_config, synth_volumes):
        """Test that the recall report covers every planted nodule."""
        net = build_detector(desk_config.detector.arch, config=desk_config)
        samples = samples_from(synth_volumes[:2])
        report = recall_report(net, samples, desk_config)
        assert report.n_gt == sum(len(s.boxes) for s in samples)
        assert 0.0 <= report.recall <= 1.0
        assert report.fp_per_volume >= 0.0
