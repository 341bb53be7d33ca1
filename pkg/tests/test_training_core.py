# -*- coding: utf-8 -*-
"""
Test losses, the optimizer, schedules, modules and checkpoints.
"""

import os

import numpy as np
import pytest

from lung_dpn.core.checkpoint import load_module, load_tensors, save_module, save_tensors
from lung_dpn.core.gradcheck import gradcheck
from lung_dpn.core.layers import BatchNorm3d, Conv3d, ConvBnRelu, Linear, Sequential
from lung_dpn.core.losses import bce_loss, smooth_l1
from lung_dpn.core.optim import SGD, OptimState, lr_schedule, sgd_step
from lung_dpn.core.tensor import Tensor, parameter
from lung_dpn.errors import CheckpointError, DomainError, ScheduleError


@pytest.mark.unit
class TestLosses:
    """Test the classification and regression losses."""

    @pytest.mark.parametrize(
        "logit,label,expected",
        [(50.0, 1, 0.0), (0.0, 1, 0.693147), (-2.0, 1, 2.126928)],
    )
    def test_bce_reference_values(self, logit, label, expected):
        """Test that binary cross entropy matches hand-computed values."""
        value = bce_loss(Tensor([logit]), [label]).item()
        assert value == pytest.approx(expected, abs=1e-6), f"bce({logit}, {label}) = {value}"

    def test_bce_finite_for_extreme_logits(self):
        """Test that bce stays finite for |logit| up to 500."""
        value = bce_loss(Tensor([-500.0, 500.0]), [1, 0]).item()
        assert np.isfinite(value), "bce overflowed"
        assert value == pytest.approx(500.0), f"Expected 500, got {value}"

    def test_bce_rejects_soft_labels(self):
        """Test that labels outside {0, 1} are refused."""
        with pytest.raises(DomainError):
            bce_loss(Tensor([0.0]), [0.5])

    @pytest.mark.parametrize("error,expected", [(0.0, 0.0), (0.5, 0.125), (2.0, 1.5)])
    def test_smooth_l1_reference_values(self, error, expected):
        """Test smooth L1 on both branches."""
        assert smooth_l1(Tensor([error]), [0.0]).item() == pytest.approx(expected)

    def test_smooth_l1_sums_box_coordinates(self):
        """Test that a t-vector loss is the sum over its four coordinates."""
        value = smooth_l1(Tensor([0.5, 2.0, 0.0, -0.5]), np.zeros(4)).item()
        assert value == pytest.approx(0.125 + 1.5 + 0.0 + 0.125)

    @pytest.mark.parametrize("trial", range(5))
    def test_loss_gradients(self, trial):
        """Test both losses against finite differences."""
        rng = np.random.default_rng(trial)
        z = parameter(rng.normal(scale=3.0, size=(3, 4)))
        y = (rng.random((3, 4)) > 0.5).astype(float)
        assert gradcheck(lambda: bce_loss(z, y), [z]) <= 1e-4

        p = parameter(rng.normal(scale=2.0, size=(5, 4)))
        target = p.data + rng.choice([-3.0, -0.4, 0.3, 2.5], size=(5, 4))
        assert gradcheck(lambda: smooth_l1(p, target), [p]) <= 1e-4


@pytest.mark.unit
class TestOptimizer:
    """Test SGD with momentum and the step schedules."""

    def test_vanilla_step(self):
        """Test that momentum 0 and no decay give w - lr·g."""
        w = parameter([1.0, 2.0])
        sgd_step([w], [np.array([0.5, -1.0])], OptimState(momentum=0.0, weight_decay=0.0), 0.1)
        assert np.allclose(w.data, [0.95, 2.1]), f"Unexpected weights {w.data}"

    def test_momentum_recursion(self):
        """Test two momentum steps against the hand recursion 1 - 0.1 - 0.19."""
        w = parameter([1.0])
        state = OptimState(momentum=0.9, weight_decay=0.0)
        for _ in range(2):
            sgd_step([w], [np.array([1.0])], state, 0.1)
        assert w.data[0] == pytest.approx(0.71), f"Expected 0.71, got {w.data[0]}"

    def test_minimizes_quadratic(self):
        """Test that 1,000 steps on w² from w = 1 drive |w| below 1e-3."""
        w = parameter([1.0])
        optimizer = SGD([w], momentum=0.9, weight_decay=0.0)
        for _ in range(1000):
            optimizer.zero_grad()
            (w * w).sum().backward()
            optimizer.step(0.01)
        assert abs(w.data[0]) < 1e-3, f"Did not converge: w = {w.data[0]}"

    def test_weight_decay_applied_without_gradient(self):
        """Test that decay acts on parameters that received no gradient."""
        w = parameter([2.0])
        sgd_step([w], [None], OptimState(momentum=0.0, weight_decay=0.5), 0.1)
        assert w.data[0] == pytest.approx(1.9)

    def test_nonpositive_learning_rate_raises(self):
        """Test that lr <= 0 is refused."""
        with pytest.raises(DomainError):
            sgd_step([parameter([1.0])], [np.zeros(1)], OptimState(), 0.0)

    @pytest.mark.parametrize(
        "epoch,task,expected",
        [
            (0, "detector", 0.01),
            (74, "detector", 0.01),
            (75, "detector", 0.001),
            (119, "detector", 0.001),
            (120, "detector", 0.0001),
            (130, "detector", 0.0001),
            (524, "classifier", 0.01),
            (600, "classifier", 0.001),
            (840, "classifier", 0.0001),
        ],
    )
    def test_schedule_breakpoints(self, epoch, task, expected):
        """Test the detector and classifier schedules at their breakpoints."""
        assert lr_schedule(epoch, task) == pytest.approx(expected)

    def test_schedule_scales_with_total(self):
        """Test that a shorter run keeps the proportional breakpoints."""
        rates = [lr_schedule(e, "detector", total_epochs=10) for e in range(10)]
        assert rates == pytest.approx([0.01] * 5 + [0.001] * 3 + [0.0001] * 2), f"Unexpected schedule {rates}"

    @pytest.mark.parametrize("epoch,task", [(150, "detector"), (-1, "classifier"), (0, "segmenter")])
    def test_schedule_errors(self, epoch, task):
        """Test that out-of-range epochs and unknown tasks raise a schedule error."""
        with pytest.raises(ScheduleError):
            lr_schedule(epoch, task)


@pytest.mark.unit
class TestModulesAndCheckpoints:
    """Test the module system and the DLT1 checkpoint format."""

    def build(self, seed: int = 0) -> Sequential:
        rng = np.random.default_rng(seed)
        return Sequential(ConvBnRelu(1, 2, 3, rng), Conv3d(2, 1, 1, rng), BatchNorm3d(1))

    def test_named_parameters_and_buffers(self):
        """Test that parameters and batch-norm buffers are discovered by name."""
        net = self.build()
        names = [n for n, _ in net.named_parameters()]
        buffers = [n for n, _ in net.named_buffers()]
        assert "layers.0.layers.0.weight" in names, f"Missing conv weight in {names}"
        assert "layers.2.running_var" in buffers, f"Missing running_var in {buffers}"
        assert net.num_parameters() == 2 * 27 + 2 + 2 + 2 * 1 + 1 + 2

    def test_train_eval_switch(self):
        """Test that eval() reaches nested modules."""
        net = self.build().eval()
        assert not net.layers[0].layers[1].training, "Nested batch norm still in training mode"

    def test_checkpoint_roundtrip(self, tmp_path):
        """Test that a saved module reloads into a fresh one with identical outputs."""
        net, other = self.build(0), self.build(1)
        net.layers[2].running_mean[:] = 0.25
        x = Tensor(np.random.default_rng(3).normal(size=(1, 1, 4, 4, 4)))
        path = os.path.join(tmp_path, "net.dlt")
        save_module(path, net, extra={"norm_mean": np.array([0.5])})

        extras = load_module(path, other)
        assert np.array_equal(extras["norm_mean"], [0.5])
        net.eval()
        other.eval()
        assert np.array_equal(net(x).data, other(x).data), "Reloaded module differs"

    def test_checkpoint_bad_magic(self, tmp_path):
        """Test that a file without the DLT1 magic is refused."""
        path = os.path.join(tmp_path, "bad.dlt")
        with open(path, "wb") as f:
            f.write(b"NOPE0000")
        with pytest.raises(CheckpointError):
            load_tensors(path)

    def test_checkpoint_truncated(self, tmp_path):
        """Test that a truncated file is refused."""
        path = os.path.join(tmp_path, "t.dlt")
        save_tensors(path, {"w": np.arange(10.0)})
        with open(path, "rb") as f:
            blob = f.read()
        with open(path, "wb") as f:
            f.write(blob[:-8])
        with pytest.raises(CheckpointError):
            load_tensors(path)

    def test_missing_checkpoint(self, tmp_path):
        """Test that a missing checkpoint file raises a checkpoint error."""
        with pytest.raises(CheckpointError):
            load_tensors(os.path.join(tmp_path, "missing.dlt"))

    def test_load_shape_mismatch(self, tmp_path):
        """Test that loading into a differently shaped module fails."""
        path = os.path.join(tmp_path, "lin.dlt")
        rng = np.random.default_rng(0)
        save_module(path, Linear(3, 2, rng))
        with pytest.raises(CheckpointError):
            load_module(path, Linear(4, 2, rng))
