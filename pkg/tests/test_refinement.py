import numpy as np
import pytest
import torch

from graspnet.geometry import GraspCandidate, OrientationBinning, angle_delta
from graspnet.refinement import (
    RefinementConfig,
    RefinementNet,
    apply_refinement,
    build_stack,
    crop_mask,
    encode_refinement_targets,
)


def grasp(x=48.0, y=48.0, w=20.0, h=10.0, theta=0.0):
    return GraspCandidate(x, y, w, h, theta)


class TestCropMask:
    def test_margin_covering_whole_map_is_identity(self):
        torch.manual_seed(0)
        m = torch.rand(32, 32)
        out = crop_mask(m, grasp(16, 16, 200, 200), margin=1.2)
        assert torch.equal(out, m)

    def test_candidate_outside_map_gives_zeros(self):
        m = torch.rand(32, 32)
        out = crop_mask(m, grasp(500, 500, 10, 10))
        assert out.abs().sum() == 0

    def test_masked_sum_equals_inside_region(self):
        m = torch.ones(40, 40)
        g = grasp(20, 20, 10, 10, 0)  # envelope * 1.2 margin -> 12x12 box
        out = crop_mask(m, g, margin=1.2)
        x1 = int(np.floor(20 - 6)); x2 = int(np.ceil(20 + 6))
        assert out.sum() == pytest.approx(m[x1:x2, x1:x2].sum())
        assert out.sum() == pytest.approx((x2 - x1) ** 2)

    def test_idempotent_and_never_increases(self):
        torch.manual_seed(1)
        m = torch.rand(48, 48)
        g = grasp(20, 28, 14, 8, 30)
        once = crop_mask(m, g)
        twice = crop_mask(once, g)
        assert torch.equal(once, twice)
        assert (once <= m + 1e-9).all()


class TestBuildStack:
    def test_empty_candidates(self):
        stack = build_stack(torch.rand(64, 64), [])
        assert tuple(stack.shape) == (0, 2, 96, 96)

    def test_batch_shape(self):
        cfg = RefinementConfig(working_size=48)
        stack = build_stack(torch.rand(64, 64), [grasp(), grasp(30, 30), grasp(50, 20)], cfg)
        assert tuple(stack.shape) == (3, 2, 48, 48)

    def test_channel_zero_shared_across_candidates(self):
        stack = build_stack(torch.rand(64, 64), [grasp(), grasp(20, 20, 8, 8)])
        assert torch.equal(stack[0, 0], stack[1, 0])

    def test_channel_one_masked_outside_envelope(self):
        cfg = RefinementConfig(working_size=64)
        feas = torch.ones(64, 64)
        stack = build_stack(feas, [grasp(32, 32, 10, 10)], cfg)
        assert stack[0, 1, 0, 0] == 0
        assert stack[0, 1, 32, 32] > 0
        assert (stack[0, 1] <= stack[0, 0] + 1e-9).all()
        assert (stack >= 0).all() and (stack <= 1 + 1e-6).all()


class TestRefinementNet:
    @pytest.fixture(scope="class")
    @staticmethod
    def net():
        torch.manual_seed(0)
        return RefinementNet(RefinementConfig(working_size=64)).eval()

    def test_shape_contract(self, net):
        out = net(torch.rand(4, 2, 64, 64))
        assert tuple(out.shape) == (4, 5)

    def test_empty_batch(self, net):
        assert tuple(net(torch.zeros(0, 2, 64, 64)).shape) == (0, 5)

    def test_identical_rows_identical_outputs(self, net):
        row = torch.rand(1, 2, 64, 64)
        out = net(row.repeat(3, 1, 1, 1))
        assert torch.allclose(out[0], out[1], atol=1e-6)
        assert torch.allclose(out[1], out[2], atol=1e-6)

    def test_permutation_equivariance(self, net):
        x = torch.rand(5, 2, 64, 64)
        perm = torch.tensor([4, 2, 0, 3, 1])
        a = net(x)
        b = net(x[perm])
        assert torch.allclose(a[perm], b, atol=1e-6)

    def test_finite_on_zero_stack(self, net):
        assert torch.isfinite(net(torch.zeros(2, 2, 64, 64))).all()

    def test_invalid_preset(self):
        with pytest.raises(ValueError):
            RefinementConfig(preset="resnet9000")

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(2)
        net = RefinementNet(RefinementConfig(working_size=32)).double().eval()
        stack = torch.rand(2, 2, 32, 32, dtype=torch.float64)
        target = torch.randn(2, 5, dtype=torch.float64)
        params = [p for p in net.parameters() if p.requires_grad]

        def loss_fn():
            return (net(stack) - target).square().mean()

        loss = loss_fn()
        loss.backward()
        rng = np.random.default_rng(0)
        checked = 0
        for p in params:
            if p.grad is None or p.numel() == 0:
                continue
            idx = int(rng.integers(p.numel()))
            with torch.no_grad():
                flat = p.reshape(-1)
                orig = flat[idx].item()
                h = 1e-5 * max(1.0, abs(orig))
                flat[idx] = orig + h
                up = loss_fn().item()
                flat[idx] = orig - h
                down = loss_fn().item()
                flat[idx] = orig
            fd = (up - down) / (2 * h)
            ag = p.grad.reshape(-1)[idx].item()
            assert abs(fd - ag) <= 1e-3 * max(abs(fd), abs(ag), 1e-6)
            checked += 1
            if checked >= 20:
                break
        assert checked >= 20


class TestApplyRefinement:
    def test_zero_factors_identity(self):
        g = grasp(17, 23, 12, 6, 40)
        out = apply_refinement(g, np.zeros(5))
        assert (out.x, out.y, out.w, out.h, out.theta) == (g.x, g.y, g.w, g.h, g.theta)

    def test_angle_moves_in_bin_widths(self):
        binning = OrientationBinning(18)
        out = apply_refinement(grasp(theta=30), [0, 0, 0, 0, 1.0], binning)
        assert out.theta == pytest.approx(40.0)

    def test_angle_renormalized(self):
        out = apply_refinement(grasp(theta=175), [0, 0, 0, 0, 1.0], OrientationBinning(18))
        assert out.theta == pytest.approx(5.0)

    def test_roundtrip_with_encoder(self):
        rng = np.random.default_rng(3)
        binning = OrientationBinning(18)
        for _ in range(50):
            g = grasp(rng.uniform(10, 80), rng.uniform(10, 80),
                      rng.uniform(4, 30), rng.uniform(4, 30), rng.uniform(0, 180))
            gt = grasp(rng.uniform(10, 80), rng.uniform(10, 80),
                       rng.uniform(4, 30), rng.uniform(4, 30), rng.uniform(0, 180))
            t = encode_refinement_targets(g, gt, binning)
            back = apply_refinement(g, t, binning)
            assert back.x == pytest.approx(gt.x, rel=1e-6, abs=1e-6)
            assert back.y == pytest.approx(gt.y, rel=1e-6, abs=1e-6)
            assert back.w == pytest.approx(gt.w, rel=1e-6)
            assert back.h == pytest.approx(gt.h, rel=1e-6)
            assert angle_delta(back.theta, gt.theta) < 1e-6
