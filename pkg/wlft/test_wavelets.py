"""
Wavelet core tests: lazy split, Haar split/inverse, lifting levels, chaining and the
wavelet loss.
"""

import numpy as np
import pytest

from autograd import Tensor, default_dtype
from autograd.gradcheck import check_gradients
from errors import ShapeError
from netpbm import read_netpbm
from wavelets import (
    AwtmLevel,
    DawnLevel,
    LiftingNet,
    SubbandQuad,
    WaveletBranch,
    WaveletBranchOutput,
    awtm_forward,
    dawn_lifting_forward,
    dump_subbands,
    haar_cascade,
    haar_inverse,
    haar_split,
    high_avg,
    huber,
    interleave,
    lazy_split,
    loss_wt,
    max_levels,
    wavelet_branch_forward,
)


def _randomize_zero_layers(module, rng):
    for _, param in module.named_parameters():
        if not np.any(param.data):
            param.data[...] = rng.normal(0.0, 0.1, size=param.shape)


def test_lazy_split_example():
    x = Tensor(np.array([0.0, 1, 2, 3, 4, 5]).reshape(1, 1, 1, 6))
    even, odd = lazy_split(x, axis=3)
    assert even.data.ravel().tolist() == [0.0, 2.0, 4.0]
    assert odd.data.ravel().tolist() == [1.0, 3.0, 5.0]
    assert np.array_equal(interleave(even, odd, axis=3), x.data)


def test_lazy_split_rejects_odd_length():
    with pytest.raises(ShapeError):
        lazy_split(Tensor(np.zeros((1, 1, 1, 5))), axis=3)


def test_haar_split_block_example():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    q = haar_split(x)
    assert q.ll.data.item() == 2.5
    assert q.lh.data.item() == -1.0
    assert q.hl.data.item() == -0.5
    assert q.hh.data.item() == 0.0
    assert high_avg(q).data.item() == pytest.approx(-0.5)


def test_haar_split_of_constant_image():
    q = haar_split(Tensor(np.full((1, 2, 4, 4), 7.0)))
    assert q.shape == (1, 2, 2, 2)
    assert np.all(q.ll.data == 7.0)
    for band in (q.lh, q.hl, q.hh):
        assert np.all(band.data == 0.0)


def test_haar_split_rejects_odd_dims():
    with pytest.raises(ShapeError):
        haar_split(Tensor(np.zeros((1, 1, 3, 4))))
    with pytest.raises(ShapeError):
        haar_split(Tensor(np.zeros((4, 4))))


def test_haar_ll_preserves_mean_and_inverse_reconstructs():
    rng = np.random.default_rng(0)
    with default_dtype(np.float64):
        for _ in range(1000):
            h, w = 2 * rng.integers(1, 9, size=2)
            x = Tensor(rng.normal(size=(2, 3, h, w)))
            q = haar_split(x)
            assert abs(q.ll.data.mean() - x.data.mean()) < 1e-12
            assert np.max(np.abs(haar_inverse(q).data - x.data)) < 1e-12


def test_haar_inverse_of_ll_only_is_upsampling():
    ll = np.arange(4.0).reshape(1, 1, 2, 2)
    zero = Tensor(np.zeros_like(ll))
    out = haar_inverse(SubbandQuad(Tensor(ll), zero, zero, zero)).data
    assert np.array_equal(out, np.kron(ll, np.ones((1, 1, 2, 2))))


def test_subband_quad_rejects_mixed_shapes():
    with pytest.raises(ShapeError):
        SubbandQuad(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 2))),
                    Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 3))))


def test_identity_lifting_gives_fixed_haar():
    """Zero-initialized final lifting layers: A equals LL and D equals the averaged highs exactly."""
    rng = np.random.default_rng(1)
    with default_dtype(np.float64):
        level = AwtmLevel(3, rng)
        x = Tensor(rng.normal(size=(2, 3, 8, 8)))
        out = awtm_forward(x, level)
        q = haar_split(x)
    assert out.approx.shape == (2, 3, 4, 4)
    assert out.detail.shape == (2, 3, 4, 4)
    assert np.array_equal(out.approx.data, q.ll.data)
    assert np.array_equal(out.detail.data, high_avg(q).data)
    assert np.allclose(out.input_mean.data, x.data.mean(axis=(2, 3)))
    assert np.allclose(out.approx_mean.data, q.ll.data.mean(axis=(2, 3)))


def test_lifting_net_preserves_shape_and_is_bounded():
    rng = np.random.default_rng(2)
    net = LiftingNet(2, (3, 3), rng)
    _randomize_zero_layers(net, rng)
    out = net(Tensor(rng.normal(size=(1, 2, 5, 6)) * 100))
    assert out.shape == (1, 2, 5, 6)
    assert np.all(np.abs(out.data) <= 1.0)


def test_branch_shapes_and_identity_cascade():
    rng = np.random.default_rng(3)
    with default_dtype(np.float64):
        branch = WaveletBranch(2, 2, rng)
        x = Tensor(rng.normal(size=(1, 2, 16, 16)))
        out = branch(x)
    assert out.levels == 2
    assert [d.shape for d in out.details] == [(1, 2, 8, 8), (1, 2, 4, 4)]
    assert out.final_approx.shape == (1, 2, 4, 4)
    oracle = haar_cascade(x.data, 2)
    for approx, expected in zip(out.approximations, oracle):
        assert np.max(np.abs(approx.data - expected)) < 1e-12


def test_branch_level_limits():
    rng = np.random.default_rng(4)
    levels = [AwtmLevel(1, rng), AwtmLevel(1, rng)]
    x = Tensor(np.zeros((1, 1, 8, 8)))
    with pytest.raises(ShapeError):
        wavelet_branch_forward(x, 2, levels)
    with pytest.raises(ShapeError):
        wavelet_branch_forward(x, 0, levels)
    with pytest.raises(ShapeError):
        wavelet_branch_forward(Tensor(np.zeros((1, 1, 16, 16))), 3, levels)
    assert wavelet_branch_forward(x, 1, levels).levels == 1


def test_max_levels_examples():
    assert max_levels(224) == 5
    assert max_levels(256) == 6
    assert max_levels(8) == 1
    assert max_levels(4) == 0
    with pytest.raises(ShapeError):
        max_levels(3)


def test_directional_identity_is_lazy_rearrangement():
    rng = np.random.default_rng(5)
    with default_dtype(np.float64):
        level = DawnLevel(1, rng)
        x = Tensor(rng.normal(size=(1, 1, 4, 6)))
        q = dawn_lifting_forward(x, level)
    data = x.data
    assert np.array_equal(q.ll.data, data[:, :, 0::2, 0::2])
    assert np.array_equal(q.lh.data, data[:, :, 1::2, 0::2])
    assert np.array_equal(q.hl.data, data[:, :, 0::2, 1::2])
    assert np.array_equal(q.hh.data, data[:, :, 1::2, 1::2])


def test_directional_branch_stacks_three_details():
    rng = np.random.default_rng(6)
    branch = WaveletBranch(2, 1, rng, directional=True)
    out = branch(Tensor(rng.normal(size=(1, 2, 8, 8))))
    assert out.details[0].shape == (1, 6, 4, 4)
    assert out.final_approx.shape == (1, 2, 4, 4)


def test_branch_parameter_names():
    rng = np.random.default_rng(7)
    names = {n for n, _ in WaveletBranch(1, 2, rng).named_parameters()}
    assert "level2.updater.conv2.weight" in names
    names = {n for n, _ in WaveletBranch(1, 1, rng, directional=True).named_parameters()}
    assert "level1.v2_predictor.conv1.bias" in names


@pytest.mark.parametrize("directional", [False, True])
def test_lifting_gradients_match_finite_differences(directional):
    rng = np.random.default_rng(8)
    with default_dtype(np.float64):
        branch = WaveletBranch(2, 1, rng, directional=directional)
        branch.assign_names()
        _randomize_zero_layers(branch, rng)
        x = Tensor(rng.normal(size=(2, 2, 8, 8)))
        weights = [Tensor(rng.normal(size=(2, 6 if directional else 2, 4, 4))), Tensor(rng.normal(size=(2, 2, 4, 4)))]

        def loss_fn():
            out = branch(x)
            return (out.details[0] * weights[0]).mean() + (out.final_approx * weights[1]).mean() \
                + loss_wt(out, 0.1, 0.1)

        checks = check_gradients(loss_fn, branch.parameters(), max_entries=8, rng=rng)
    assert max(c.max_rel_error for c in checks) < 1e-4


def test_huber_examples():
    assert huber(Tensor(np.zeros(1))).item() == 0.0
    assert huber(Tensor([0.5])).item() == pytest.approx(0.125)
    assert huber(Tensor([2.0])).item() == pytest.approx(1.5)
    assert huber(Tensor([-2.0, 0.5])).item() == pytest.approx((1.5 + 0.125) / 2)
    with pytest.raises(ShapeError):
        huber(Tensor([1.0]), delta=0.0)


def test_loss_wt_mean_term_example():
    with default_dtype(np.float64):
        out = WaveletBranchOutput(
            details=[Tensor(np.zeros((1, 1, 2, 2)))],
            approximations=[Tensor(np.zeros((1, 1, 2, 2)))],
            level_means=[(Tensor([[1.0]]), Tensor([[0.6]]))],
        )
        assert loss_wt(out, 0.1, 0.1).item() == pytest.approx(0.016, abs=1e-12)
        assert loss_wt(out, 0.0, 0.0).item() == 0.0


def test_loss_wt_matches_direct_computation():
    rng = np.random.default_rng(9)
    with default_dtype(np.float64):
        for _ in range(100):
            levels = int(rng.integers(1, 4))
            n, c = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            details = [rng.normal(scale=2.0, size=(n, c, 4, 4)) for _ in range(levels)]
            means = [(rng.normal(size=(n, c)), rng.normal(size=(n, c))) for _ in range(levels)]
            alpha, beta = rng.uniform(0, 1, size=2)
            out = WaveletBranchOutput(
                details=[Tensor(d) for d in details],
                approximations=[Tensor(np.zeros((n, c, 2, 2))) for _ in range(levels)],
                level_means=[(Tensor(a), Tensor(b)) for a, b in means],
            )
            expected = 0.0
            for d in details:
                a = np.abs(d)
                expected += alpha * np.where(a <= 1.0, 0.5 * d * d, a - 0.5).mean()
            for a, b in means:
                expected += beta * ((a - b) ** 2).sum(axis=1).mean()
            assert abs(loss_wt(out, alpha, beta).item() - expected) < 1e-10


def test_loss_wt_rejects_empty_branch():
    with pytest.raises(ShapeError):
        loss_wt(WaveletBranchOutput(), 0.1, 0.1)


def test_dump_subbands_constant_input(tmp_path):
    rng = np.random.default_rng(10)
    branch = WaveletBranch(1, 1, rng)
    out = branch(Tensor(np.full((1, 1, 8, 8), 0.25)))
    written = dump_subbands(out, "flat", tmp_path)
    assert sorted(p.name for p in written) == ["flat_L1_A_c0.pgm", "flat_L1_D_c0.pgm"]
    detail = read_netpbm(tmp_path / "flat_L1_D_c0.pgm")
    assert detail.shape == (4, 4)
    assert np.all(detail == 128)
