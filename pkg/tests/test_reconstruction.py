"""Reconstruction checked element-exactly against brute-force loops.

Gamma matrices here hold small integers (or come from a few small integer
frames, giving dyadic rationals), so every sum is exact in float64 and the
loop order of the oracle cannot matter.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biphoton.errors import ConfigurationError, ModeMismatchError
from biphoton.reconstruction import (GammaAccumulator, JointDistribution, ProjectionKind, accumulate,
                                     accumulate_stack, finalize, merge, mirror_columns, project, project_minus,
                                     project_sum, project_xminus, project_xplus)
from biphoton.simulator import CameraSpec, FrameStack, ImagingMode


def camera(w, h, mode=ImagingMode.MOMENTUM):
    return CameraSpec.momentum(w, h) if mode is ImagingMode.MOMENTUM else CameraSpec.position(w, h)


def integer_gamma(w, h, seed, mode=ImagingMode.MOMENTUM):
    rng = np.random.default_rng(seed)
    P = w * h
    A = rng.integers(-20, 40, size=(P, P)).astype(float)
    return JointDistribution(np.tril(A) + np.tril(A, -1).T, camera(w, h, mode), mode)


def brute_covariance(frames):
    x = frames.reshape(len(frames), -1).astype(float)
    n = len(x)
    G = np.zeros((x.shape[1], x.shape[1]))
    for i in range(x.shape[1]):
        for j in range(x.shape[1]):
            G[i, j] = sum(x[t, i] * x[t, j] for t in range(n)) / n - (x[:, i].sum() / n) * (x[:, j].sum() / n)
    return G


def brute_sum_minus(gamma, include_diagonal):
    H, W = gamma.spec.height, gamma.spec.width
    G4 = gamma.raw.reshape(H, W, H, W)
    S = np.zeros((2 * H - 1, 2 * W - 1))
    M = np.zeros_like(S)
    for y1 in range(H):
        for x1 in range(W):
            for y2 in range(H):
                for x2 in range(W):
                    if not include_diagonal and (y1, x1) == (y2, x2):
                        continue
                    S[y1 + y2, x1 + x2] += G4[y1, x1, y2, x2]
                    M[y1 - y2 + H - 1, x1 - x2 + W - 1] += G4[y1, x1, y2, x2]
    return S, M


def brute_conditional(gamma, column_pairs, include_diagonal):
    H, W = gamma.spec.height, gamma.spec.width
    G4 = gamma.raw.reshape(H, W, H, W)
    out = np.zeros((H, H))
    bad = np.zeros((H, H), bool)
    for y1 in range(H):
        for y2 in range(H):
            num = 0.0
            for x1, x2 in column_pairs:
                if include_diagonal or (y1, x1) != (y2, x2):
                    num += G4[y1, x1, y2, x2]
            den = 0.0
            for x1 in range(W):
                for x2 in range(W):
                    if include_diagonal or (y1, x1) != (y2, x2):
                        den += G4[y1, x1, y2, x2]
            if den > 0:
                out[y1, y2] = num / den
            else:
                bad[y1, y2] = True
    return out, bad


sizes = st.tuples(st.integers(2, 12), st.integers(2, 12))


@settings(max_examples=25, deadline=None)
@given(size=sizes, seed=st.integers(0, 2**31), diag=st.booleans())
def test_sum_and_minus_match_brute_force(size, seed, diag):
    w, h = size
    gamma = integer_gamma(w, h, seed)
    S, M = brute_sum_minus(gamma, diag)
    np.testing.assert_array_equal(project_sum(gamma, include_diagonal=diag).values, S)
    np.testing.assert_array_equal(project_minus(gamma, include_diagonal=diag).values, M)


@settings(max_examples=25, deadline=None)
@given(w=st.sampled_from([3, 4, 5, 7, 8, 11, 12]), h=st.integers(2, 12), seed=st.integers(0, 2**31),
       diag=st.booleans())
def test_xplus_matches_brute_force(w, h, seed, diag):
    gamma = integer_gamma(w, h, seed)
    m0 = w - 1  # centred calibration puts k = 0 at column (w - 1) / 2
    pairs = [(x, m0 - x) for x in range(w)]
    expected, bad = brute_conditional(gamma, pairs, diag)
    got = project_xplus(gamma, include_diagonal=diag)
    np.testing.assert_array_equal(got.values, expected)
    np.testing.assert_array_equal(got.mask, bad)


@settings(max_examples=25, deadline=None)
@given(size=sizes, seed=st.integers(0, 2**31), diag=st.booleans())
def test_xminus_matches_brute_force(size, seed, diag):
    w, h = size
    gamma = integer_gamma(w, h, seed, ImagingMode.POSITION)
    expected, bad = brute_conditional(gamma, [(x, x + 1) for x in range(w - 1)], diag)
    got = project_xminus(gamma, include_diagonal=diag)
    np.testing.assert_array_equal(got.values, expected)
    np.testing.assert_array_equal(got.mask, bad)


def test_accumulated_gamma_matches_brute_covariance():
    rng = np.random.default_rng(5)
    frames = rng.integers(0, 16, size=(8, 7, 9)).astype(np.uint16)
    acc = GammaAccumulator(camera(9, 7))
    for f in frames:
        accumulate(acc, f)
    gamma = finalize(acc)
    np.testing.assert_array_equal(gamma.raw, brute_covariance(frames))
    np.testing.assert_array_equal(gamma.raw, gamma.raw.T)
    S, M = brute_sum_minus(gamma, False)
    np.testing.assert_array_equal(project_sum(gamma).values, S)
    np.testing.assert_array_equal(project_minus(gamma).values, M)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(3, 40), cut1=st.integers(1, 39), cut2=st.integers(1, 39))
def test_merge_exact_and_associative(seed, n, cut1, cut2):
    rng = np.random.default_rng(seed)
    spec = camera(5, 4)
    frames = rng.integers(0, 60000, size=(n, 4, 5)).astype(np.uint16)
    a, b = sorted((cut1 % n, cut2 % n))
    parts = [frames[:a], frames[a:b], frames[b:]]
    accs = [GammaAccumulator(spec).update(p) if len(p) else GammaAccumulator(spec) for p in parts]
    whole = GammaAccumulator(spec).update(frames)
    left = merge(merge(accs[0], accs[1]), accs[2])
    right = merge(accs[0], merge(accs[1], accs[2]))
    swapped = merge(accs[2], merge(accs[0], accs[1]))
    for acc in (left, right, swapped):
        assert acc.frame_count == whole.frame_count
        np.testing.assert_array_equal(acc.sum_I, whole.sum_I)
        np.testing.assert_array_equal(acc.sum_II_packed, whole.sum_II_packed)
    assert whole.exact


def test_zero_frame_only_counts():
    spec = camera(4, 3)
    acc = GammaAccumulator(spec).update(np.ones((2, 3, 4)))
    before = (acc.sum_I.copy(), acc.sum_II_packed.copy())
    acc.update(np.zeros((3, 4)))
    assert acc.frame_count == 3
    np.testing.assert_array_equal(acc.sum_I, before[0])
    np.testing.assert_array_equal(acc.sum_II_packed, before[1])


def test_constant_and_repeated_frames_give_zero():
    spec = camera(4, 3)
    frame = np.arange(12).reshape(3, 4)
    assert not GammaAccumulator(spec).update(np.stack([frame] * 5)).finalize().raw.any()
    assert not GammaAccumulator(spec).update(np.stack([frame] * 2)).finalize().raw.any()


def test_cofiring_pair_is_offdiagonal_maximum():
    rng = np.random.default_rng(0)
    spec = camera(6, 5)
    frames = rng.integers(0, 5, size=(100, 5, 6))
    fire = rng.random(100) < 0.5
    frames[fire, 1, 2] += 20
    frames[fire, 3, 4] += 20
    G = GammaAccumulator(spec).update(frames).finalize().raw
    off = G - np.diag(np.diag(G))
    a, b = 1 * 6 + 2, 3 * 6 + 4
    assert off[a, b] == off.max()
    np.testing.assert_array_equal(G, brute_covariance(frames))


def test_finalize_needs_two_frames():
    acc = GammaAccumulator(camera(3, 3)).update(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        acc.finalize()


def test_shape_mismatch():
    with pytest.raises(ValueError):
        GammaAccumulator(camera(3, 3)).update(np.zeros((3, 4)))


def test_stack_mode_mismatch():
    spec = camera(3, 3)
    stack = FrameStack(spec, ImagingMode.POSITION, np.zeros((2, 3, 3), np.uint16))
    with pytest.raises(ModeMismatchError):
        GammaAccumulator(spec, ImagingMode.MOMENTUM).update_stack(stack)
    assert accumulate_stack(stack).mode is ImagingMode.POSITION


def test_exactness_bound_reported():
    acc = GammaAccumulator(camera(2, 2))
    acc.update(np.full((2, 2), 65535))
    assert acc.exact
    acc.frame_count = 2**22
    assert not acc.exact


def test_single_entry_lands_in_one_bin():
    spec = camera(5, 4)
    P = spec.pixels
    i = 2 * 5 + 1   # (y=2, x=1)
    j = 0 * 5 + 3   # (y=0, x=3)
    G = np.zeros((P, P))
    G[i, j] = G[j, i] = 1.0
    gamma = JointDistribution(G, spec, ImagingMode.MOMENTUM)
    S = project_sum(gamma).values
    assert S[2 + 0, 1 + 3] == 2.0 and np.count_nonzero(S) == 1
    M = project_minus(gamma).values
    assert M[2 - 0 + 3, 1 - 3 + 4] == 1.0 and M[0 - 2 + 3, 3 - 1 + 4] == 1.0
    assert np.count_nonzero(M) == 2


def test_xminus_single_adjacent_pair():
    spec = camera(5, 4, ImagingMode.POSITION)
    P = spec.pixels
    G = np.zeros((P, P))
    i, j = 1 * 5 + 2, 3 * 5 + 3   # (y=1, x=2) and (y=3, x=3)
    G[i, j] = G[j, i] = 1.0
    proj = project_xminus(JointDistribution(G, spec, ImagingMode.POSITION))
    nz = np.argwhere(proj.values != 0)
    assert nz.tolist() == [[1, 3]]
    assert proj.mask.sum() == proj.mask.size - 2   # only (1,3) and (3,1) have weight


def test_xplus_separable_uniform_in_x():
    spec = camera(6, 4)
    rng = np.random.default_rng(3)
    B = rng.random((4, 4)) + 0.5
    B = B + B.T
    G4 = np.einsum("ab,xz->axbz", B, np.ones((6, 6)))
    gamma = JointDistribution(G4.reshape(24, 24), spec, ImagingMode.MOMENTUM)
    proj = project_xplus(gamma, include_diagonal=True)
    np.testing.assert_allclose(proj.values, np.full((4, 4), 6 / 36), rtol=1e-14)


def test_projection_geometry():
    spec = camera(5, 4)
    gamma = integer_gamma(5, 4, 1)
    S = project(gamma, "SUM")
    a, e = spec.step()
    x, y = S.axes()
    assert x[4] == pytest.approx(0, abs=1e-9 * a) and S.values.shape == (7, 9)
    M = project(gamma, ProjectionKind.MINUS)
    assert M.center_index() == (3, 4)
    assert M.diag_bins[3, 4] and M.diag_bins.sum() == 1


def test_xplus_requires_momentum_and_xminus_position():
    with pytest.raises(ModeMismatchError):
        project_xplus(integer_gamma(4, 4, 0, ImagingMode.POSITION))
    with pytest.raises(ModeMismatchError):
        project_xminus(integer_gamma(4, 4, 0, ImagingMode.MOMENTUM))


def test_mirror_columns_need_symmetric_calibration():
    assert mirror_columns(camera(5, 5)) == [(x, 4 - x) for x in range(5)]
    odd = CameraSpec(5, 5, (1.0, 0, -1.7, 0, 1.0, -2.0))
    with pytest.raises(ConfigurationError):
        mirror_columns(odd)


def test_clipped_view():
    gamma = integer_gamma(3, 3, 4)
    assert gamma.values.min() >= 0
    assert gamma.raw.min() < 0
    assert project_sum(gamma, clipped=True).values.min() >= 0
