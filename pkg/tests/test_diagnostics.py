import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from augkern.diagnostics import (
    alignment_estimate,
    default_subsample,
    feature_invariance,
    invariance_ratio,
    kernel_ridge_accuracy,
    kernel_target_alignment,
    rank_transformations,
    write_ranking_csv,
)
from augkern.errors import ValidationError
from augkern.objectives import FeatureMap, averaged_kernel, gaussian_mixture
from augkern.transforms import make_sampler

LABELS4 = np.array([1, 1, -1, -1])


def test_alignment_examples():
    KY = (LABELS4[:, None] == LABELS4[None, :]).astype(float)
    assert kernel_target_alignment(KY, LABELS4) == pytest.approx(1.0, abs=1e-15)
    assert kernel_target_alignment(np.ones((4, 4)), LABELS4) == pytest.approx(8 / math.sqrt(128), abs=1e-15)
    assert kernel_target_alignment(1.0 - KY, LABELS4) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_alignment_scale_invariant_and_bounded(seed, scale):
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((8, 3))
    y = rng.integers(0, 3, 8)
    K = F @ F.T
    a = kernel_target_alignment(K, y)
    assert abs(kernel_target_alignment(scale * K, y) - a) <= 1e-12
    assert -1 - 1e-12 <= a <= 1 + 1e-12


def test_alignment_validation():
    with pytest.raises(ValidationError):
        kernel_target_alignment(np.zeros((4, 4)), LABELS4)
    with pytest.raises(ValidationError):
        kernel_target_alignment(np.eye(3), LABELS4)


def _task(seed=0, n=200):
    data = gaussian_mixture(n, separation=2.5, seed=seed)
    return data, FeatureMap.random_fourier(2, 50, seed=seed)


def test_subsample_of_everything_equals_full_alignment():
    data, fm = _task(n=40)
    s = make_sampler("additive-noise", sigma=0.3, discretization="two-point")
    full = kernel_target_alignment(averaged_kernel(data, s, fm), data.labels)
    mean, se = alignment_estimate(data, s, fm, subsample=40, repeats=3)
    assert mean == pytest.approx(full, abs=1e-14) and se == pytest.approx(0.0, abs=1e-14)


def test_subsample_estimate_near_full_value():
    data, fm = _task()
    s = make_sampler("additive-noise", sigma=0.3, discretization="two-point")
    full = kernel_target_alignment(averaged_kernel(data, s, fm), data.labels)
    mean, se = alignment_estimate(data, s, fm, subsample=50, repeats=20, seed=1)
    assert se > 0
    assert abs(mean - full) <= 2 * se


def test_alignment_estimate_validation_and_default():
    data, fm = _task(n=20)
    assert default_subsample(20) == 5 and default_subsample(3) == 2
    with pytest.raises(ValidationError):
        alignment_estimate(data, make_sampler("identity"), fm, subsample=21)
    with pytest.raises(ValidationError):
        alignment_estimate(data, make_sampler("identity"), fm, repeats=0)


def test_ranking_identity_only():
    data, fm = _task()
    rows = rank_transformations(data, fm, {"identity": make_sampler("identity")})
    assert len(rows) == 1
    assert rows[0].delta == 0.0 and not rows[0].recommended


def test_ranking_orders_candidates(tmp_path):
    data, fm = _task()
    cands = {
        "swap-50": make_sampler("cyclic-shift", offsets=[0, 1], weights=[0.5, 0.5]),
        "noise": make_sampler("additive-noise", sigma=0.3, discretization="rademacher", dim=2),
        "identity": make_sampler("identity"),
    }
    rows = rank_transformations(data, fm, cands)
    by = {r.candidate: r for r in rows}
    # swapping the coordinates mixes the separating axis with the nuisance one
    assert by["swap-50"].delta < 0 and not by["swap-50"].recommended
    assert by["noise"].delta >= 0
    assert [r.alignment for r in rows] == sorted((r.alignment for r in rows), reverse=True)
    write_ranking_csv(tmp_path / "r.csv", rows, trailer="manifest: manifest.json")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "candidate,alignment,baseline_alignment,delta,recommended"
    assert len(lines) == 5
    with pytest.raises(ValidationError):
        rank_transformations(data, fm, {})


def test_invariance_examples():
    X = np.array([[0.5, -1.0, 2.0]])
    assert feature_invariance(FeatureMap(), make_sampler("identity"), X) == 0.0
    eps = 0.01
    two = make_sampler("additive-noise", sigma=eps, discretization="two-point")
    assert feature_invariance(FeatureMap(), two, X) == pytest.approx(eps**2, rel=1e-10)
    fm = FeatureMap.random_fourier(3, 20, seed=1)
    assert invariance_ratio(fm, fm, two, X) == 1.0
    assert math.isnan(invariance_ratio(fm, fm, make_sampler("identity"), X))


def test_invariance_grows_with_noise():
    data, fm = _task(n=30)
    vals = [
        feature_invariance(fm, make_sampler("additive-noise", sigma=s, discretization="two-point"), data)
        for s in (0.05, 0.1, 0.2, 0.4)
    ]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_kernel_ridge_accuracy_well_separated():
    train = gaussian_mixture(100, separation=6.0, seed=0)
    test = gaussian_mixture(200, separation=6.0, seed=1)
    fm = FeatureMap.random_fourier(2, 100, seed=0)
    assert kernel_ridge_accuracy(train, test, make_sampler("identity"), fm) > 0.95
    three = gaussian_mixture(150, num_classes=3, separation=6.0, seed=2)
    acc = kernel_ridge_accuracy(three, gaussian_mixture(150, num_classes=3, separation=6.0, seed=3),
                                make_sampler("identity"), fm)
    assert acc > 0.9
