import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from augkern.bundled import load_chain
from augkern.chain import ChainSpec, resolvent, stationary_distribution
from augkern.errors import (
    DetailedBalanceError,
    SeriesDivergenceError,
    SurjectivityError,
    ValidationError,
)
from augkern.kernel import (
    KernelMatrix,
    bayes_classify,
    induced_kernel,
    input_kernel,
    jitter_kernel_check,
    kernel_classify,
    reconstruct_stationary,
    reversing_measure,
    update_kernel_add,
    update_kernel_add_info,
    verify_kernel_properties,
)
from augkern.transforms import AugmentationMatrix, StateSpace, build_finite_augmentation

# first oracle run of jitter_kernel_check(41, 1.0, 1.0): 0.028661055306143685
JITTER_DEVIATION_FIXTURE = 0.0287


def test_two_state_kernel(two_state):
    psi, K = induced_kernel(two_state)
    np.testing.assert_allclose(K.matrix, [[4 / 3, 2 / 3], [2 / 3, 4 / 3]], atol=1e-15)
    np.testing.assert_array_equal(psi, [0.5, 0.0])
    np.testing.assert_allclose(reconstruct_stationary(psi, K), [2 / 3, 1 / 3], atol=1e-15)
    rep = verify_kernel_properties(K)
    assert rep.ok
    assert rep.min_eigenvalue == pytest.approx(2 / 3, abs=1e-14)


def test_identity_augmentation_gives_diagonal_kernel():
    sp = StateSpace.grid(4)
    spec = ChainSpec(sp, [(AugmentationMatrix(np.eye(4), sp), 1.0)], [(i, 0.25) for i in range(4)])
    _, K = induced_kernel(spec)
    np.testing.assert_allclose(K.matrix, 4 * np.eye(4), atol=1e-14)


def test_jitter_kernel_rows_decay_with_distance():
    sp = StateSpace.grid(21)
    jit = build_finite_augmentation(sp, "discretized-jitter", sigma=1.2)
    spec = ChainSpec(sp, [(jit, 2.0)], [(10, 1.0)])
    _, K = induced_kernel(spec, pi0="reversible")
    for i in range(21):
        row = K.matrix[i]
        assert np.all(np.diff(row[i:]) < 0)
        assert np.all(np.diff(row[: i + 1]) > 0)


def test_reconstruction_with_non_uniform_reversing_measure():
    spec = load_chain("jitter_two_class_40")
    p0 = reversing_measure(spec)
    assert np.ptp(p0) > 1e-3
    psi, K = induced_kernel(spec, pi0="reversible")
    pi = stationary_distribution(spec)
    assert np.abs(psi @ K.matrix - pi).max() < 1e-9
    assert verify_kernel_properties(K).ok
    assert set(np.flatnonzero(psi)) == set(spec.dataset_states)


def test_literal_weighting_fails_for_non_uniform_pi0():
    # psi = P rho with K = (P M)^{-1} only reconstructs pi when pi0 is uniform
    spec = load_chain("jitter_two_class_40")
    p0 = reversing_measure(spec)
    n = len(spec.space)
    M = np.eye(n) * (spec.beta + 1) - spec.A
    K_lit = np.linalg.inv(p0[:, None] * M)
    err = np.abs((p0 * spec.rho) @ K_lit - stationary_distribution(spec)).max()
    assert err > 1e-3


def test_uniform_pi0_matches_literal_formulas(random_specs):
    for spec in random_specs[:5]:
        n = len(spec.space)
        p0 = np.full(n, 1.0 / n)
        M = np.eye(n) * (spec.beta + 1) - spec.A
        psi, K = induced_kernel(spec)
        np.testing.assert_allclose(K.matrix, np.linalg.inv(p0[:, None] * M), rtol=1e-10)
        np.testing.assert_allclose(psi, p0 * spec.rho, rtol=1e-14)


def test_reversing_measure_uniform_for_symmetric(random_specs):
    spec = random_specs[0]
    np.testing.assert_allclose(reversing_measure(spec), 1 / len(spec.space), rtol=1e-12)


def test_detailed_balance_violation_reports_worst_pair():
    sp = StateSpace.grid(3)
    a = AugmentationMatrix([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]], sp)
    spec = ChainSpec(sp, [(a, 1.0)], [(0, 1.0)])
    with pytest.raises(DetailedBalanceError) as info:
        induced_kernel(spec)
    i, u, v, gap = info.value.worst
    assert i == 0 and gap == pytest.approx(1 / 3)
    assert a.matrix[u, v] != a.matrix[v, u]


def test_pi0_must_be_positive(two_state):
    with pytest.raises(ValidationError):
        induced_kernel(two_state, pi0=[1.0, 0.0])
    with pytest.raises(ValidationError):
        induced_kernel(two_state, pi0="nope")


def test_surjectivity_required():
    sp = StateSpace.grid(2)
    spec = ChainSpec(sp, [(AugmentationMatrix(np.eye(2), sp), 1.0)], [(0, 1.0)])
    with pytest.raises(SurjectivityError) as info:
        induced_kernel(spec)
    assert info.value.unreachable == ["1:+1"]


def test_verify_kernel_properties_examples():
    assert verify_kernel_properties(np.eye(3)).ok
    rep = verify_kernel_properties(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert not rep.positive_definite and rep.min_eigenvalue == pytest.approx(-1.0)
    rep = verify_kernel_properties(np.array([[1.0, 0.5], [0.4, 1.0]]))
    assert not rep.symmetric


def test_kernel_classify_single_training_point():
    sp = StateSpace.grid(6, labels=(-1, 1))
    jit = build_finite_augmentation(sp, "discretized-jitter", sigma=1.0)
    spec = ChainSpec(sp, [(jit, 1.0)], [(sp.index["2:-1"], 1.0)])
    # the +1 block is unreachable from a single -1 example
    with pytest.raises(SurjectivityError):
        induced_kernel(spec)
    sp1 = StateSpace.grid(6)
    jit1 = build_finite_augmentation(sp1, "discretized-jitter", sigma=1.0)
    spec1 = ChainSpec(sp1, [(jit1, 1.0)], [(2, 1.0)])
    psi, K = induced_kernel(spec1, pi0="reversible")
    assert all(kernel_classify(psi, K, None, x) == 1 for x in range(6))


def test_kernel_classify_two_state(two_state):
    psi, K = induced_kernel(two_state)
    assert [kernel_classify(psi, K, {0: 1}, x) for x in (0, 1)] == [1, 1]
    assert [kernel_classify(psi, K, [1], x, dataset=[0]) for x in (0, 1)] == [1, 1]


def _two_label_spec(rng, n_pos):
    sp = StateSpace.grid(n_pos, labels=(-1, 1))
    sigma = rng.uniform(0.5, 3.0)
    jit = build_finite_augmentation(sp, "discretized-jitter", sigma=sigma)
    k = int(rng.integers(1, min(3, n_pos // 2) + 1))
    pos = rng.choice(n_pos, size=2 * k, replace=False)
    data = [(sp.index[f"{p}:+1"], 1.0) for p in pos[:k]] + [(sp.index[f"{p}:-1"], 1.0) for p in pos[k:]]
    g = rng.dirichlet(np.ones(2 * k))
    g[-1] = 1 - g[:-1].sum()
    data = [(s, w) for (s, _), w in zip(data, g)]
    return ChainSpec(sp, [(jit, rng.uniform(0.1, 10))], data)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 100))
def test_kernel_classifier_equals_bayes_exhaustively(seed, n_pos):
    spec = _two_label_spec(np.random.default_rng(seed), n_pos)
    psi, K = induced_kernel(spec, pi0="reversible")
    pi = stationary_distribution(spec)
    sp = spec.space
    for x in range(len(sp)):
        e = sp.embeddings[x]
        pp, pm = pi[sp.find(e, 1)], pi[sp.find(e, -1)]
        if abs(pp - pm) <= 1e-10:
            continue  # below solver precision the classifier reports a tie and uses its own rule
        assert kernel_classify(psi, K, None, x) == bayes_classify(pi, sp, e)


def test_kernel_classify_tie_goes_to_nearest_training_state():
    sp = StateSpace.grid(3, labels=(-1, 1))
    spec = ChainSpec(sp, [(build_finite_augmentation(sp, "dropout-to-neighbor", p=1.0), 1.0)],
                     [(sp.index["0:+1"], 0.5), (sp.index["2:-1"], 0.5)])
    psi, K = induced_kernel(spec)
    # mirrored weights tie exactly at the middle input; both training states
    # are equidistant, so the first in state order (2:-1) wins
    assert kernel_classify(psi, K, None, sp.index["1:+1"]) == -1
    assert kernel_classify(psi, K, None, sp.index["0:+1"]) == 1
    assert kernel_classify(psi, K, None, sp.index["2:+1"]) == -1


def test_bayes_classify_examples():
    sp = StateSpace.grid(2, labels=(-1, 1))
    pi = np.array([0.0, 0.1, 0.0, 0.3])
    assert bayes_classify(pi, sp, [1.0]) == 1
    assert bayes_classify(np.array([0.25] * 4), sp, [0.0]) == -1
    with pytest.raises(ValidationError):
        bayes_classify(pi, sp, [5.0])


def test_input_kernel_rejects_mismatched_blocks():
    sp = StateSpace.grid(2, labels=(0, 1))
    K = KernelMatrix(np.diag([1.0, 1.0, 2.0, 2.0]), sp)
    with pytest.raises(ValidationError):
        input_kernel(K)


def test_update_kernel_trivial_cases(two_state):
    K = resolvent(two_state)
    np.testing.assert_array_equal(update_kernel_add(K, np.array([[0.0, 1.0], [1.0, 0.0]]), 0.0).matrix, K)
    np.testing.assert_allclose(update_kernel_add(K, np.eye(2), 3.0).matrix, K, atol=0)


def test_update_kernel_two_state_swap(two_state):
    K = resolvent(two_state)
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    Ku, used, radius = update_kernel_add_info(K, swap, 0.5)
    direct = np.linalg.inv(np.eye(2) * 2.5 - two_state.A - 0.5 * swap)
    assert np.abs(Ku.matrix - direct).max() < 1e-8
    assert radius < 1 and used > 1


def test_update_kernel_divergence_and_truncation(two_state):
    K = resolvent(two_state)
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(SeriesDivergenceError):
        update_kernel_add(K, swap, 5.0)
    _, used, _ = update_kernel_add_info(K, swap, 0.5, truncation=3)
    assert used == 3
    with pytest.raises(ValidationError):
        update_kernel_add(K, swap, 0.5, truncation=0)


def test_jitter_kernel_fixture():
    rep = jitter_kernel_check(41, 1.0, 1.0)
    assert rep.max_relative_deviation <= JITTER_DEVIATION_FIXTURE
    assert rep.fitted_bandwidth == pytest.approx(1.2716067256785748, rel=1e-6)


def test_jitter_kernel_small_beta_recovers_sigma():
    for sigma in (1.0, 2.0):
        rep = jitter_kernel_check(41, sigma, 1e-6)
        assert abs(rep.fitted_bandwidth - sigma) <= 0.1 * sigma


def test_jitter_kernel_bandwidth_grows_with_sigma():
    widths = [jitter_kernel_check(41, s, 1.0).fitted_bandwidth for s in (0.75, 1.5, 3.0)]
    assert widths[0] < widths[1] < widths[2]


def test_jitter_kernel_validation():
    with pytest.raises(ValidationError):
        jitter_kernel_check(3, 1.0, 1.0)
    with pytest.raises(ValidationError):
        jitter_kernel_check(41, 0.0, 1.0)


def test_kernel_csv(tmp_path, two_state):
    _, K = induced_kernel(two_state)
    K.to_csv(tmp_path / "k.csv")
    rows = (tmp_path / "k.csv").read_text().splitlines()
    assert rows[0] == "s0,s1"
    assert [float(v) for v in rows[1].split(",")] == list(K.matrix[0])


def test_solve_agrees_with_dense_inverse(random_specs):
    spec = random_specs[3]
    psi, K = induced_kernel(spec)
    n = len(spec.space)
    M = (np.eye(n) * (spec.beta + 1) - spec.A) / n
    np.testing.assert_allclose(K.matrix, scipy.linalg.inv(M), rtol=1e-9)
