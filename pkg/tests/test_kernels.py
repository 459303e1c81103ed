import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marginal.kernels import (
    CacheFormatError,
    KernelError,
    ModelKind,
    RangeError,
    SizingError,
    TruncationError,
    beta_schedule,
    block_boundaries,
    build_kernel,
    cached_kernel,
    cauchy_norm_const,
    llt_diagnostic,
    load_kernel,
    overlap_table,
    renewal_llt_constant,
    return_probability,
    save_kernel,
    triple_norm_zeta,
)


@pytest.fixture(scope="module")
def srw():
    return build_kernel(ModelKind.SRW2D, 40)


@pytest.fixture(scope="module")
def cauchy():
    return build_kernel(ModelKind.CAUCHY1D, 24, 1e-3)


@pytest.fixture(scope="module")
def renewal():
    return build_kernel(ModelKind.RENEWAL_HALF, 4096)


@pytest.fixture(scope="module")
def degenerate():
    return build_kernel(ModelKind.RENEWAL_HALF, 200, degenerate=True)


def test_model_dimensions():
    assert [m.dim for m in (ModelKind.SRW2D, ModelKind.CAUCHY1D, ModelKind.RENEWAL_HALF)] == [2, 1, 0]
    assert ModelKind.parse("srw2d") is ModelKind.SRW2D
    with pytest.raises(ValueError):
        ModelKind.parse("levy")


def test_srw_one_step(srw):
    q1 = srw.q(1)
    expected = np.zeros((3, 3))
    expected[0, 1] = expected[2, 1] = expected[1, 0] = expected[1, 2] = 0.25
    assert np.array_equal(q1, expected)


def test_srw_two_step_return(srw):
    assert srw.q_at(2, (0, 0)) == pytest.approx(0.25, abs=1e-15)


def test_srw_mass_parity_symmetry(srw):
    for n in range(0, 41):
        q = srw.q(n)
        assert abs(math.fsum(q.ravel()) - 1.0) < 1e-12
        x = np.arange(-n, n + 1)
        odd = (x[:, None] + x[None, :] - n) % 2 != 0
        assert np.all(q[odd] == 0.0)
        assert np.array_equal(q, q[::-1, ::-1])
        assert np.array_equal(q, q.T)


def test_srw_chapman_kolmogorov(srw):
    from scipy.signal import convolve2d

    for m, n in [(1, 1), (2, 3), (5, 4), (7, 9)]:
        lhs = srw.q(m + n)
        rhs = convolve2d(srw.q(m), srw.q(n))
        assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_srw_overlap_examples(srw):
    ov = overlap_table(srw)
    assert ov.r[1] == pytest.approx(0.25, abs=1e-15)
    assert ov.r[2] == pytest.approx(9 / 64, abs=1e-15)
    assert ov.R[2] == pytest.approx(25 / 64, abs=1e-15)


def test_overlap_identity_walks(srw, cauchy):
    ov = overlap_table(srw)
    for n in range(1, 41):
        assert abs(ov.r[n] - return_probability(ModelKind.SRW2D, n)) < 1e-12
    ovc = overlap_table(cauchy)
    for n in range(1, 13):
        assert abs(ovc.r[n] - return_probability(ModelKind.CAUCHY1D, n, cauchy)) < 1e-12


def test_prefix_sum_identity(srw, cauchy, renewal):
    for k in (srw, cauchy, renewal):
        ov = overlap_table(k)
        # exact up to the rounding of the stored prefix sums
        assert np.all(np.abs(np.diff(ov.R) - ov.r[1:]) <= 2 * np.spacing(ov.R[1:]))
        assert ov.R[0] == 0.0


def test_srw_overlap_slow_variation(srw):
    k = build_kernel(ModelKind.SRW2D, 2048)
    ov = overlap_table(k)
    ratios = [ov.R[2 * n] / ov.R[n] for n in (16, 32, 64, 128, 256, 512, 1024)]
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    assert all(r > 1.0 for r in ratios)


def test_cauchy_tail_and_symmetry(cauchy):
    assert np.all(cauchy.tail_mass <= cauchy.tail_tol)
    for n in range(1, cauchy.n_max + 1):
        q = cauchy.q(n)
        assert np.all(q >= 0)
        assert np.allclose(q, q[::-1], atol=1e-15)
    assert cauchy.q(1)[int(cauchy.window_radius[1])] == pytest.approx(cauchy_norm_const())


def test_cauchy_chapman_kolmogorov(cauchy):
    W = int(cauchy.window_radius[1])
    for m, n in [(1, 1), (2, 3), (4, 4)]:
        lhs = cauchy.q(m + n)
        rhs = np.convolve(cauchy.q(m), cauchy.q(n))[W : 3 * W + 1]
        assert np.max(np.abs(lhs - rhs)) <= 2 * cauchy.tail_tol


def test_cauchy_truncation_error():
    with pytest.raises(TruncationError) as err:
        build_kernel(ModelKind.CAUCHY1D, 8, 1e-3, max_window=5)
    assert err.value.attained > 1e-3


def test_sizing_error():
    with pytest.raises(SizingError):
        build_kernel(ModelKind.SRW2D, 1000, max_entries=1000)
    with pytest.raises(SizingError):
        build_kernel(ModelKind.CAUCHY1D, 100, 1e-6, max_entries=1000)


def test_renewal_law(renewal, degenerate):
    f = renewal.step
    assert f[0] == 0.0
    assert math.fsum(f) + renewal.never_return_mass == pytest.approx(1.0, abs=1e-15)
    q = renewal.renewal_q
    assert q[0] == 1.0 and np.all((q > 0) & (q <= 1))
    assert np.allclose(q + renewal.tail_mass, 1.0)
    assert np.all(degenerate.renewal_q == 1.0)
    assert overlap_table(degenerate).R_at(200) == 200.0


def test_renewal_recursion(renewal):
    q, f = renewal.renewal_q, renewal.step
    for n in (1, 2, 17, 300):
        assert q[n] == pytest.approx(sum(f[m] * q[n - m] for m in range(1, n + 1)), rel=1e-12)


def test_renewal_local_limit(renewal):
    q = renewal.renewal_q
    n = 4096
    assert abs(math.sqrt(n) * q[n] - renewal_llt_constant()) < 1e-3
    assert llt_diagnostic(renewal, n) < 1e-3


def test_beta_schedule_examples(srw, degenerate):
    assert beta_schedule(overlap_table(degenerate), 100, 1.0) == pytest.approx(0.1, abs=1e-15)
    assert beta_schedule(overlap_table(degenerate), 100, 0.0) == 0.0
    assert beta_schedule(overlap_table(srw), 2, 1.0) == pytest.approx(1.6, abs=1e-14)
    with pytest.raises(RangeError):
        beta_schedule(overlap_table(srw), 41, 1.0)


def test_block_examples(srw, degenerate):
    assert block_boundaries(overlap_table(degenerate), 8, 4).boundaries == (0, 2, 4, 6, 8)
    assert block_boundaries(overlap_table(degenerate), 8, 1).boundaries == (0, 8)
    assert block_boundaries(overlap_table(srw), 2, 2).boundaries == (0, 1, 2)
    with pytest.raises(ValueError):
        block_boundaries(overlap_table(degenerate), 4, 5)


@settings(max_examples=60, deadline=None)
@given(N=st.integers(2, 4096), M=st.integers(1, 40))
def test_block_partition_invariant(renewal, N, M):
    ov = overlap_table(renewal)
    M = min(M, N)
    b = block_boundaries(ov, N, M)
    R, R_N = ov.R, ov.R[N]
    t = b.boundaries
    assert t[0] == 0 and t[-1] == N and len(t) == M + 1
    for i in range(1, M):
        assert R[t[i]] >= i / M * R_N
        assert R[t[i] - 1] < i / M * R_N
    rmax = ov.r[1 : N + 1].max()
    for i in range(1, M + 1):
        lo, hi = b.interval(i)
        s = R[t[i]] - R[t[i - 1]]
        assert R_N / M - rmax - 1e-12 <= s <= R_N / M + rmax + 1e-12
        assert (lo, hi) == (t[i - 1] + 1, t[i] + 1)


def test_triple_norm_examples(srw, degenerate):
    ov = overlap_table(build_kernel(ModelKind.SRW2D, 30))
    assert triple_norm_zeta(ov, 30, ((0, 0), 0), ((3, 4), 10))[0] == 25
    assert triple_norm_zeta(ov, 30, ((1, 2), 3), ((1, 2), 3)) == (0, 0.0)
    norm, z = triple_norm_zeta(overlap_table(degenerate), 100, 0, 50)
    assert norm == 50 and z == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(RangeError):
        triple_norm_zeta(ov, 30, ((0, 0), 0), ((10, 0), 0))


def test_llt_examples(srw, cauchy):
    # n = 2 on the even sublattice: compare 2 q_2 scaled by the variance against 2 g
    assert llt_diagnostic(srw, 2) >= 0.0
    assert llt_diagnostic(srw, 40) < llt_diagnostic(srw, 4)
    c1 = llt_diagnostic(cauchy, 1)
    assert c1 == pytest.approx(abs(cauchy.q_at(1, 0) - 1 / math.pi), abs=1e-12)


def test_cache_roundtrip(tmp_path, cauchy, renewal, srw):
    for k in (cauchy, renewal, srw):
        path = tmp_path / f"{k.model.value}.bin"
        save_kernel(k, path)
        back = load_kernel(path)
        assert back.model is k.model and back.n_max == k.n_max
        for a, b in zip(k.masses, back.masses):
            assert np.array_equal(a, b)
        assert np.array_equal(k.step, back.step)
        assert np.array_equal(k.tail_mass, back.tail_mass)
        save_kernel(back, tmp_path / "again.bin")
        assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()


def test_cache_rejects_corrupt(tmp_path, renewal):
    path = tmp_path / "k.bin"
    save_kernel(renewal, path)
    data = path.read_bytes()
    assert data[:5] == b"MRGK1"
    (tmp_path / "bad.bin").write_bytes(b"XXXXX" + data[5:])
    (tmp_path / "short.bin").write_bytes(data[:-3])
    (tmp_path / "long.bin").write_bytes(data + b"\0")
    for name in ("bad.bin", "short.bin", "long.bin"):
        with pytest.raises(CacheFormatError):
            load_kernel(tmp_path / name)


def test_cached_kernel_reuse(tmp_path):
    a = cached_kernel(ModelKind.CAUCHY1D, 6, 1e-2, cache_dir=tmp_path)
    files = list(tmp_path.iterdir())
    assert len(files) == 1
    b = cached_kernel(ModelKind.CAUCHY1D, 6, 1e-2, cache_dir=tmp_path)
    for x, y in zip(a.masses, b.masses):
        assert np.array_equal(x, y)


def test_range_errors(renewal):
    with pytest.raises(RangeError):
        renewal.q(5000)
    with pytest.raises(KernelError):
        build_kernel(ModelKind.SRW2D, 3).survival
    with pytest.raises(ValueError):
        build_kernel(ModelKind.SRW2D, 0)
