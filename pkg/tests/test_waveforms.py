import numpy as np
import pytest

from widemimo import (
    WaveformBank,
    bank_for_scene,
    gram,
    gram_matrix,
    make_bank,
    orthogonality_report,
    sample,
    sample_matrix,
    sample_row,
)


@pytest.fixture(scope="module")
def small_bank():
    return make_bank(4)


def test_default_sampling_grid(small_bank):
    assert small_bank.duration == 1e-4
    assert small_bank.sample_period == pytest.approx(2.5e-6)
    assert small_bank.num_samples == 40
    assert small_bank.wave_samples == 40
    assert small_bank.slack == 0.0


def test_unit_energy(small_bank):
    # half-sample alignment keeps the full gate inside the window; the
    # samples sit at k*T_s and the gate is [tau, tau + T)
    tau = 0.5 * small_bank.sample_period
    for m in range(1, 5):
        row = sample_row(small_bank, m, tau)
        energy = np.sum(np.abs(row) ** 2) * small_bank.sample_period
        assert energy == pytest.approx(1.0, rel=1e-12)


def test_zero_delay_gate_clips_one_sample(small_bank):
    # at tau = 0 the sample landing exactly on tau + T is excluded
    assert np.count_nonzero(sample_row(small_bank, 1, 0.0)) == 39


def test_sample_closed_form(small_bank):
    ts, T = small_bank.sample_period, small_bank.duration
    tau = 3.2e-6
    for m, k in [(1, 5), (3, 17), (4, 40)]:
        t_k = k * ts
        if tau <= t_k < tau + T:
            want = np.exp(2j * np.pi * m * (t_k - tau) / T) / np.sqrt(T)
        else:
            want = 0.0
        assert sample(small_bank, m, k, tau) == pytest.approx(want, abs=1e-15)
    # gate edges: t = tau is inside, t = tau + T is not
    assert sample(small_bank, 1, 4, 4 * ts) != 0.0
    assert sample(small_bank, 1, 40, 0.0) == 0.0
    assert sample(small_bank, 1, 40, 0.5 * ts) != 0.0


def test_sample_index_validation(small_bank):
    with pytest.raises(ValueError):
        sample(small_bank, 0, 1, 0.0)
    with pytest.raises(ValueError):
        sample(small_bank, 5, 1, 0.0)
    with pytest.raises(ValueError):
        sample(small_bank, 1, 41, 0.0)


def test_gram_aligned(small_bank):
    ts = small_bank.sample_period
    tau = 0.5 * ts
    g11 = gram(small_bank, tau, tau, 1, 1)
    assert g11.real == pytest.approx(1.0 / ts, rel=1e-12)
    assert abs(g11.imag) * ts < 1e-9
    # distinct tones at equal delay: full-period roots of unity sum to 0
    for m, n in [(1, 2), (2, 4), (1, 3)]:
        assert abs(gram(small_bank, tau, tau, m, n)) * ts < 1e-12


def test_gram_integer_shift_overlap(small_bank):
    # same tone offset by l samples: overlap of 40 - l samples, and the
    # phase ramp cancels on the common grid
    ts, T = small_bank.sample_period, small_bank.duration
    base = 0.5 * ts
    for ell in (1, 7, 39):
        g = gram(small_bank, base, base + ell * ts, 1, 1)
        assert abs(g) == pytest.approx((40 - ell) / T, rel=1e-9)


def test_gram_conjugate_symmetry(small_bank):
    a, b = 1.1e-6, 5.6e-6
    g_ab = gram(small_bank, a, b, 1, 2)
    g_ba = gram(small_bank, b, a, 2, 1)
    assert g_ab == pytest.approx(np.conj(g_ba), rel=1e-12)


def test_gram_matrix_matches_pairwise(small_bank):
    taus = np.array([1.0e-6, 2.2e-6, 0.4e-6, 3.0e-6])
    gm = gram_matrix(small_bank, taus)
    for i in range(4):
        for j in range(4):
            want = gram(small_bank, taus[i], taus[j], i + 1, j + 1)
            assert gm[i, j] == pytest.approx(want, abs=1e-9)
    # hermitian PSD by construction
    np.testing.assert_allclose(gm, gm.conj().T, atol=1e-9)
    assert np.linalg.eigvalsh(gm).min() > -1e-9


def test_sample_matrix_applies_window_offset():
    bank = make_bank(2, window_start=1e-4, window_pad=5)
    tau_abs = np.full((2, 1), 1.2e-4)
    s = sample_matrix(bank, tau_abs)
    assert s.shape == (2, 1, 45)
    manual = sample_row(bank, 1, 1.2e-4 - bank.window_start)
    np.testing.assert_allclose(s[0, 0], manual, atol=1e-15)


def test_bank_for_scene_brackets_echoes(scene, bank, tau0):
    rel = tau0.tau - bank.window_start
    assert np.all(rel > 0)
    # every echo's full duration ends inside the window
    window_end = bank.num_samples * bank.sample_period
    assert np.max(rel) + bank.duration <= window_end
    assert bank.n_waveforms == scene.n_tx
    assert bank.slack > 0
    # with full support the diagonal gram keeps all 40 samples
    for n in range(scene.n_rx):
        for m in range(scene.n_tx):
            g = gram(bank, rel[m, n], rel[m, n], m + 1, m + 1)
            assert g.real == pytest.approx(1.0 / bank.sample_period, rel=1e-12)


def test_orthogonality_report(bank, tau0):
    spread = float(np.ptp(tau0.tau)) + bank.sample_period
    rep = orthogonality_report(bank, delay_spread=spread, grid=9)
    assert set(rep) == {"delay_spread", "worst_cross", "worst_diag_deficit",
                        "eps_orth_declared"}
    assert rep["eps_orth_declared"] == bank.eps_orth
    # off-grid shifts leak a partial geometric sum; the scan bounds it
    assert 0 <= rep["worst_cross"] < 0.2
    assert 0 <= rep["worst_diag_deficit"] < 0.05
    # equal-delay cross terms at an in-window delay are numerically zero
    rel = tau0.tau[0, 0] - bank.window_start
    assert abs(gram(bank, rel, rel, 1, 2)) * bank.sample_period < 1e-12


def test_make_bank_validation():
    with pytest.raises(ValueError):
        make_bank(0)
    with pytest.raises(ValueError):
        make_bank(1, num_samples=0)
    with pytest.raises(ValueError):
        make_bank(1, window_pad=-1)
    with pytest.raises(ValueError):
        WaveformBank(n_waveforms=1, num_samples=1000)  # window of 25 durations


def test_literal_sampling_grid():
    b = make_bank(2, literal_sampling=True, num_samples=40)
    assert b.sample_period == pytest.approx(1e-5)
    # one duration spans only 10 of the 40 coarse samples
    row = sample_row(b, 1, 0.5 * b.sample_period)
    assert np.count_nonzero(row) == 10
