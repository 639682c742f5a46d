import numpy as np
import pytest

from widemimo import (
    ChannelRealization,
    SnrSpec,
    energy_for_snr,
    load_snapshot,
    matched_filter,
    scatterer_gains,
    steering_sums,
    synth_extended,
    synth_null,
    synth_phased_array,
    synth_point,
    true_delays,
)
from widemimo.synth import ctau_pow


def test_snr_spec_validation():
    assert SnrSpec(3.0).linear == pytest.approx(10 ** 0.3)
    with pytest.raises(ValueError):
        SnrSpec(0.0, convention="watts")
    with pytest.raises(ValueError):
        SnrSpec(float("nan"))


def test_transmit_convention_energy(scene, bank):
    assert energy_for_snr(SnrSpec(10.0, "transmit"), scene, bank) \
        == pytest.approx(10.0 * bank.duration)


def test_received_convention_solves_mean_cell_snr(scene, bank, tau0):
    # E is chosen so the cell-averaged post-filter SNR equals the request
    snr = SnrSpec(7.0)
    e = energy_for_snr(snr, scene, bank)
    mf = matched_filter(np.zeros((bank.num_samples, scene.n_rx), complex),
                        bank, tau0, e, scene)
    assert np.mean(mf.cell_snr) == pytest.approx(snr.linear, rel=1e-12)


def test_steered_convention_uses_cluster_sum(pa_scene, pa_bank, pa_tau0):
    snr = SnrSpec(0.0)
    e_steer = energy_for_snr(snr, pa_scene, pa_bank, steering="extended")
    e_path = energy_for_snr(snr, pa_scene, pa_bank)
    s_n = steering_sums(pa_scene, pa_tau0)
    gain = np.mean(np.abs(s_n) ** 2)
    want = snr.linear * pa_scene.n_tx * pa_bank.sample_period / gain
    assert e_steer == pytest.approx(want, rel=1e-12)
    # the cluster combines nearly coherently, so less energy is needed
    assert e_steer < e_path / (pa_scene.n_tx ** 2 - 0.5)
    with pytest.raises(ValueError):
        energy_for_snr(snr, pa_scene, pa_bank, steering="beamformed")


def test_noise_only_unit_variance(scene, bank):
    # CN(0, 1) per entry: unit variance split evenly across re/im
    samples = np.concatenate(
        [synth_null(scene, bank, seed=s).r.ravel() for s in range(40)])
    assert samples.size >= 3000
    assert np.var(samples) == pytest.approx(1.0, rel=0.05)
    assert abs(np.mean(samples)) < 0.05
    assert np.var(samples.real) == pytest.approx(0.5, rel=0.08)


def test_h1_over_h0_filter_power_ratio(scene, bank, tau0):
    """Average per-cell matched-filter output power: H1/H0 = 1 + snr."""
    snr = SnrSpec(3.0)
    e = energy_for_snr(snr, scene, bank)
    trials = 1500
    p1 = np.zeros(trials)
    p0 = np.zeros(trials)
    g11 = 1.0 / bank.sample_period
    for s in range(trials):
        h1 = synth_extended(scene, bank, tau0, snr, seed=s)
        h0 = synth_null(scene, bank, seed=trials + s)
        m1 = matched_filter(h1.r, bank, tau0, e, scene)
        m0 = matched_filter(h0.r, bank, tau0, e, scene)
        # normalized per-cell output power, averaged over cells
        p1[s] = np.mean(np.abs(m1.b) ** 2) / g11
        p0[s] = np.mean(np.abs(m0.b) ** 2) / g11
    ratio = p1.mean() / p0.mean()
    want = 1.0 + snr.linear
    # MC error on the ratio is a couple percent at this trial count
    assert ratio == pytest.approx(want, rel=0.06)


def test_pa_steered_power_ratio(pa_scene, pa_bank, pa_tau0):
    """Per-receiver power through the shared-waveform filter: 1 + snr."""
    snr = SnrSpec(3.0)
    e = energy_for_snr(snr, pa_scene, pa_bank, steering="extended")
    trials = 1500
    p1 = np.zeros(trials)
    p0 = np.zeros(trials)
    for s in range(trials):
        h1 = synth_phased_array(pa_scene, pa_bank, pa_tau0, snr, seed=s)
        h0 = synth_null(pa_scene, pa_bank, seed=trials + s)
        m1 = matched_filter(h1.r, pa_bank, pa_tau0, e, pa_scene)
        m0 = matched_filter(h0.r, pa_bank, pa_tau0, e, pa_scene)
        p1[s] = np.mean(np.abs(m1.pa_corr) ** 2)
        p0[s] = np.mean(np.abs(m0.pa_corr) ** 2)
    assert p1.mean() / p0.mean() == pytest.approx(1.0 + snr.linear, rel=0.06)


def test_extended_signal_assembly(scene, bank, tau0):
    # fixed unit gains, no noise: each receiver sees the sum of its two
    # delayed, loss-scaled waveforms
    e = 4.2e-9
    ch = ChannelRealization("extended", gains=np.ones((2, 2), complex))
    snap = synth_extended(scene, bank, tau0, None, seed=0, channel=ch,
                          noise_scale=0.0, energy=e)
    from widemimo import sample_matrix
    s = sample_matrix(bank, tau0.tau)
    amp = np.sqrt(e / 2) * ctau_pow(scene.c, tau0.tau, -scene.path_loss_exp)
    manual = np.einsum("mn,mnk->kn", amp, s)
    np.testing.assert_allclose(snap.r, manual, rtol=1e-12)
    assert snap.meta.hypothesis == "H1"
    assert snap.meta.energy == e


def test_energy_scaling_exact(scene, bank, tau0):
    ch = ChannelRealization("extended",
                            gains=np.array([[1.0, 2j], [0.5, -1.0]]))
    a = synth_extended(scene, bank, tau0, None, seed=1, channel=ch,
                       noise_scale=0.0, energy=1e-9)
    b = synth_extended(scene, bank, tau0, None, seed=1, channel=ch,
                       noise_scale=0.0, energy=4e-9)
    np.testing.assert_allclose(b.r, 2.0 * a.r, rtol=1e-12)


def test_determinism_and_stream_separation(scene, bank, tau0):
    a = synth_extended(scene, bank, tau0, SnrSpec(5.0), seed=42)
    b = synth_extended(scene, bank, tau0, SnrSpec(5.0), seed=42)
    np.testing.assert_array_equal(a.r, b.r)
    assert a.channel.gains is not b.channel.gains
    np.testing.assert_array_equal(a.channel.gains, b.channel.gains)
    # changing the energy must not change the underlying draws
    c = synth_extended(scene, bank, tau0, SnrSpec(11.0), seed=42)
    np.testing.assert_array_equal(c.channel.gains, a.channel.gains)
    d = synth_extended(scene, bank, tau0, SnrSpec(5.0), seed=43)
    assert not np.array_equal(d.r, a.r)


def test_point_target_gains(scene, bank, tau0):
    snap = synth_point(scene, bank, tau0, None, seed=0, noise_scale=0.0,
                       energy=1e-9, zeta_mode="fixed_one")
    from widemimo import sample_matrix
    f_c = scene.carrier_freq_hz
    gains = np.exp(-2j * np.pi * f_c * tau0.tau)
    amp = np.sqrt(1e-9 / 2) * ctau_pow(scene.c, tau0.tau, -2.0)
    manual = np.einsum("mn,mnk->kn", amp * gains, sample_matrix(bank, tau0.tau))
    np.testing.assert_allclose(snap.r, manual, rtol=1e-12)
    assert snap.channel.reflectivity == 1.0 + 0.0j


def test_point_zeta_modes(scene, bank, tau0):
    u = synth_point(scene, bank, tau0, SnrSpec(0.0), seed=5,
                    zeta_mode="unit_phase")
    assert abs(abs(u.channel.reflectivity) - 1.0) < 1e-12
    r = synth_point(scene, bank, tau0, SnrSpec(0.0), seed=5,
                    zeta_mode="rayleigh")
    assert abs(r.channel.reflectivity) != pytest.approx(1.0)
    with pytest.raises(ValueError):
        synth_point(scene, bank, tau0, SnrSpec(0.0), seed=5, zeta_mode="bogus")


def test_scatterer_gains_statistics(scene):
    g = np.stack([scatterer_gains(scene, seed=s) for s in range(800)])
    assert g.shape == (800, 2, 2)
    # construction targets unit average power per cell
    assert np.mean(np.abs(g) ** 2) == pytest.approx(1.0, rel=0.12)
    assert abs(np.mean(g)) < 0.05
    np.testing.assert_array_equal(scatterer_gains(scene, seed=3),
                                  scatterer_gains(scene, seed=3))


def test_extended_with_scatterer_channel(scene, bank, tau0):
    snap = synth_extended(scene, bank, tau0, SnrSpec(10.0), seed=9,
                          use_scatterers=True)
    np.testing.assert_array_equal(snap.channel.gains,
                                  scatterer_gains(scene, seed=9))


def test_phased_array_uses_single_waveform(pa_scene, pa_bank, pa_tau0):
    snap = synth_phased_array(pa_scene, pa_bank, pa_tau0, None, seed=2,
                              noise_scale=0.0, energy=1e-9)
    from widemimo import sample_row
    wave = sample_row(pa_bank, 1, pa_tau0.tau[0, 0] - pa_bank.window_start)
    s_n = steering_sums(pa_scene, pa_tau0)
    amp = np.sqrt(1e-9 / 2) * snap.channel.reflectivity
    np.testing.assert_allclose(snap.r, amp * s_n[None, :] * wave[:, None],
                               rtol=1e-12)


def test_phased_array_point_model(pa_scene, pa_bank, pa_tau0):
    ext = synth_phased_array(pa_scene, pa_bank, pa_tau0, None, seed=4,
                             noise_scale=0.0, energy=1e-9,
                             target_model="extended")
    pt = synth_phased_array(pa_scene, pa_bank, pa_tau0, None, seed=4,
                            noise_scale=0.0, energy=1e-9,
                            target_model="point")
    scale = np.max(np.abs(ext.r))
    # reflected steering phase and a separate reflectivity draw: the two
    # models must not produce the same samples
    assert np.max(np.abs(ext.r - pt.r)) > 0.1 * scale
    with pytest.raises(ValueError):
        synth_phased_array(pa_scene, pa_bank, pa_tau0, SnrSpec(0.0), seed=4,
                           target_model="blob")


def test_steering_sums_coherence(pa_scene, pa_tau0):
    # 1 m pitch: phase spread across the cluster is tiny, so the sum is
    # nearly the full coherent gain
    s_n = steering_sums(pa_scene, pa_tau0)
    loss = ctau_pow(pa_scene.c, pa_tau0.tau, -pa_scene.path_loss_exp)
    assert np.all(np.abs(s_n) > 0.99 * loss.sum(axis=0))
    assert np.all(np.abs(s_n) <= loss.sum(axis=0) + 1e-18)


def test_null_snapshot_metadata(scene, bank):
    snap = synth_null(scene, bank, seed=0)
    assert snap.meta.hypothesis == "H0"
    assert np.isnan(snap.meta.energy)
    annotated = synth_null(scene, bank, seed=0, snr=SnrSpec(5.0))
    assert annotated.meta.energy > 0
    np.testing.assert_array_equal(annotated.r, snap.r)


def test_save_load_roundtrip(tmp_path, scene, bank, tau0):
    snap = synth_extended(scene, bank, tau0, SnrSpec(5.0), seed=77)
    prefix = str(tmp_path / "snap")
    bin_path, json_path = snap_paths = __import__("widemimo").save_snapshot(
        snap, prefix)
    assert bin_path.endswith(".bin") and json_path.endswith(".json")
    back = load_snapshot(prefix)
    np.testing.assert_array_equal(back.r, snap.r)
    np.testing.assert_array_equal(np.atleast_1d(back.meta.seed).astype(int),
                                  np.atleast_1d(snap.meta.seed))
    assert back.meta.scene_hash == scene.content_hash()
    np.testing.assert_array_equal(back.meta.tau_true, tau0.tau)


def test_energy_argument_validation(scene, bank, tau0):
    with pytest.raises(ValueError):
        synth_extended(scene, bank, tau0, None, seed=0)  # no snr, no energy
