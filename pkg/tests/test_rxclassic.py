import numpy as np
import pytest

from hnrsim import channel as ch
from hnrsim import fec, link, phy
from hnrsim import rxclassic as rx

SPEC = phy.GridSpec()
TOY = phy.GridSpec(16, 0, 0, 6, (1, 4))


def _layout(spec=SPEC, const="qpsk", pcm=None):
    return link.FrameLayout(spec, phy.constellation(const), pcm)


def _rx_grid(H, tx_values, spec):
    return phy.ResourceGrid(H * tx_values, spec)


def _tx(layout, seed=0):
    return link.random_frame(layout, np.random.default_rng(seed))


# ---------------------------------------------------------------------- LS

def test_ls_constant_channel():
    lay = _layout()
    f = _tx(lay)
    H = np.full((1, SPEC.num_symbols, SPEC.fft_size), 0.5 + 0.5j)
    est = rx.ls_estimate(_rx_grid(H, f.grid.values, SPEC), lay.pilots, SPEC)
    ks = SPEC.usable_subcarriers
    np.testing.assert_allclose(est.H[..., ks], 0.5 + 0.5j, rtol=0, atol=1e-15)


def test_ls_linear_in_time_exact():
    lay = _layout()
    f = _tx(lay)
    l = np.arange(SPEC.num_symbols)
    k = np.arange(SPEC.fft_size)
    H = ((0.3 + 0.1j) * l[:, None] + 0.01j * k[None, :] + 1.0)[None]
    est = rx.ls_estimate(_rx_grid(H, f.grid.values, SPEC), lay.pilots, SPEC)
    p0, p1 = SPEC.pilot_symbols
    ks = SPEC.usable_subcarriers
    assert np.max(np.abs(est.H[0, p0:p1 + 1][:, ks] - H[0, p0:p1 + 1][:, ks])) <= 1e-12
    # nearest-pilot extrapolation outside the span
    np.testing.assert_array_equal(est.H[0, 0, ks], est.H[0, p0, ks])
    np.testing.assert_array_equal(est.H[0, -1, ks], est.H[0, p1, ks])


def test_ls_at_pilots_equals_y_conj_p():
    lay = _layout()
    f = _tx(lay)
    real = ch.realize(ch.ChannelSpec(), SPEC, 1, 0.2)
    y = ch.apply(f.grid, real, 2)
    est = rx.ls_estimate(y, lay.pilots, SPEC, 0.2)
    _, yp = phy.grid_demap(y, SPEC)
    _, hp = phy.grid_demap(est.H, SPEC)
    assert np.max(np.abs(hp - yp * np.conj(lay.pilots))) <= 1e-12


def test_ls_noise_mse():
    spec = phy.GridSpec(fft_size=500, guard_left=0, guard_right=0, num_symbols=100,
                        pilot_symbols=tuple(range(0, 100, 1)))
    # every symbol is a pilot: 5e4 pilot REs per antenna, two antennas
    lay = link.FrameLayout(spec, phy.constellation("qpsk"))
    g = phy.grid_map(np.zeros(0), lay.pilots, spec)
    real = ch.realize(ch.ChannelSpec(model="ideal", num_rx=2), spec, 0, 0.1)
    est = rx.ls_estimate(ch.apply(g, real, 3), lay.pilots, spec, 0.1)
    err = np.abs(est.H - 1.0) ** 2
    # |e|^2 for CN(0, s2) is exponential with std s2
    assert abs(err.mean() - 0.1) < 3 * 0.1 / np.sqrt(err.size)
    np.testing.assert_allclose(est.error_var, 0.1)


def test_ls_needs_pilots():
    spec = phy.GridSpec(pilot_symbols=())
    with pytest.raises(ValueError):
        rx.ls_estimate(phy.ResourceGrid(np.zeros((1, 16, 129), complex), spec),
                       np.zeros((0, 105)), spec)


# ------------------------------------------------------------------- LMMSE

def test_zero_forcing_limit():
    lay = _layout()
    f = _tx(lay)
    H = np.full((1, SPEC.num_symbols, SPEC.fft_size), 2.0 + 0j)
    y = _rx_grid(H, f.grid.values, SPEC)
    eq = rx.lmmse_equalize(y, H, 0.0, SPEC)
    yd, _ = phy.grid_demap(y, SPEC)
    assert np.max(np.abs(eq.x_hat - yd[0] / 2)) <= 1e-12


def test_mrc_two_antennas():
    r = np.random.default_rng(4)
    H = r.normal(size=(2, SPEC.num_symbols, SPEC.fft_size)) \
        + 1j * r.normal(size=(2, SPEC.num_symbols, SPEC.fft_size))
    y = phy.ResourceGrid(r.normal(size=H.shape) + 1j * r.normal(size=H.shape), SPEC)
    eq = rx.lmmse_equalize(y, H, 0.0, SPEC)
    yd, _ = phy.grid_demap(y, SPEC)
    hd, _ = phy.grid_demap(H, SPEC)
    mrc = np.array([np.vdot(hd[:, i], yd[:, i]) / np.vdot(hd[:, i], hd[:, i]).real
                    for i in range(yd.shape[1])])
    assert np.max(np.abs(eq.x_hat - mrc)) <= 1e-12


def test_zero_channel_collapses_to_zero():
    H = np.zeros((2, SPEC.num_symbols, SPEC.fft_size), complex)
    y = phy.ResourceGrid(np.ones_like(H), SPEC)
    eq = rx.lmmse_equalize(y, H, 0.5, SPEC)
    assert not eq.x_hat.any()
    with pytest.raises(ZeroDivisionError):
        rx.lmmse_equalize(y, H, 0.0, SPEC)
    with pytest.raises(ValueError):
        rx.lmmse_equalize(y, H, -1.0, SPEC)


def test_post_eq_noise_calibrated():
    # after bias removal the residual x_hat/mu - x has the reported variance
    r = np.random.default_rng(5)
    lay = _layout()
    nv = 0.3
    errs, preds = [], []
    for s in range(40):
        f = _tx(lay, s)
        real = ch.realize(ch.ChannelSpec(), SPEC, 100 + s, nv)
        y = ch.apply(f.grid, real, 200 + s)
        eq = rx.lmmse_equalize(y, real.H, nv, SPEC)
        sym, v = eq.demapper_inputs()
        x, _ = phy.grid_demap(f.grid, SPEC)
        errs.append(np.abs(sym - x[0]) ** 2 / v)
        preds.append(np.ones_like(v))
    z = np.concatenate(errs)
    # normalized residual power is unit-mean exponential
    assert abs(z.mean() - 1) < 3 / np.sqrt(z.size)


# ------------------------------------------------------------------ chains

@pytest.mark.parametrize("const", list(phy.CONSTELLATIONS))
def test_noiseless_ideal_zero_errors(const):
    pcm = fec.build_regular_ldpc(256, 3, 6, 0)
    lay = _layout(SPEC, const, pcm)
    f = _tx(lay, 1)
    H = np.ones((2, SPEC.num_symbols, SPEC.fft_size), complex)
    y = _rx_grid(H, f.grid.values, SPEC)
    a = rx.perfect_csi_receive(y, H, 0.0, SPEC, lay)
    b = rx.baseline_receive(y, SPEC, 0.0, lay)
    np.testing.assert_array_equal(a.info, f.info)
    np.testing.assert_array_equal(b.info, f.info)


def test_noiseless_llrs_saturated_sign_zero_iterations():
    pcm = fec.build_regular_ldpc(128, 3, 6, 0)
    lay = _layout(TOY, "qpsk", pcm)
    f = _tx(lay, 2)
    real = ch.realize(ch.ChannelSpec(model="flat-rayleigh", speed_max=0), TOY, 3)
    y = ch.apply(f.grid, real, 0)
    res = rx.perfect_csi_receive(y, real.H, 0.0, TOY, lay)
    assert np.all(np.sign(res.llrs) == 1 - 2.0 * f.stream)
    assert np.all(np.abs(res.llrs) > 1e6)
    _, ok, iters = fec.bp_decode(link.codeword_llrs(res.llrs, lay), pcm)
    assert ok.all() and not iters.any()


def test_coin_flip_limit():
    lay = _layout(TOY, "qpsk", fec.build_regular_ldpc(128, 3, 6, 0))
    errors = bits = 0
    for s in range(0, 1600):
        f = _tx(lay, s)
        real = ch.realize(ch.ChannelSpec(model="ideal"), TOY, s, 1e8)
        res = rx.baseline_receive(ch.apply(f.grid, real, s + 1), TOY, 1e8, lay)
        errors += int(np.sum(res.info != f.info))
        bits += f.info.size
    assert bits >= 1e5
    assert abs(errors / bits - 0.5) < 3 * np.sqrt(0.25 / bits)


def _sweep(receiver, snr_db, frames, lay, spec, chan):
    nv = 10 ** (-snr_db / 10)
    err = []
    for i in range(frames):
        f = _tx(lay, 1000 + i)
        real = ch.realize(chan, spec, 2000 + i, nv)
        y = ch.apply(f.grid, real, 3000 + i)
        if receiver == "baseline":
            res = rx.baseline_receive(y, spec, nv, lay)
        else:
            res = rx.perfect_csi_receive(y, real.H, nv, spec, lay)
        err.append(np.sum(res.info != f.info))
    return np.sum(err) / (frames * lay.info_bits)


def test_baseline_monotone_in_snr():
    lay = _layout(SPEC, "qam64", fec.build_regular_ldpc(1024, 3, 6, 0))
    chan = ch.ChannelSpec()
    assert _sweep("baseline", 12, 8, lay, SPEC, chan) <= _sweep("baseline", 4, 8, lay, SPEC, chan)


@pytest.mark.parametrize("snr", [0.0, 4.0, 8.0])
def test_perfect_csi_bounds_baseline(snr):
    lay = _layout(TOY, "qpsk", fec.build_regular_ldpc(128, 3, 6, 0))
    chan = ch.ChannelSpec(model="tdl", speed_max=120)
    frames = 200
    pc = _sweep("perfect", snr, frames, lay, TOY, chan)
    bl = _sweep("baseline", snr, frames, lay, TOY, chan)
    se = np.sqrt(max(bl * (1 - bl), 1e-12) / (frames * lay.info_bits))
    assert pc <= bl + 3 * se


def test_flat_unit_channel_equals_awgn_chain():
    lay = _layout(TOY, "qam16", fec.build_regular_ldpc(128, 3, 6, 0))
    nv = 0.2
    f = _tx(lay, 7)
    H1 = np.ones((1, TOY.num_symbols, TOY.fft_size), complex)
    noise_seed = 11
    y = ch.apply(f.grid, ch.ChannelRealization(H1, nv, 0.0, "ideal"), noise_seed)
    a = rx.perfect_csi_receive(y, H1, nv, TOY, lay)
    # AWGN chain: demap the raw samples with noise variance nv, then BP
    yd, _ = phy.grid_demap(y, TOY)
    llr = phy.exact_llr(yd[0], nv, lay.const)
    b = rx.decode_frame(llr, lay)
    np.testing.assert_allclose(a.llrs, llr, rtol=1e-12, atol=1e-9)
    np.testing.assert_array_equal(a.info, b.info)


def test_chain_deterministic():
    lay = _layout(TOY, "qpsk", fec.build_regular_ldpc(128, 3, 6, 0))
    f = _tx(lay, 8)
    real = ch.realize(ch.ChannelSpec(), TOY, 9, 0.5)
    y = ch.apply(f.grid, real, 10)
    a = rx.baseline_receive(y, TOY, 0.5, lay)
    b = rx.baseline_receive(y, TOY, 0.5, lay)
    assert a.info.tobytes() == b.info.tobytes()


def test_interpolation_weights_rows_sum_to_one():
    W = rx.interpolation_weights(SPEC)
    np.testing.assert_allclose(W.sum(axis=1), 1.0, rtol=0, atol=1e-15)
