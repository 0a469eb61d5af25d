import numpy as np
import pytest
from conftest import crandn

from nlprecode import system
from nlprecode.errors import DimensionError, FormatError
from nlprecode.pa import LinearPA, PolyPA


@pytest.fixture
def cfg():
    return system.SystemConfig(M=8, K=2)


def test_config_defaults():
    c = system.SystemConfig(M=64, K=4, snr_db=20)
    assert c.P_T == 64 and c.p_in == 1.0
    assert c.sigma_v2 == pytest.approx(0.64)


def test_channel_statistics():
    cfg = system.SystemConfig(M=100, K=10)
    H = system.sample_channels(cfg, 100, system.make_rng(0))
    assert abs(H.mean()) < 0.01
    assert 0.99 <= np.mean(np.abs(H) ** 2) <= 1.01
    assert abs(np.var(H.real) - 0.5) < 0.01
    assert abs(np.var(H.imag) - 0.5) < 0.01


def test_channel_determinism(cfg):
    a = system.sample_channel(cfg, system.make_rng(5))
    b = system.sample_channel(cfg, system.make_rng(5))
    np.testing.assert_array_equal(a, b)


def test_symbol_statistics():
    s = system.sample_symbols(2, 10**6, system.make_rng(1))
    power = np.mean(np.abs(s) ** 2, axis=0)
    assert np.all((power > 0.99) & (power < 1.01))
    assert abs(np.mean(s[:, 0] * np.conj(s[:, 1]))) < 0.01
    np.testing.assert_array_equal(s, system.sample_symbols(2, 10**6, system.make_rng(1)))


def test_split_streams_differ():
    a, b = system.split_rng(system.make_rng(3), 2)
    assert not np.array_equal(a.standard_normal(4), b.standard_normal(4))


class TestTransmitReceive:
    def test_linear_noiseless(self, rng, cfg):
        H, W, s = crandn(rng, 8, 2), crandn(rng, 8, 2), crandn(rng, 2)
        np.testing.assert_allclose(system.transmit_receive(H, W, LinearPA(), s), H.T @ W @ s)

    def test_zero_precoder_passes_noise(self, rng):
        H, s, v = crandn(rng, 8, 2), crandn(rng, 5, 2), crandn(rng, 5, 2)
        np.testing.assert_array_equal(system.transmit_receive(H, np.zeros((8, 2)), LinearPA(), s, v), v)

    def test_third_order_by_hand(self):
        h = np.array([[0.5 - 1j], [2.0 + 0.25j]])
        w = np.array([[1.0 + 1j], [-0.5j]])
        b1, b3 = 0.9 + 0.1j, -0.08 - 0.03j
        s = 0.7 - 0.2j
        x0, x1 = w[0, 0] * s, w[1, 0] * s
        y0 = b1 * x0 + b3 * x0 * abs(x0) ** 2
        y1 = b1 * x1 + b3 * x1 * abs(x1) ** 2
        expected = h[0, 0] * y0 + h[1, 0] * y1
        r = system.transmit_receive(h, w, PolyPA(b1, b3), np.array([s]))
        assert r[0] == pytest.approx(expected, abs=1e-12)

    def test_uses_plain_transpose(self, rng):
        H = crandn(rng, 3, 1)
        W = np.conj(H)
        r = system.transmit_receive(H, W, LinearPA(), np.array([1.0]))
        assert r[0] == pytest.approx(np.sum(np.abs(H) ** 2))

    def test_superposition_with_linear_pa(self, rng):
        H, W = crandn(rng, 6, 3), crandn(rng, 6, 3)
        pa = LinearPA(0.8 - 0.3j)
        for _ in range(5):
            s1, s2 = crandn(rng, 3), crandn(rng, 3)
            a, b = rng.standard_normal(2)
            lhs = system.transmit_receive(H, W, pa, a * s1 + b * s2)
            rhs = a * system.transmit_receive(H, W, pa, s1) + b * system.transmit_receive(H, W, pa, s2)
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            system.transmit_receive(crandn(rng, 4, 2), crandn(rng, 4, 3), LinearPA(), crandn(rng, 2))

    def test_transmit_power_matches_trace(self, rng):
        W = crandn(rng, 8, 3)
        s = system.sample_symbols(3, 10**5, system.make_rng(2))
        x = s @ W.T
        assert np.mean(np.sum(np.abs(x) ** 2, axis=1)) == pytest.approx(np.trace(W @ W.conj().T).real, rel=0.02)


class TestDatasetFile:
    def test_roundtrip(self, tmp_path, rng):
        H = crandn(rng, 5, 4, 2)
        for precision, tol in [(8, 0), (4, 1e-6)]:
            path = tmp_path / f"d{precision}.ch"
            system.write_dataset(path, H, precision)
            back = system.read_dataset(path)
            assert back.shape == H.shape
            np.testing.assert_allclose(back, H, atol=tol)

    def test_header_layout(self, tmp_path, rng):
        H = crandn(rng, 3, 2, 1)
        path = tmp_path / "x.ch"
        system.write_dataset(path, H, 8)
        raw = path.read_bytes()
        assert raw[:7] == b"MIMOCH1"
        assert int.from_bytes(raw[7:11], "little") == 2
        assert int.from_bytes(raw[11:15], "little") == 1
        assert int.from_bytes(raw[15:23], "little") == 3
        assert raw[23] == 8
        first = np.frombuffer(raw[24:40], dtype="<f8")
        np.testing.assert_array_equal(first, [H[0, 0, 0].real, H[0, 0, 0].imag])

    def test_truncated(self, tmp_path, rng):
        path = tmp_path / "t.ch"
        system.write_dataset(path, crandn(rng, 3, 2, 2))
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FormatError):
            system.read_dataset(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.ch"
        path.write_bytes(b"NOTACH1" + bytes(17))
        with pytest.raises(FormatError):
            system.read_dataset(path)
