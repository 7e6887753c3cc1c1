import numpy as np
import pytest

import afpc


def texture(n=64, seed=0, sigma=3.0):
    # Smooth periodic noise: low-pass filtered in the Fourier domain.
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n, n))
    k = np.fft.fftfreq(n)
    kr, kc = np.meshgrid(k, k, indexing="ij")
    smooth = np.fft.ifft2(np.fft.fft2(noise) * np.exp(-2 * (np.pi * sigma) ** 2 * (kr**2 + kc**2))).real
    smooth -= smooth.min()
    return (smooth / smooth.max()).astype(np.float32)


def test_grid_geometry():
    g = afpc.Grid()
    assert (g.n_r, g.n_c, g.pad) == (15, 15, 4)
    with pytest.raises(afpc.ConfigError):
        afpc.Grid(63, 64)


def test_identity_field_reproduces_frame():
    g = afpc.Grid()
    x = texture()
    y = afpc.apply_field(x, afpc.identity_field(g), g)
    assert y.shape == x.shape
    assert np.max(np.abs(y - x)) < 1e-6


def test_extract_recovers_shift():
    g = afpc.Grid()
    x = texture(seed=3)
    y = np.roll(x, shift=(-1, 2), axis=(0, 1))  # y[r, c] = x[r + 1, c - 2]
    field, loss, iters = afpc.extract_pair(x, y, g)
    assert field.shape == (6, 15, 15)
    assert iters > 0
    inner = field[:, 2:-2, 2:-2]
    assert abs(inner[2].mean() - 1.0) < 0.25
    assert abs(inner[5].mean() + 2.0) < 0.25


def test_bad_shapes_raise():
    g = afpc.Grid()
    with pytest.raises(ValueError):
        afpc.apply_field(np.zeros((64, 64), np.float32), np.zeros((5, 15, 15), np.float32), g)


def test_generated_sequences():
    seqs = afpc.generate_sequences(seed=4, count=3, length=6, max_objects=1)
    assert len(seqs) == 3
    frames, label = seqs[0]
    assert frames.shape == (6, 64, 64)
    assert frames.dtype == np.float32
    assert 0.0 <= frames.min() and frames.max() <= 1.0
    assert label in range(8)
    again = afpc.generate_sequences(seed=4, count=3, length=6, max_objects=1)
    assert np.array_equal(again[2][0], seqs[2][0])


def test_budget_numbers():
    assert afpc.count_params("ucf") == 413782
    assert 1e9 <= afpc.estimate_flops("ucf") <= 4e9
    with pytest.raises(afpc.ConfigError):
        afpc.count_params("nope")


def test_cli_round_trip(tmp_path):
    out = tmp_path / "seq"
    code, _, err = afpc.cli(["gen-data", "--out", str(out), "--count", "2", "--set", "length=6"])
    assert code == 0, err
    assert sorted(p.name for p in out.iterdir()) == ["seq_00000.tseq", "seq_00001.tseq"]
    code, _, err = afpc.cli(["extract", "--bogus"])
    assert code == 1


def test_gradcheck_passes():
    results = afpc.gradcheck()
    assert len(results) >= 16
    assert all(r["passed"] for r in results)
