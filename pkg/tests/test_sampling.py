import numpy as np
import pytest

from rtmemu import oracle, sampling
from rtmemu.oracle import AtmosphericState, SurfaceSpectrum, WavelengthGrid
from rtmemu.sampling import StateRanges


def small_dataset(n=200, k=4, seed=0):
    grid = WavelengthGrid.uniform(k)
    X = sampling.sample_states(StateRanges(), n, k, seed=seed)
    return sampling.generate_dataset(X, grid, seed=seed)


def test_degenerate_ranges_give_corner_point():
    r = StateRanges(mu0=(0.5, 0.5), tau550=(0.1, 0.1), alpha=(1.0, 1.0), wvap=(2.0, 2.0),
                    rho_s=(0.3, 0.3))
    X = sampling.sample_states(r, 1, 2, "uniform", seed=0)
    np.testing.assert_array_equal(X, [[0.5, 0.1, 1.0, 2.0, 0.3, 0.3]])


def test_latin_hypercube_strata():
    n = 100
    r = StateRanges()
    X = sampling.sample_states(r, n, 3, "latin_hypercube", seed=42)
    lo, hi = r.bounds(3)
    u = (X - lo) / (hi - lo)
    for j in range(X.shape[1]):
        strata = np.floor(u[:, j] * n).astype(int)
        assert sorted(strata) == list(range(n))
        assert np.all(np.bincount(np.floor(u[:, j] * 10).astype(int), minlength=10) == 10)


@pytest.mark.parametrize("method", ["uniform", "latin_hypercube"])
def test_sampling_determinism(method):
    a = sampling.sample_states(StateRanges(), 50, 4, method, seed=7)
    b = sampling.sample_states(StateRanges(), 50, 4, method, seed=7)
    c = sampling.sample_states(StateRanges(), 50, 4, method, seed=8)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("method", ["uniform", "latin_hypercube", "grid"])
def test_samples_within_ranges(method):
    r = StateRanges(mu0=(0.4, 0.9), wvap=(1.0, 2.0))
    X = sampling.sample_states(r, 243, 5, method, seed=1)
    lo, hi = r.bounds(5)
    assert np.all(X >= lo) and np.all(X <= hi)


def test_grid_requires_perfect_power():
    X = sampling.sample_states(StateRanges(), 32, 3, "grid")
    assert X.shape == (32, 7)
    assert len(np.unique(X[:, 0])) == 2
    # reflectance is shared across channels on the grid
    assert np.all(X[:, 4:] == X[:, 4:5])
    with pytest.raises(ValueError, match="grid sampling"):
        sampling.sample_states(StateRanges(), 100, 3, "grid")


def test_sampling_rejects_bad_input():
    with pytest.raises(ValueError):
        sampling.sample_states(StateRanges(), 0, 3)
    with pytest.raises(ValueError):
        sampling.sample_states(StateRanges(), 10, 3, "sobol")
    with pytest.raises(ValueError):
        StateRanges(mu0=(0.9, 0.5))
    with pytest.raises(ValueError):
        StateRanges(wvap=(0.0, 6.0))


def test_split_counts_exact():
    ds = small_dataset(n=1000, k=2)
    counts = [int(np.sum(ds.split == s)) for s in sampling.SPLITS]
    assert counts == [800, 100, 100]


def test_split_counts_floor_rule():
    assert sampling.split_counts(1001, (0.7, 0.2, 0.1)) == (700, 200, 101)


def test_split_is_a_partition():
    ds = small_dataset(n=333)
    rows = np.concatenate([ds.rows(s) for s in sampling.SPLITS])
    assert sorted(rows) == list(range(333))


def test_rows_match_oracle():
    ds = small_dataset(n=50, k=5)
    for i in range(ds.n):
        y = oracle.spectrum(AtmosphericState.from_array(ds.X[i, :4]), SurfaceSpectrum(ds.X[i, 4:]), ds.grid)
        np.testing.assert_array_equal(ds.Y[i], y)


def test_scaler_is_train_only_and_standardizes():
    ds = small_dataset(n=500, k=3)
    Z = ds.scaler.transform(ds.X[ds.split == "train"])
    np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(Z.std(axis=0), 1.0, atol=1e-10)
    val_fit = sampling.Scaler.fit(ds.X[ds.split == "val"])
    assert not np.allclose(val_fit.mean, ds.scaler.mean)
    Zv = ds.scaler.transform(ds.X[ds.split == "val"])
    np.testing.assert_array_equal(Zv, (ds.X[ds.split == "val"] - ds.scaler.mean) / ds.scaler.std)


def test_constant_column_rejected():
    r = StateRanges(alpha=(1.0, 1.0))
    X = sampling.sample_states(r, 50, 2, seed=0)
    with pytest.raises(ValueError, match="constant"):
        sampling.generate_dataset(X, WavelengthGrid.uniform(2))


def test_too_few_rows_rejected():
    X = sampling.sample_states(StateRanges(), 5, 2, seed=0)
    with pytest.raises(ValueError, match="too small"):
        sampling.generate_dataset(X, WavelengthGrid.uniform(2))
    with pytest.raises(ValueError, match="fractions"):
        sampling.generate_dataset(X, WavelengthGrid.uniform(2), fractions=(0.5, 0.5, 0.0))


def test_channel_view_single_channel():
    ds = small_dataset(n=100, k=1)
    v = sampling.channel_view(ds, 0)
    np.testing.assert_array_equal(v.targets, ds.Y[:, 0])
    assert v.inputs.shape == (100, 5)


def test_channel_view_index_error():
    ds = small_dataset(n=100, k=2)
    with pytest.raises(IndexError):
        sampling.channel_view(ds, 2)


def test_channel_view_ignores_other_channels():
    ds = small_dataset(n=100, k=3)
    before = sampling.channel_view(ds, 0)
    ds.X[:, 4 + 2] = np.random.default_rng(0).uniform(0, 0.9, ds.n)
    after = sampling.channel_view(ds, 0)
    np.testing.assert_array_equal(before.inputs, after.inputs)


def test_identical_channels_give_identical_views():
    grid = WavelengthGrid([0.5, 0.6])
    X = sampling.sample_states(StateRanges(), 60, 2, seed=3)
    X[:, 5] = X[:, 4]
    ds = sampling.generate_dataset(X, grid)
    # the second channel only differs through its wavelength; move it onto the first
    ds.Y[:, 1] = ds.Y[:, 0]
    a, b = sampling.channel_view(ds, 0), sampling.channel_view(ds, 1)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.targets, b.targets)


def test_csv_round_trip(tmp_path):
    ds = small_dataset(n=120, k=3)
    csv_path, json_path = sampling.write_dataset(ds, tmp_path / "d.csv")
    header = csv_path.read_text().splitlines()[0]
    assert header == "mu0,tau550,alpha,wvap,rho_s_0,rho_s_1,rho_s_2,y_0,y_1,y_2,split"
    back = sampling.read_dataset(csv_path)
    assert back.X.tobytes() == ds.X.tobytes()
    assert back.Y.tobytes() == ds.Y.tobytes()
    assert list(back.split) == list(ds.split)
    assert back.scaler.mean.tobytes() == ds.scaler.mean.tobytes()
    assert back.scaler.std.tobytes() == ds.scaler.std.tobytes()
    assert back.grid.lambdas.tobytes() == ds.grid.lambdas.tobytes()
    assert back.meta["seed"] == 0


def test_csv_bad_row(tmp_path):
    ds = small_dataset(n=30, k=2)
    csv_path, _ = sampling.write_dataset(ds, tmp_path / "d.csv")
    lines = csv_path.read_text().splitlines()
    lines[3] = lines[3].replace(",", ",x", 1)
    csv_path.write_text("\n".join(lines) + "\n")
    with pytest.raises(sampling.DatasetFormatError, match="line 4"):
        sampling.read_dataset(csv_path)
