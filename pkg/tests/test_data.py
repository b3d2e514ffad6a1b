import numpy as np
import pytest

from spatialfactor.data import (DataError, build_dataset, compute_offsets, destandardize,
                                load_dataset, standardize_covariates, write_dataset)


def test_offset_examples():
    rate, e = compute_offsets([100_000], [57])
    assert rate == pytest.approx(57e-5) and e == pytest.approx([57.0])
    rate, e = compute_offsets([100_000, 100_000], [563, 563])
    assert rate == pytest.approx(563e-5) and e == pytest.approx([563.0, 563.0])
    rate, e = compute_offsets([1000, 3000], [1, 3])
    assert rate == pytest.approx(1e-3) and e == pytest.approx([1.0, 3.0])


def test_offsets_scale_equivariant(rng):
    pop = rng.integers(1000, 9000, size=7)
    y = rng.integers(0, 30, size=7)
    r1, e1 = compute_offsets(pop, y)
    r2, e2 = compute_offsets(2 * pop, y)
    assert r2 == pytest.approx(r1 / 2)
    assert e2 == pytest.approx(e1, rel=1e-14)
    assert e1.sum() == pytest.approx(y.sum())


@pytest.mark.parametrize("pop,y", [([10, 20], [0, 0]), ([0, 20], [1, 1])])
def test_offset_errors(pop, y):
    with pytest.raises(DataError):
        compute_offsets(pop, y)


def test_standardize_examples():
    z, mean, sd = standardize_covariates(np.array([[1.0], [2.0], [3.0]]))
    assert z[:, 0] == pytest.approx([-1.0, 0.0, 1.0])
    z2, _, _ = standardize_covariates(z)
    assert np.max(np.abs(z2 - z)) < 1e-12
    col = np.array([10.0, 20.0, 40.0, 50.0])
    m = sum(col) / 4
    s = (sum((c - m) ** 2 for c in col) / 3) ** 0.5
    z, mean, sd = standardize_covariates(col[:, None])
    assert z[:, 0] == pytest.approx((col - m) / s, rel=1e-14)
    assert mean[0] == pytest.approx(m) and sd[0] == pytest.approx(s)


def test_standardize_round_trip(rng):
    raw = rng.normal(3.0, 10.0, size=(30, 4))
    z, mean, sd = standardize_covariates(raw)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-10)
    assert np.all(np.abs(z.std(axis=0, ddof=1) - 1) < 1e-8)
    assert np.allclose(destandardize(z, mean, sd), raw, rtol=1e-12, atol=0)


def test_constant_column_rejected():
    with pytest.raises(DataError):
        standardize_covariates(np.array([[1.0, 2.0], [1.0, 3.0], [1.0, 5.0]]))


def test_dataset_rejects_unstandardized_covariates():
    d = build_dataset([100, 200, 300], [1, 2, 3], [4, 5, 6], None, [[1.0], [2.0], [4.0]])
    with pytest.raises(DataError, match="standardized"):
        type(d)(d.deaths, d.treatments_lower, d.censored, d.populations,
                d.covariates * 2, d.covariate_names, d.offsets_death, d.offsets_treatment)


def test_treatment_rate_uses_lower_bounds():
    d = build_dataset([1000, 1000], [1, 1], [20, 30], [False, True], [[0.0], [1.0]])
    assert d.offsets_treatment == pytest.approx([25.0, 25.0])


def test_dataset_is_read_only():
    d = build_dataset([100, 200, 300], [1, 2, 3], [4, 5, 6], None, [[1.0], [2.0], [4.0]])
    with pytest.raises(ValueError):
        d.deaths[0] = 5


def test_csv_round_trip(tmp_path):
    raw = np.array([[1.0, 5.0], [2.0, 3.0], [4.0, 4.0]])
    d = build_dataset([100, 200, 300], [1, 2, 3], [4, 5, 10], [False, False, True], raw,
                      ("a", "b"))
    dp, cp = tmp_path / "data.csv", tmp_path / "cov.csv"
    write_dataset(d, str(dp), str(cp), raw)
    e = load_dataset(str(dp), str(cp), n=3)
    assert np.array_equal(e.deaths, d.deaths)
    assert np.array_equal(e.censored, d.censored)
    assert np.allclose(e.covariates, d.covariates, rtol=1e-14)
    f = load_dataset(str(dp), str(cp), covariates=["b"])
    assert f.covariate_names == ("b",)
    with pytest.raises(DataError, match="income"):
        load_dataset(str(dp), str(cp), covariates=["income"])


def test_unit_ids_must_be_ordered(tmp_path):
    dp, cp = tmp_path / "data.csv", tmp_path / "cov.csv"
    dp.write_text("unit_id,population,deaths,treatment_lower,censored\n1,10,1,1,0\n0,10,1,1,0\n")
    cp.write_text("unit_id,x\n0,1\n1,2\n")
    with pytest.raises(DataError):
        load_dataset(str(dp), str(cp))
