import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from envtransfer.data import PerfDataset, aggregate, make_pair
from envtransfer.metrics import (
    METRIC_NAMES,
    AnalysisParams,
    MetricSuite,
    analyze_pair,
    coefficient_correlation,
    influential_options,
    rq1_metrics,
    rq2_metrics,
    rq3_metrics,
    rq4_metrics,
)
from envtransfer.synth import all_configs, generate_pair, random_scenario

from conftest import dataset_from_means, pair_from_means


def synth_pair(spec):
    s, t, gt = generate_pair(spec)
    return make_pair(aggregate(s), aggregate(t), spec.change.label()), gt


def self_pair(ds):
    a = aggregate(ds)
    return make_pair(a, a, "identity")


def swapped(pair):
    return make_pair(pair.target, pair.source, "swapped")


# -- identity -----------------------------------------------------------------


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_identity_pair_is_perfect(seed, with_invalid):
    rule = "1=1,3=-1>0.5" if with_invalid else None
    spec = random_scenario(7, seed=seed, invalid_rule=rule)
    src, _, _ = generate_pair(spec)
    s = analyze_pair(self_pair(src))
    for name in ("m1", "m3", "m4", "m5"):
        assert getattr(s, name) == pytest.approx(1.0, abs=1e-9)
    assert s.m2 <= 1e-6
    assert s.m9 == 0 and s.m8 == s.m6 == s.m7
    assert s.m13 == s.m11 == s.m12
    if s.m11:
        assert s.m14 == pytest.approx(1.0)
    assert s.m10 == pytest.approx(1.0)
    assert s.noise_ratio == pytest.approx(1.0)
    if with_invalid:
        assert s.m17 == 1.0 and s.m18 == pytest.approx(1.0)
        assert s.m15 == s.m16 == pytest.approx(0.25)
    else:
        assert {"m15", "m16", "m17", "m18"} <= s.na_flags


# -- symmetry and invariance ---------------------------------------------------


def test_swap_symmetry():
    spec = random_scenario(7, seed=3, change="option_shift:0=6,2=-4",
                           invalid_rule="1=1,3=-1>0.5")
    pair, _ = synth_pair(spec)
    a = analyze_pair(pair)
    b = analyze_pair(swapped(pair))
    assert a.m1 == pytest.approx(b.m1, abs=1e-12)
    assert a.m3 == pytest.approx(b.m3, abs=1e-12)
    assert (a.m6, a.m7) == (b.m7, b.m6)
    assert (a.m11, a.m12) == (b.m12, b.m11)
    assert (a.m15, a.m16) == (b.m16, b.m15)


def test_kl_is_asymmetric_on_skewed_pair(rng):
    C = all_configs(7)
    ys = rng.normal(100, 5, 128)
    yt = np.exp(rng.normal(3, 0.8, 128)) + 50  # right-skewed
    pair = pair_from_means(C, ys, yt)
    forward = rq1_metrics(pair)["m2"]
    backward = rq1_metrics(swapped(pair))["m2"]
    assert abs(forward - backward) > 0.1


def test_permutation_invariance(rng):
    spec = random_scenario(6, seed=5, change="linear:1.5,4", invalid_rule="0=1,2=1>1.5")
    s, t, _ = generate_pair(spec)

    def shuffle(ds):
        perm = rng.permutation(ds.n_rows)
        return PerfDataset(ds.space, ds.configs[perm], ds.reps[perm], ds.perf[perm],
                           ds.valid[perm], ds.env)

    base = analyze_pair(make_pair(aggregate(s), aggregate(t), "x"))
    other = analyze_pair(make_pair(aggregate(shuffle(s)), aggregate(shuffle(t)), "x"))
    assert base.to_dict() == other.to_dict()


def test_affine_and_monotone_transforms(rng):
    C = all_configs(7)
    ys = rng.uniform(10, 20, 128)
    base = rq1_metrics(pair_from_means(C, ys, ys + rng.normal(0, 0.5, 128)))
    yt = ys + rng.normal(0, 0.5, 128)
    affine = rq1_metrics(pair_from_means(C, ys, 3.0 * yt + 7.0))
    plain = rq1_metrics(pair_from_means(C, ys, yt))
    assert affine["m1"] == pytest.approx(plain["m1"], abs=1e-12)
    assert base["m1"] > 0.9
    # monotone cubic: ranks unchanged, shape changed
    cubic = rq1_metrics(pair_from_means(C, ys, (yt - 5.0) ** 3))
    assert cubic["m3"] == pytest.approx(plain["m3"], abs=1e-12)
    assert abs(cubic["m2"] - plain["m2"]) > 0.5


# -- rq1 ------------------------------------------------------------------------


@pytest.mark.parametrize("noise_sd", [0.0, 1e-4])
def test_linear_shift_correlations(noise_sd):
    # every option active so planted means have no ties for noise to reorder
    spec = random_scenario(8, seed=1, change="linear:2,3", noise_sd=noise_sd, n_main=8)
    pair, _ = synth_pair(spec)
    m = rq1_metrics(pair)
    assert m["m1"] >= 0.999 and m["m3"] >= 0.999


def test_rq1_too_few_common_configs():
    C = all_configs(3)
    y = np.arange(1.0, 9.0)
    yt = y.copy()
    yt[:5] = np.nan
    notes = []
    m = rq1_metrics(pair_from_means(C, y, yt), notes=notes)
    assert m["m1"] is None and m["m4"] is None
    assert any("need 5" in n for n in notes)


def test_noise_ratio_absent_without_replicates():
    C = all_configs(4)
    y = np.arange(1.0, 17.0)
    assert rq1_metrics(pair_from_means(C, y, y))["noise_ratio"] is None


# -- rq2 ------------------------------------------------------------------------


def test_influential_single_option(rng):
    C = all_configs(4)
    y = 20 + 5 * C[:, 2] + rng.normal(0, 0.01, 16)
    eff = influential_options(aggregate(dataset_from_means(C, y)))
    assert [e.option for e in eff if e.influential] == [2]
    assert eff[2].mean_effect == pytest.approx(5, abs=0.05)


def test_influential_constant_response():
    C = all_configs(4)
    eff = influential_options(aggregate(dataset_from_means(C, np.full(16, 3.0))))
    assert not any(e.influential for e in eff)


def test_sparse_sample_options_not_testable(rng):
    d = 20
    codes = rng.choice(2 ** d, size=100, replace=False)
    C = ((codes[:, None] >> np.arange(d)) & 1).astype(np.uint8)
    ds = aggregate(dataset_from_means(C, rng.uniform(1, 2, 100)))
    eff = influential_options(ds)
    assert sum(e.status == "not_testable" for e in eff) > d // 2
    notes = []
    rq2_metrics(make_pair(ds, ds), notes=notes)
    assert any("not testable" in n for n in notes)


def test_sign_flip_counts_as_disagreement():
    C = all_configs(5)
    ys = 50 + 5 * C[:, 1] + 3 * C[:, 3]
    yt = 50 - 5 * C[:, 1] + 3 * C[:, 3]
    m = rq2_metrics(pair_from_means(C, ys, yt))
    assert (m["m6"], m["m7"], m["m8"], m["m9"]) == (2, 2, 1, 1)
    assert m["m8_both"] == 2 and m["m9_one"] == 0


# -- rq3 ------------------------------------------------------------------------


def test_interaction_sign_agreement(rng):
    C = all_configs(6)
    common = 30 + 2 * C[:, 0] + 4 * C[:, 1] * C[:, 2]
    ys = common + 2 * C[:, 3] * C[:, 4] + rng.normal(0, 0.05, 64)
    yt = common - 2 * C[:, 3] * C[:, 4] + rng.normal(0, 0.05, 64)
    m = rq3_metrics(pair_from_means(C, ys, yt))
    assert m["m11"] == m["m12"] == 2
    assert m["m13"] == 1
    # union (1,2),(3,4): coefficient vectors (4, 2) vs (4, -2)
    assert m["m14"] == pytest.approx(coefficient_correlation([4, 2], [4, -2]), abs=0.05)


def test_coefficient_correlation_edge_cases():
    assert coefficient_correlation([3.0], [3.0]) == 1.0
    assert coefficient_correlation([], []) is None
    assert coefficient_correlation([1.0, 2.0], [2.0, 4.0]) == pytest.approx(1.0)
    assert coefficient_correlation([1.0, 1.0], [2.0, 4.0]) is None


# -- rq4 ------------------------------------------------------------------------


def test_identical_thirty_percent_invalid(rng):
    codes = rng.choice(256, size=100, replace=False)
    C = ((codes[:, None] >> np.arange(8)) & 1).astype(np.uint8)
    y = rng.uniform(1, 10, 100)
    y[rng.choice(100, 30, replace=False)] = np.nan
    pair = self_pair(dataset_from_means(C, y))
    m = rq4_metrics(pair)
    assert m["m15"] == m["m16"] == pytest.approx(0.30)
    assert m["m17"] == 1.0
    assert m["m18"] == pytest.approx(1.0)


def test_no_invalid_is_all_na():
    C = all_configs(4)
    y = np.arange(1.0, 17.0)
    assert set(rq4_metrics(pair_from_means(C, y, y)).values()) == {None}


def test_planted_validity_rule_transfers():
    C = all_configs(6)
    y = np.arange(1.0, 65.0)
    ys = np.where(C[:, 1] == 1, np.nan, y)
    yt = np.where(C[:, 1] == 1, np.nan, 2 * y)
    m = rq4_metrics(pair_from_means(C, ys, yt))
    assert m["m17"] == 1.0 and m["m18"] >= 0.99


def test_m17_uses_source_invalids_among_common():
    C = all_configs(4)
    y = np.arange(1.0, 17.0)
    ys, yt = y.copy(), y.copy()
    ys[[0, 1, 2, 3]] = np.nan
    yt[[0, 1, 9]] = np.nan
    m = rq4_metrics(pair_from_means(C, ys, yt))
    assert m["m15"] == 0.25 and m["m16"] == 3 / 16
    assert m["m17"] == 0.5


# -- whole suite ----------------------------------------------------------------


def test_severe_scenario_pattern():
    for seed in range(10):
        spec = random_scenario(8, seed=seed, change="severe", invalid_rule="1=1,3=-1>0.5")
        suite = analyze_pair(synth_pair(spec)[0])
        assert suite.m1 < 0.3 and suite.m17 >= 0.9


def test_parallel_groups_are_bitwise_identical():
    spec = random_scenario(8, seed=9, change="interaction_shift:0-1=5",
                           invalid_rule="2=1,5=1>1.5")
    pair, _ = synth_pair(spec)
    a = analyze_pair(pair, AnalysisParams(jobs=1))
    b = analyze_pair(pair, AnalysisParams(jobs=4))
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)


def test_failing_group_becomes_na():
    # 8 configs: too few for stepwise and tree, enough for correlations
    C = all_configs(3)
    y = np.arange(1.0, 9.0)
    suite = analyze_pair(pair_from_means(C, y, y))
    assert suite.m1 == pytest.approx(1.0)
    assert {"m10", "m11", "m12", "m13", "m14"} <= suite.na_flags
    assert any(n.startswith("rq3") for n in suite.notes)


def test_suite_json_round_trip_and_params():
    spec = random_scenario(6, seed=2, invalid_rule="0=1>0.5")
    suite = analyze_pair(synth_pair(spec)[0])
    raw = json.loads(json.dumps(suite.to_dict()))
    assert raw["params"]["alpha"] == 0.05 and raw["params"]["kde_grid"] == 512
    back = MetricSuite.from_dict(raw)
    for name in (*METRIC_NAMES, "noise_ratio"):
        assert getattr(back, name) == getattr(suite, name)


def test_suite_invariants_are_enforced():
    with pytest.raises(ValueError):
        MetricSuite(m6=2, m7=3, m8=3)
    with pytest.raises(ValueError):
        MetricSuite(m11=1, m12=4, m13=2)
    with pytest.raises(ValueError):
        MetricSuite(m4=1.2)
    with pytest.raises(ValueError):
        MetricSuite(m1=-1.5)
