import gzip

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctxpbm.clickmodel import draw_clicks
from ctxpbm.datasets import (DeviceConfig, LetorParseError, LetorQuery, SinbinConfig,
                             apply_swap_randomization, augment_device, binarize_relevance,
                             build_letor_dataset, device_bias, device_label, device_onehot,
                             filter_relevant, generate_sinbin, minmax_scale, parse_letor,
                             synthesize_context)


def small_sinbin(**kw):
    cfg = dict(n_queries=200, n_test_queries=50, n_items=20, dq=4, dd=3, K=5)
    cfg.update(kw)
    return SinbinConfig(**cfg)


def test_sinbin_shapes_and_determinism():
    a = generate_sinbin(small_sinbin(eta=0.5, seed=3))
    b = generate_sinbin(small_sinbin(eta=0.5, seed=3))
    assert a.train.contexts.shape == (200, 4) and a.test.contexts.shape == (50, 4)
    assert a.items.shape == (20, 3) and a.theta.shape == (7,)
    for x, y in [(a.train.contexts, b.train.contexts), (a.items, b.items), (a.bias.w, b.bias.w)]:
        np.testing.assert_array_equal(x, y)
    assert np.all((a.train.contexts >= 0) & (a.train.contexts <= 1))


def test_sinbin_eta_only_rescales_bias():
    lo = generate_sinbin(small_sinbin(eta=0.5, seed=1))
    hi = generate_sinbin(small_sinbin(eta=1.5, seed=1))
    np.testing.assert_array_equal(lo.train.contexts, hi.train.contexts)
    np.testing.assert_allclose(hi.bias.w, 3 * lo.bias.w)


def test_sinbin_zero_theta_is_coin_flip():
    d = generate_sinbin(small_sinbin(), theta=np.zeros(7))
    assert np.all(d.train.relevance(0) == 0.5)
    assert d.relevance_prob(d.train.contexts[0], d.items[0]) == 0.5


def test_sinbin_relevance_agrees_with_scalar_form():
    d = generate_sinbin(small_sinbin(seed=2))
    q = d.train.contexts[5]
    want = [d.relevance_prob(q, x) for x in d.items]
    np.testing.assert_allclose(d.train.relevance(5), want, rtol=1e-12)


def test_sinbin_config_checks():
    with pytest.raises(ValueError):
        SinbinConfig(n_items=5, K=10)
    with pytest.raises(ValueError):
        SinbinConfig(dq=0)


def test_click_rate_with_true_relevance_ranking():
    d = generate_sinbin(SinbinConfig(n_queries=10_000, n_items=50, seed=4))
    rng = np.random.default_rng(0)
    K = 10
    rates = np.zeros(K)
    expected = np.zeros(K)
    for i in range(len(d.train)):
        rel = d.train.relevance(i)
        top = np.argsort(-rel)[:K]
        exam = d.bias.curve(d.train.contexts[i], K)
        rates += draw_clicks(exam, rel[top], rng)
        expected += exam * rel[top]
    n = len(d.train)
    sd = np.sqrt(expected / n * (1 - expected / n) / n)
    assert np.all(np.abs(rates / n - expected / n) < 3 * sd + 1e-12)
    np.testing.assert_allclose(d.bias.curve(np.zeros(10), K), 1 / np.arange(1, K + 1))


def test_device_onehot_and_labels():
    rng = np.random.default_rng(0)
    z = device_onehot(100, 0.0, rng)
    assert np.all(z == [1, 0])
    oh = device_onehot(10_000, 0.3, rng)
    assert np.all(oh.sum(axis=1) == 1)
    assert abs(oh[:, 1].mean() - 0.3) < 0.015
    assert device_label([0.3, 0.2, 0, 1]) == 1 and device_label([9, 1, 0]) == 0


def test_device_augmentation():
    ctx = np.random.default_rng(0).random((50, 10))
    out, bias = augment_device(ctx, DeviceConfig(0.3, eta=1.5, seed=1))
    assert out.shape == (50, 12) and np.all(out[:, -2:].sum(axis=1) == 1)
    np.testing.assert_array_equal(out[:, :10], ctx)
    assert np.all(bias.w[:10] == 0) and bias.w[10] == -bias.w[11]
    with pytest.raises(ValueError):
        DeviceConfig(0.6)


def test_device_bias_depends_on_device_only():
    bias = device_bias(3, 1.5, np.random.default_rng(2))
    a = bias.curve(np.array([[0.1, 0.9, 0.3, 1, 0], [0.7, 0.2, 0.5, 1, 0]]), 4)
    np.testing.assert_array_equal(a[0], a[1])


@given(st.integers(2, 12), st.integers(0, 10_000))
def test_swaps_are_local_permutations(K, seed):
    ranking = np.arange(100, 100 + K)
    out, ann = apply_swap_randomization(ranking, np.random.default_rng(seed))
    assert sorted(out) == sorted(ranking)
    pos = {v: i for i, v in enumerate(out)}
    assert all(abs(pos[v] - i) <= 1 for i, v in enumerate(ranking))
    for k in ann.swapped_pairs:  # 1-based pair (k, k+1)
        assert out[k - 1] == ranking[k] and out[k] == ranking[k - 1]
    moved = {i + 1 for i in range(K) if out[i] != ranking[i]}
    assert moved == {p for k in ann.swapped_pairs for p in (k, k + 1)}


class NoSwap:
    """Generator stand-in whose draws never trigger a swap."""

    def random(self, size=None):
        return 0.9 if size is None else np.full(size, 0.9)


def test_no_swap_draws_leave_ranking_alone():
    out, ann = apply_swap_randomization(np.arange(6), NoSwap())
    assert out.tolist() == list(range(6)) and ann.swapped_pairs == ()


def test_swap_frequency():
    rng = np.random.default_rng(0)
    n = 100_000
    counts = np.zeros(4)
    for _ in range(n):
        _, ann = apply_swap_randomization(np.arange(5), rng)
        for k in ann.swapped_pairs:
            counts[k - 1] += 1
    assert np.all(np.abs(counts / n - 0.25) < 0.005)


def test_swap_needs_two_items():
    with pytest.raises(ValueError):
        apply_swap_randomization(np.arange(1), np.random.default_rng(0))


# ---------------------------------------------------------------- LETOR

def test_parse_single_line():
    [q] = parse_letor("3 qid:1 1:0.5 4:1.0")
    assert q.query_id == "1" and q.grades.tolist() == [3] and q.binary.tolist() == [1]
    np.testing.assert_array_equal(q.features, [[0.5, 0, 0, 1.0]])


def test_parse_empty_features_and_grouping():
    qs = parse_letor("0 qid:7\n2 qid:1 2:1 # note\n1 qid:1 1:3\n", n_features=3)
    assert [q.query_id for q in qs] == ["7", "1"]
    np.testing.assert_array_equal(qs[0].features, np.zeros((1, 3)))
    np.testing.assert_array_equal(qs[1].features, [[0, 1, 0], [3, 0, 0]])


@pytest.mark.parametrize("text,where", [("x qid:1 1:1", "line 1"),
                                        ("1 qid:1 1:1\n2 1:1", "line 2"),
                                        ("1 qid:1 0:1", "line 1"),
                                        ("1 qid:1 1:abc", "line 1"),
                                        ("7 qid:1 1:1", "query 1"),
                                        ("", "no LETOR")])
def test_parse_errors(text, where):
    with pytest.raises(LetorParseError, match=where):
        parse_letor(text)


def test_parse_width_check():
    with pytest.raises(LetorParseError):
        parse_letor("1 qid:1 5:1", n_features=3)


def test_parse_gzip_file(tmp_path):
    p = tmp_path / "f.txt.gz"
    with gzip.open(p, "wt") as fh:
        fh.write("4 qid:2 1:1\n0 qid:2 2:1\n")
    [q] = parse_letor(p)
    assert q.binary.tolist() == [1, 0]


@pytest.mark.parametrize("grade,want", [(0, 0), (1, 0), (2, 0), (3, 1), (4, 1)])
def test_binarize(grade, want):
    assert binarize_relevance(grade) == want


def fake_letor(n_queries, n_items, n_feat, rng):
    qs = []
    for i in range(n_queries):
        X = rng.random((n_items, n_feat)) * 5
        grades = rng.integers(0, 5, n_items)
        grades[0] = 4
        qs.append(LetorQuery(str(i), X, grades))
    return qs


def test_minmax_scale_and_filter():
    rng = np.random.default_rng(0)
    qs = fake_letor(5, 12, 4, rng)
    qs.append(LetorQuery("dud", rng.random((3, 4)), np.zeros(3)))
    kept = filter_relevant(qs)
    assert len(kept) == 5
    scaled = minmax_scale(kept)
    X = np.concatenate([q.features for q in scaled])
    assert X.min() == pytest.approx(0) and X.max() == pytest.approx(1)


def test_context_synthesis():
    rng = np.random.default_rng(0)
    qs = minmax_scale(fake_letor(400, 12, 40, rng))
    a = synthesize_context(qs, sigma=1.0, rng=np.random.default_rng(5), epochs=20)
    b = synthesize_context(qs, sigma=1.0, rng=np.random.default_rng(5), epochs=20)
    np.testing.assert_array_equal(a.selected, b.selected)
    assert a.contexts.shape == (400, 10) and len(set(a.selected)) == 5
    assert np.all(np.abs(a.contexts[:, 5:].mean(axis=0)) < 3 / np.sqrt(400))
    zero = synthesize_context(qs, sigma=0.0, rng=np.random.default_rng(5), epochs=20)
    assert np.all(zero.contexts[:, 5:] == 0)
    with pytest.raises(ValueError):
        synthesize_context(fake_letor(3, 12, 10, rng), rng=rng)


def test_build_letor_dataset_drops_short_queries():
    rng = np.random.default_rng(1)
    train = fake_letor(60, 12, 35, rng) + fake_letor(5, 4, 35, rng)
    test = fake_letor(20, 15, 35, rng)
    d = build_letor_dataset(train, test, eta=1.0, K=10, rng=np.random.default_rng(2))
    assert len(d.train) == 60 and len(d.test) == 20
    assert d.train.contexts.shape[1] == 10 and d.bias.dim == 10
    items, ids = d.test.candidates(3)
    assert items.shape == (15, 35) and ids.tolist() == list(range(15))
    assert set(np.unique(d.test.relevance(3))) <= {0.0, 1.0}
