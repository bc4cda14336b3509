import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from oracles import sum_of_powers
from speclab.engine import (SpecRunConfig, first_token_distribution, generate_autoregressive,
                            generate_speculative)
from speclab.explorer import count_params
from speclab.lm import fit_ngram
from speclab.model import ModelConfig, init_model, softmax
from speclab.perfmodel import (AnalyticalParams, improvement_factor, predict_throughput,
                               required_tar, throughput)

VOCAB = 11
TINY = init_model(ModelConfig(2, 2, 16, 32, VOCAB, max_positions=48, weight_seed=5))
TINY_DRAFT = init_model(ModelConfig(1, 2, 16, 32, VOCAB, max_positions=48, weight_seed=6))
_CORPUS = [list(np.random.default_rng(i).integers(0, VOCAB, 40)) for i in range(20)]
NGRAMS = {n: fit_ngram(_CORPUS, n, vocab_size=VOCAB) for n in (1, 2, 3)}

tokens = st.lists(st.integers(0, VOCAB - 1), min_size=1, max_size=32)
probs = st.lists(st.floats(0.01, 1.0), min_size=2, max_size=12).map(lambda v: np.array(v) / sum(v))
slow = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@slow
@given(tokens)
def test_prefill_matches_sequential_decode(seq):
    last, cache = TINY.prefill(seq)
    assert cache.length == len(seq)
    c2 = TINY.new_cache()
    for t in seq:
        step = TINY.decode_step(c2, t)
    np.testing.assert_allclose(last, step, rtol=1e-6, atol=1e-6 * np.abs(step).max())


@slow
@given(tokens.filter(lambda s: len(s) <= 24), st.integers(1, 8), st.sampled_from(["tf", "ngram", "mixed"]))
def test_greedy_speculative_is_lossless(prompt, gamma, pair):
    draft, target = {"tf": (TINY_DRAFT, TINY), "ngram": (NGRAMS[1], NGRAMS[3]),
                     "mixed": (NGRAMS[2], TINY)}[pair]
    cfg = SpecRunConfig(lookahead=gamma, max_new_tokens=16)
    spec = generate_speculative(draft, target, prompt, cfg)
    assert spec.output == generate_autoregressive(target, prompt, cfg).output
    assert 1 <= spec.tar <= gamma + 1


@slow
@given(tokens.filter(lambda s: len(s) <= 16), st.integers(1, 6), st.integers(0, 2**32))
def test_sampled_tar_bounds(prompt, gamma, seed):
    cfg = SpecRunConfig(lookahead=gamma, temperature=1.0, max_new_tokens=12, rng_seed=seed)
    run = generate_speculative(NGRAMS[1], NGRAMS[2], prompt, cfg)
    assert len(run.output) == 12
    assert all(1 <= t.emitted <= gamma + 1 for t in run.traces)
    assert 1 <= run.tar <= gamma + 1


@given(probs, st.integers(0, 1000))
def test_first_token_distribution_is_target(p, seed):
    q = np.random.default_rng(seed).dirichlet(np.ones(len(p)))
    np.testing.assert_allclose(first_token_distribution(p, q), p, atol=1e-12)


@given(st.lists(st.integers(0, VOCAB - 1), max_size=5), st.sampled_from([1, 2, 3]))
def test_ngram_distributions_normalize(context, order):
    dist = NGRAMS[order].next_distribution(context)
    assert abs(dist.sum() - 1) < 1e-9 and (dist >= 0).all()


@slow
@given(tokens.filter(lambda s: len(s) <= 8))
def test_transformer_distribution_is_softmax_of_logits(seq):
    logits, _ = TINY.prefill(seq)
    np.testing.assert_allclose(TINY.next_distribution(seq), softmax(logits), atol=1e-9)


configs = st.builds(lambda l, h, hd, f, v: ModelConfig(l, h, h * hd, f, v),
                    st.integers(1, 24), st.integers(1, 16), st.sampled_from([8, 16, 64]),
                    st.integers(1, 8192), st.integers(2, 60000))


@given(configs)
def test_count_params_monotone(c):
    base = count_params(c)
    assert count_params(c.replace(num_layers=c.num_layers + 1)) > base
    assert count_params(c.replace(ffn_dim=c.ffn_dim + 1)) > base
    hd = c.head_dim
    assert count_params(c.replace(num_heads=c.num_heads + 1, model_dim=c.model_dim + hd)) > base


@given(st.floats(0, 1), st.integers(1, 16))
def test_improvement_factor_matches_power_sum(alpha, gamma):
    assert abs(improvement_factor(alpha, gamma) - sum_of_powers(alpha, gamma)) <= 1e-12 * (gamma + 1)


pos = st.floats(1e-4, 10.0)


@given(st.floats(1.0001, 20), st.floats(0.0, 5), pos, pos, pos)
def test_throughput_monotone(tar, bump, t_target, t_draft, dt):
    base = throughput(tar, t_target, t_draft)
    assert throughput(tar + bump, t_target, t_draft) >= base
    assert throughput(tar, t_target + dt, t_draft) < base
    assert throughput(tar, t_target, t_draft + dt) < base


@given(st.floats(1.0001, 20), pos, pos)
def test_required_tar_round_trip(tar, t_target, t_draft):
    p = AnalyticalParams(tar, t_target, t_draft)
    assert abs(required_tar(predict_throughput(p), t_target, t_draft) - tar) <= 1e-12 * tar
