"""Acceptance suite: one test per shipping criterion, with stated tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to get one line per
criterion.  The overfit and two-family fixtures train real models and take
a few minutes total.
"""

import itertools
import sys
import time

import numpy as np
import pytest

from capfill import nn, toydata
from capfill.backprop import attention_loss, teacher_forced_loss
from capfill.completion import BidiModel, CompletionRequest, beam_search
from capfill.decoders import (
    AttentionParams,
    DecoderConfig,
    DecoderParams,
    attention_step,
    backward_states,
    forward_step,
    init_state,
)
from capfill.evaluation import (
    ReplayCase,
    bleu4,
    char_tokens,
    cider,
    one_sided_sign_test,
    oov_rate,
    rouge_l,
    simulated_compare,
)
from capfill.service import SessionService, replay_log
from capfill.textcore import build_vocab, encode, levenshtein
from capfill.training import (
    FeatureStore,
    TrainConfig,
    greedy_caption,
    train_backward,
    train_forward_abd,
    train_show_and_tell,
)
from helpers import TableModel, enumerate_paths, max_grad_error


def report(num, message):
    print(f"\n[criterion {num:2d}] PASS: {message}")


# ---------------------------------------------------------------------------
# shared trained fixtures


@pytest.fixture(scope="module")
def overfit():
    """30 distinct fixed-length captions, one unit-norm feature each; both
    completers trained to memorization."""
    records = toydata.memorization_corpus(n=30, seed=1, min_len=9, max_len=9)
    features = toydata.synthetic_features([r.image_id for r in records], dim=64, seed=2)
    cfg = TrainConfig(
        lr=0.005,
        max_epochs=300,
        batch_size=16,
        seed=0,
        N=9,
        d=64,
        d_embed=32,
        val_fraction=0.0,
        test_fraction=0.0,
        selection_metric="loss",
    )
    t0 = time.time()
    bwd = train_backward(records, features, cfg)
    st = train_show_and_tell(records, features, cfg)
    abd = train_forward_abd(records, features, cfg, bwd)
    elapsed = time.time() - t0
    return dict(
        records=records,
        features=features,
        config=cfg,
        bwd=bwd,
        st=st,
        abd=abd,
        train_seconds=elapsed,
    )


@pytest.fixture(scope="module")
def two_family():
    """Two caption families sharing a prefix; replay happens on images the
    models never saw, so only text right of the cursor reveals the family."""
    records, _truth = toydata.disambiguation_corpus(n_images=120, seed=3)
    features = toydata.synthetic_features([r.image_id for r in records], dim=64, seed=4)
    cfg = TrainConfig(
        lr=0.005,
        max_epochs=200,
        batch_size=16,
        seed=0,
        N=len(toydata.FAMILY_A),
        d=64,
        d_embed=32,
        val_fraction=0.0,
        test_fraction=0.0,
        selection_metric="loss",
    )
    bwd = train_backward(records, features, cfg)
    st = train_show_and_tell(records, features, cfg)
    abd = train_forward_abd(records, features, cfg, bwd)

    case_ids = [f"replay{i:04d}" for i in range(250)]
    replay_features = toydata.synthetic_features(case_ids, dim=64, seed=8)
    cases = []
    for i, case_id in enumerate(case_ids):
        family = toydata.FAMILY_A if i % 2 == 0 else toydata.FAMILY_B
        cases.append(
            ReplayCase(
                image_id=case_id,
                text=family,
                cursor=len(toydata.FAMILY_PREFIX),
                final=family,
            )
        )
    return dict(st=st, abd=abd, cases=cases, replay_features=replay_features)


# ---------------------------------------------------------------------------
# 1. gradient correctness


def test_c01_gradients_match_finite_differences():
    t0 = time.time()
    rng = np.random.default_rng(17)
    cfg = DecoderConfig(m=11, d=12, d_embed=8, feature_dim=10, N=6)
    feature = rng.normal(size=cfg.feature_dim)
    targets = [3, 7, 1, 9, 2]  # sequence length 5

    bparams = DecoderParams.create(rng, cfg)
    named_b = bparams.named("bwd.")
    grads_b = nn.zero_grads(named_b)
    teacher_forced_loss(bparams, feature, targets, grads_b, prefix="bwd.")
    err_b = max_grad_error(
        lambda: teacher_forced_loss(bparams, feature, targets), named_b, grads_b
    )

    fparams = DecoderParams.create(rng, cfg, attention_input=True)
    aparams = AttentionParams.create(rng, cfg)
    hb = backward_states(bparams, feature, [4, 5, 6], cfg.N)
    named_f = {**fparams.named("fwd."), **aparams.named("att.")}
    grads_f = nn.zero_grads(named_f)
    attention_loss(
        fparams, aparams, hb, feature, targets, grads_f, fwd_prefix="fwd.", att_prefix="att."
    )
    err_f = max_grad_error(
        lambda: attention_loss(fparams, aparams, hb, feature, targets), named_f, grads_f
    )

    elapsed = time.time() - t0
    assert err_b < 1e-4, f"backward-decoder gradients off by {err_b}"
    assert err_f < 1e-4, f"attention-decoder gradients off by {err_f}"
    assert elapsed < 60.0
    report(1, f"max relative error {max(err_b, err_f):.2e} over every parameter "
              f"({elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# 2. edit-distance oracle equivalence


def test_c02_levenshtein_matches_exhaustive_oracle():
    sys.setrecursionlimit(10000)
    t0 = time.time()
    strings = ["".join(c) for L in range(7) for c in itertools.product("abc", repeat=L)]
    memo = {}

    def oracle(a, b):
        if a > b:
            a, b = b, a
        key = (a, b)
        got = memo.get(key)
        if got is not None:
            return got
        if not a:
            val = len(b)
        elif not b:
            val = len(a)
        else:
            val = min(
                oracle(a[1:], b[1:]) + (0 if a[0] == b[0] else 1),
                oracle(a[1:], b) + 1,
                oracle(a, b[1:]) + 1,
            )
        memo[key] = val
        return val

    pairs = 0
    for i, a in enumerate(strings):
        for b in strings[i:]:
            d = levenshtein(a, b)
            assert d == oracle(a, b), (a, b)
            assert d == levenshtein(b, a), (a, b)
            pairs += 1
    elapsed = time.time() - t0
    assert elapsed < 30.0
    report(2, f"{pairs} unordered pairs (all ordered pairs via symmetry) in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. overfit convergence


def test_c03_overfit_convergence(overfit):
    st_loss = overfit["st"].history["train_loss"][-1]
    abd_loss = overfit["abd"].history["train_loss"][-1]
    assert len(overfit["st"].history["train_loss"]) <= 500
    assert st_loss < 0.05, f"prefix-only model loss {st_loss}"
    assert abd_loss < 0.05, f"attention model loss {abd_loss}"

    records, features = overfit["records"], overfit["features"]
    st_model, abd_model = overfit["st"].to_model(), overfit["abd"].to_model()
    st_hits = sum(
        greedy_caption(st_model, features[r.image_id]) == r.caption for r in records
    )
    abd_hits = sum(
        greedy_caption(abd_model, features[r.image_id]) == r.caption for r in records
    )
    assert st_hits >= 27, f"prefix-only reconstructed {st_hits}/30"
    assert abd_hits >= 27, f"attention model reconstructed {abd_hits}/30"
    assert overfit["train_seconds"] < 600.0
    report(
        3,
        f"losses {st_loss:.3f}/{abd_loss:.3f}, reconstruction {st_hits}/30 and "
        f"{abd_hits}/30, trained in {overfit['train_seconds']:.0f}s",
    )


# ---------------------------------------------------------------------------
# 4. prefix constraint


def test_c04_prefix_constraint(overfit):
    records, features = overfit["records"], overfit["features"]
    st_model, abd_model = overfit["st"].to_model(), overfit["abd"].to_model()
    rng = np.random.default_rng(11)
    checked = 0
    for i in range(100):
        record = records[int(rng.integers(len(records)))]
        text = record.caption[: int(rng.integers(0, 10))]
        if rng.random() < 0.2 and text:
            text = text[:-1] + "Z"  # out-of-vocabulary character stays verbatim
        cursor = int(rng.integers(0, len(text) + 1))
        req = CompletionRequest(features[record.image_id], text, cursor, k=5)
        left = text[:cursor]
        for model in (st_model, abd_model):
            for cand in model.complete(req):
                assert cand.text.startswith(left), (text, cursor, cand.text)
                checked += 1
    report(4, f"{checked} candidates across 100 requests all start with the "
              "left-of-cursor text")


# ---------------------------------------------------------------------------
# 5. fixed backward length


def test_c05_backward_sequence_fixed_length():
    N = 8
    cfg = DecoderConfig(m=9, d=10, d_embed=6, feature_dim=7, N=N)
    params = DecoderParams.create(np.random.default_rng(5), cfg)
    rng = np.random.default_rng(6)
    for n in range(N + 1):
        ids = [int(t) for t in rng.integers(0, cfg.m, size=n)]
        seq = backward_states(params, rng.normal(size=cfg.feature_dim), ids, N)
        assert seq.states.shape == (N + 1, cfg.d)
        assert seq.num_free == N - n
        assert seq.num_forced == n
        assert seq.forced == [False] * (N - n) + [True] * n
        assert seq.tokens[N - n :] == ids[::-1]
    report(5, f"N+1 = {N + 1} vectors with N-n free and n forced steps for every "
              f"n in 0..{N}")


# ---------------------------------------------------------------------------
# 6. zero OOV rate


def test_c06_zero_oov(overfit):
    records, features = overfit["records"], overfit["features"]
    st_model = overfit["st"].to_model()
    vocab = overfit["st"].vocab
    rng = np.random.default_rng(13)
    texts = []
    for r in records:
        texts.append(greedy_caption(st_model, features[r.image_id]))
    while len(texts) < 100:
        record = records[int(rng.integers(len(records)))]
        prefix_len = int(rng.integers(0, 4))
        req = CompletionRequest(
            features[record.image_id], record.caption[:prefix_len], prefix_len, k=1
        )
        texts.append(st_model.complete(req)[0].text)
    rate = oov_rate([encode(vocab, t) for t in texts], vocab.unk_id)
    assert rate == 0.0
    report(6, f"oov rate {rate} over {len(texts)} generated sentences")


# ---------------------------------------------------------------------------
# 7. beam sanity


def test_c07_beam_sanity(overfit):
    records, features = overfit["records"], overfit["features"]
    for ckpt in (overfit["st"], overfit["abd"]):
        model = ckpt.to_model()
        vocab, cfg = ckpt.vocab, ckpt.config
        for record in records[:5]:
            feature = features[record.image_id]
            top = model.complete(CompletionRequest(feature, "", 0, k=1))[0].text
            # manual greedy loop
            if ckpt.kind == "forward":
                state = init_state(model.params, feature, max_steps=cfg.N)
                step = lambda s: forward_step(model.params, s)
            else:
                hb = backward_states(model.bwd, feature, [], cfg.N)
                state = init_state(model.fwd, feature, max_steps=cfg.N)
                step = lambda s: attention_step(model.att, model.fwd, s, hb)
            tokens = []
            for _ in range(cfg.N):
                _, state = step(state)
                if state.last_token == vocab.end_id:
                    break
                tokens.append(state.last_token)
            greedy_text = "".join(vocab.tokens[t] for t in tokens)
            assert top == greedy_text, (record.image_id, top, greedy_text)

    table = TableModel(
        table={
            (): [0.7, 0.2, 0.1],
            (0,): [0.1, 0.6, 0.3],
            (0, 1): [0.05, 0.05, 0.9],
            (1,): [0.1, 0.1, 0.8],
        },
        default=[0.1, 0.1, 0.8],
    )
    oracle = enumerate_paths(table, end_id=2, max_len=4)
    beams = beam_search(table.step, (), k=2, max_len=4, end_id=2)
    assert [tokens for tokens, _ in beams] == [tokens for tokens, _ in oracle[:2]]
    for (_, got), (_, want) in zip(beams, oracle[:2]):
        assert got == pytest.approx(want, abs=1e-12)
    report(7, "width-1 beams equal greedy on 10 decodes; width-2 beams equal the "
              "exhaustive top-2 on the toy table")


# ---------------------------------------------------------------------------
# 8. metric fixtures


def test_c08_metric_fixtures():
    toks = char_tokens("abcde")
    assert bleu4(toks, [toks]) == pytest.approx(1.0, abs=1e-9)
    assert rouge_l(toks, [toks]) == pytest.approx(1.0, abs=1e-9)
    corpus = [[char_tokens(s)] for s in ("abcde", "fghij", "klmno")]
    score = cider([toks], [[toks]], corpus)
    assert score == pytest.approx(10.0, abs=1e-6)
    report(8, "identical-pair fixtures hit 1.0 / 1.0 / 10.0 at stated tolerances")


# ---------------------------------------------------------------------------
# 9. suffix utilization


def test_c09_suffix_utilization(two_family):
    rep = simulated_compare(
        two_family["cases"],
        two_family["abd"].to_model(),
        two_family["st"].to_model(),
        k=5,
        features=two_family["replay_features"],
    )
    abd_rank1 = rep["model_a"]["mean_levd"][0]
    st_rank1 = rep["model_b"]["mean_levd"][0]
    wins = sum(1 for a, b in rep["per_case_rank1"] if a < b)
    losses = sum(1 for a, b in rep["per_case_rank1"] if a > b)
    p = one_sided_sign_test(wins, losses)
    assert rep["cases"] >= 200
    assert abd_rank1 < st_rank1, (abd_rank1, st_rank1)
    assert p < 0.05, f"sign test p={p} (wins={wins}, losses={losses})"

    # within each model, mean distance tends to grow with rank
    for label in ("model_a", "model_b"):
        means = rep[label]["mean_levd"]
        up = sum(1 for x, y in zip(means, means[1:]) if y >= x)
        assert up >= 2, means
    report(
        9,
        f"rank-1 mean edit distance {abd_rank1:.2f} (bidirectional) vs "
        f"{st_rank1:.2f} (prefix-only); sign test p={p:.1e} over {rep['cases']} cases",
    )


# ---------------------------------------------------------------------------
# 10. suggestion latency


def test_c10_suggest_latency():
    vocab = build_vocab(["abcdefghijklmnopqrst"])
    cfg = DecoderConfig(m=vocab.m, d=128, d_embed=64, feature_dim=2048, N=30)
    rng = np.random.default_rng(21)
    model = BidiModel(
        vocab,
        cfg,
        fwd=DecoderParams.create(rng, cfg, attention_input=True),
        bwd=DecoderParams.create(rng, cfg),
        att=AttentionParams.create(rng, cfg),
    )
    features = FeatureStore(
        dim=cfg.feature_dim, vectors={"img": rng.normal(size=cfg.feature_dim)}
    )
    service = SessionService(model, features, k=5)
    session = service.create_session("img")
    service.suggest(session.session_id, "abc", 2)  # warmup
    prompts = ["", "a", "abcd", "abcdefgh", "abcdefghijklmnop"]
    samples = []
    for i in range(60):
        text = prompts[i % len(prompts)]
        t0 = time.perf_counter()
        service.suggest(session.session_id, text, min(2, len(text)))
        samples.append((time.perf_counter() - t0) * 1000.0)
    samples.sort()
    median = samples[len(samples) // 2]
    p95 = samples[int(len(samples) * 0.95)]
    assert median < 100.0, f"median {median:.1f}ms"
    assert p95 < 200.0, f"p95 {p95:.1f}ms"
    report(10, f"suggest latency median {median:.1f}ms, p95 {p95:.1f}ms "
               f"(d=128, N=30, k=5)")


# ---------------------------------------------------------------------------
# 11. session accounting


def test_c11_session_accounting(tmp_path):
    class CannedModel:
        def __init__(self):
            from types import SimpleNamespace

            self.config = SimpleNamespace(N=30)

        def complete(self, req):
            from capfill.completion import Candidate

            left = req.text[: req.cursor]
            return [
                Candidate(text=left + "狗" * (i + 1), score=-float(i), rank=i + 1)
                for i in range(req.k)
            ]

    log_path = tmp_path / "events.jsonl"
    features = FeatureStore(dim=2, vectors={"img": np.zeros(2)})
    service = SessionService(CannedModel(), features, k=5, log_path=log_path)
    session = service.create_session("img")
    sid = session.session_id
    service.record_snapshot(sid, "一", 1, ts=1.0)
    service.record_snapshot(sid, "一只", 2, ts=2.0)
    service.suggest(sid, "一只", 2)
    service.record_selection(sid, rank=1, text="一只狗", ts=3.0)
    stats = service.submit(sid, "一只狗", ts=4.0)
    service.close()

    assert stats.rounds == 3
    assert stats.accumulated_edits == stats.rounds - 1 == 2
    assert stats.accumulated_levd == 2
    assert stats.num_selections == 1
    assert stats.mode == "interactive"
    assert stats.manual_levd == 3

    replayed = replay_log(log_path)
    assert replayed[sid].stats() == stats
    report(11, "scripted session stats match hand computation and the event-log "
               "replay reproduces them exactly")
