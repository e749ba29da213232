"""Acceptance gate: one test per criterion, each reporting PASS/FAIL with its measured numbers.

Run with ``pytest tests/test_acceptance.py``; the terminal summary lists every criterion.
"""
import itertools
import math
import time
from importlib import resources

import numpy as np
import pytest

from clozelm import tensor as T
from clozelm.cli import run
from clozelm.decode import DecodeConfig, beam_search, beam_search_fn, has_repeated_ngram, sample_lr, seq2seq_step_fn
from clozelm.finetune import (ClassifierHead, FinetuneConfig, SpanHead, best_span, classify, classify_pack,
                              extract_span, span_pack, train_classifier, train_seq2seq, train_span)
from clozelm.masks import LMObjective, allowed_matrix, build_mask, reachable
from clozelm.metrics import lcs_length, rouge_l, rouge_n, tokens
from clozelm.model import (ModelConfig, ModelParams, PackedBatch, PackedInput, forward, lm_logits, nsp_logits,
                           pack_pair, pack_single, read_checkpoint, save_checkpoint)
from clozelm.optim import OptimizerConfig
from clozelm.pretrain import (KEPT, OBJECTIVE_ORDER, REPLACED_MASK, REPLACED_RANDOM, ClozeBatch, CorruptionPolicy,
                              MixSchedule, PretrainSettings, corrupt, pretrain_loop, running_means,
                              sample_objective)
from clozelm.masks import Objective
from clozelm.tensor import Tape, Tensor
from clozelm.tokenizer import EOS, SOS

from helpers import (brute_force_best_sequence, brute_force_lcs, brute_force_lcs_subsets, brute_force_span,
                     max_rel_error, numerical_grad)

OBJECTIVES = (LMObjective.left_to_right(), LMObjective.right_to_left())


def random_model(rng, n_layers, d_model, n_heads, vocab, max_len, std=0.5, d_ff=None):
    cfg = ModelConfig(n_layers=n_layers, d_model=d_model, n_heads=n_heads, d_ff=d_ff or 2 * d_model,
                      vocab_size=vocab, max_len=max_len, dropout=0.0)
    p = ModelParams.init(cfg, int(rng.integers(2 ** 31)))
    for t in p.values():
        t.data[...] = rng.normal(0.0, std, t.shape)
    return p


# ---------------------------------------------------------------------------
# 1. mask structure
# ---------------------------------------------------------------------------

def test_c01_mask_structure(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    failures = 0
    kinds = list(OBJECTIVE_ORDER)
    for _ in range(200):
        kind = kinds[int(rng.integers(4))]
        n = int(rng.integers(3, 17))
        if kind is Objective.SEQ2SEQ:
            s = int(rng.integers(2, n))
            a = allowed_matrix(LMObjective.seq2seq(s), n)
            ok = (a[:s, :s].all() and not a[:s, s:].any() and a[s:, :s].all()
                  and np.array_equal(a[s:, s:], np.tril(np.ones((n - s, n - s), dtype=bool))))
        else:
            a = allowed_matrix(LMObjective(kind), n)
            l2r = build_mask(LMObjective.left_to_right(), n).entries
            r2l = build_mask(LMObjective.right_to_left(), n).entries
            ok = np.array_equal(r2l, l2r.T)
            ok &= {Objective.BIDIRECTIONAL: a.all(),
                   Objective.LEFT_TO_RIGHT: np.array_equal(a, np.tril(np.ones((n, n), dtype=bool))),
                   Objective.RIGHT_TO_LEFT: np.array_equal(a, np.triu(np.ones((n, n), dtype=bool)))}[kind]
        failures += not ok
    elapsed = time.perf_counter() - t0
    passed = failures == 0 and elapsed < 5
    report_criterion(1, passed, f"200 configs, {failures} violations, {elapsed:.2f}s (limit 5s)")
    assert passed


# ---------------------------------------------------------------------------
# 2. causality under perturbation
# ---------------------------------------------------------------------------

def test_c02_causality_perturbation(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    leaks = checked = 0
    vocab = 30
    for _ in range(100):
        n_layers = int(rng.integers(1, 3))
        d_model = int(rng.choice([8, 16, 32]))
        n_heads = int(rng.choice([h for h in (1, 2, 4) if d_model % h == 0]))
        p = random_model(rng, n_layers, d_model, n_heads, vocab, 12)
        n = int(rng.integers(3, 13))
        body = [int(x) for x in rng.integers(5, vocab, n - 1)]
        s = int(rng.integers(2, n))
        packs = [PackedInput([SOS] + body, [2] * n, LMObjective.left_to_right()),
                 PackedInput([SOS] + body, [3] * n, LMObjective.right_to_left())]
        s2s_ids = [SOS] + body
        s2s_ids[s - 1] = EOS
        packs.append(PackedInput(s2s_ids, [4] * s + [5] * (n - s), LMObjective.seq2seq(s)))
        for packed in packs:
            reach = reachable(packed.mask(), n_layers)
            base = forward(p, packed).last.data
            fixed = {0}
            if packed.objective.source_len is not None:
                fixed.add(packed.objective.source_len - 1)
            for j in range(n):
                if j in fixed:
                    continue
                ids = list(packed.ids)
                ids[j] = 5 + (ids[j] - 5 + 1 + int(rng.integers(vocab - 6))) % (vocab - 5)
                out = forward(p, packed.with_ids(ids)).last.data
                for i in np.flatnonzero(~reach[:, j]):
                    checked += 1
                    leaks += not np.array_equal(out[i], base[i])
    elapsed = time.perf_counter() - t0
    passed = leaks == 0 and checked > 0 and elapsed < 60
    report_criterion(2, passed, f"100 models, {checked} unreachable (i, j) checks, {leaks} changed, "
                                f"{elapsed:.1f}s (limit 60s)")
    assert passed


# ---------------------------------------------------------------------------
# 3. gradient oracle
# ---------------------------------------------------------------------------

def _cloze_batches(rng, vocab):
    def body(k):
        return [int(x) for x in rng.integers(5, vocab, k)]

    batches = [
        (ClozeBatch([pack_pair(body(3), body(3), Objective.BIDIRECTIONAL),
                     pack_pair(body(2), body(4), Objective.BIDIRECTIONAL)],
                    [[(1, 7), (5, 9)], [(4, 11)]], Objective.BIDIRECTIONAL, [0, 1])),
        (ClozeBatch([pack_pair(body(3), body(4), Objective.SEQ2SEQ)], [[(2, 6), (6, 40)]], Objective.SEQ2SEQ)),
        (ClozeBatch([pack_single(body(6), LMObjective.left_to_right())], [[(3, 12)]], Objective.LEFT_TO_RIGHT)),
        (ClozeBatch([pack_single(body(5), LMObjective.right_to_left())], [[(2, 49)]], Objective.RIGHT_TO_LEFT)),
    ]
    return batches


def _total_loss(params, head_params, batches, seed):
    total = None
    for k, b in enumerate(batches):
        h = forward(params, PackedBatch.from_inputs(b.inputs), train_mode=True, seed=seed + k).last
        bi = [i for i, tg in enumerate(b.targets) for _ in tg]
        pi = [p for tg in b.targets for p, _ in tg]
        gold = [t for tg in b.targets for _, t in tg]
        loss = T.cross_entropy(lm_logits(head_params, h, (bi, pi)), gold, 0.1)
        if b.nsp_labels is not None:
            sos = T.take_rows(h, (np.arange(len(b)), np.zeros(len(b), dtype=np.int64)))
            loss = T.add(loss, T.cross_entropy(nsp_logits(params, sos), b.nsp_labels))
        total = loss if total is None else T.add(total, loss)
    return total


@pytest.mark.slow
def test_c03_gradient_oracle(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    cfg = ModelConfig(n_layers=2, d_model=16, n_heads=2, d_ff=32, vocab_size=50, max_len=10, dropout=0.1)
    params = ModelParams.init(cfg, 3)
    for t in params.values():
        t.data[...] += rng.normal(0.0, 0.2, t.shape)
    batches = _cloze_batches(rng, 50)

    def loss():
        return _total_loss(params, params, batches, seed=11)

    params.zero_grad()
    with Tape() as tape:
        out = loss()
    tape.backward(out)
    worst, worst_name = 0.0, None
    for name, t in params.items():
        numeric = numerical_grad(lambda: loss().item(), t.data)
        err = max_rel_error(t.grad, numeric)
        if err > worst:
            worst, worst_name = err, name
    tied = params["tok_emb"].grad.copy()

    # Same loss with the LM head reading an untied copy of the table: the two
    # partial gradients must add up to the tied one.
    head_table = Tensor(params["tok_emb"].data.copy(), requires_grad=True, name="tok_emb")
    head_params = ModelParams(cfg, {**params.tensors, "tok_emb": head_table})
    params.zero_grad()
    head_table.grad = None
    with Tape() as tape:
        out = _total_loss(params, head_params, batches, seed=11)
    tape.backward(out)
    split_sum = params["tok_emb"].grad + head_table.grad
    tied_err = max_rel_error(tied, split_sum)
    both_nonzero = np.abs(params["tok_emb"].grad).sum() > 0 and np.abs(head_table.grad).sum() > 0
    elapsed = time.perf_counter() - t0
    passed = worst < 1e-4 and tied_err < 1e-12 and both_nonzero and elapsed < 120
    report_criterion(3, passed, f"{params.count()} parameters, max rel error {worst:.2e} ({worst_name}), "
                                f"tied = input + head contribution to {tied_err:.1e}, {elapsed:.1f}s (limit 120s)")
    assert passed


# ---------------------------------------------------------------------------
# 4. corruption statistics
# ---------------------------------------------------------------------------

def test_c04_corruption_statistics(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    packed = pack_single(list(range(5, 105)), LMObjective.bidirectional())   # 100 maskable tokens
    policy = CorruptionPolicy()
    kinds, spans, masked, maskable = [], [], 0, 0
    while len(kinds) < 100_000:
        c = corrupt(packed, policy, rng, 200)
        kinds += c.replacements
        spans += c.span_lengths
        masked += len(c.targets)
        maskable += 100
    kinds, spans = np.array(kinds), np.array(spans)
    rates = [(kinds == k).mean() for k in (REPLACED_MASK, REPLACED_RANDOM, KEPT)]
    mix = [(spans == k).mean() for k in (1, 2, 3)]
    mask_rate = masked / maskable
    elapsed = time.perf_counter() - t0
    passed = (all(abs(r - e) <= 0.01 for r, e in zip(rates, (0.8, 0.1, 0.1)))
              and all(abs(m - e) <= 0.015 for m, e in zip(mix, (0.8, 0.1, 0.1)))
              and abs(mask_rate - 0.15) <= 0.01 and elapsed < 30)
    report_criterion(4, passed, f"{len(kinds)} masked tokens, replace {np.round(rates, 4).tolist()}, "
                                f"spans {np.round(mix, 4).tolist()}, mask rate {mask_rate:.4f}, {elapsed:.1f}s")
    assert passed


# ---------------------------------------------------------------------------
# 5. mixing schedule
# ---------------------------------------------------------------------------

def test_c05_mixing_schedule(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    sched = MixSchedule()
    draws = [sample_objective(sched, rng) for _ in range(60_000)]
    freq = [sum(d is o for d in draws) / len(draws) for o in OBJECTIVE_ORDER]
    elapsed = time.perf_counter() - t0
    passed = all(abs(f - w) <= 0.02 for f, w in zip(freq, (1 / 3, 1 / 3, 1 / 6, 1 / 6))) and elapsed < 5
    names = [o.value for o in OBJECTIVE_ORDER]
    report_criterion(5, passed, f"60000 draws {dict(zip(names, np.round(freq, 4).tolist()))}, {elapsed:.2f}s")
    assert passed


# ---------------------------------------------------------------------------
# 6. joint pretraining convergence (the result is shared with criteria 7 and 11)
# ---------------------------------------------------------------------------

PRETRAIN_STEPS = 2000
PRETRAIN_OPT = OptimizerConfig(peak_lr=1e-3, warmup_steps=50, total_steps=PRETRAIN_STEPS)


@pytest.fixture(scope="session")
def desk_pretrain(toy_corpus, toy_vocab):
    cfg = ModelConfig(vocab_size=len(toy_vocab))
    t0 = time.perf_counter()
    res = pretrain_loop(toy_corpus, toy_vocab, cfg, PRETRAIN_OPT, PRETRAIN_STEPS, seed=0)
    return res, time.perf_counter() - t0


@pytest.mark.slow
def test_c06_pretraining_convergence(desk_pretrain, toy_corpus, toy_vocab, report_criterion):
    res, elapsed = desk_pretrain
    means = running_means(res.history, window=100)
    ratios = {k: last / first for k, (first, last) in means.items()}
    again = pretrain_loop(toy_corpus, toy_vocab, res.params.config, PRETRAIN_OPT, 30, seed=0)
    deterministic = [r["loss"] for r in again.history] == [r["loss"] for r in res.history[:30]]
    passed = (len(ratios) == 4 and all(r < 0.5 for r in ratios.values()) and deterministic
              and elapsed < 600)
    detail = ", ".join(f"{k} {means[k][0]:.2f}->{means[k][1]:.2f} ({ratios[k]:.2f})" for k in means)
    report_criterion(6, passed, f"{detail}; rerun identical: {deterministic}; {elapsed:.0f}s (limit 600s)")
    assert passed


# ---------------------------------------------------------------------------
# 7. copy task
# ---------------------------------------------------------------------------

COPY_TOKENS = (5, 35)   # 30 non-reserved ids


def _copy_pairs(rng, count):
    out = []
    for _ in range(count):
        seq = [int(x) for x in rng.integers(*COPY_TOKENS, int(rng.integers(1, 11)))]
        out.append((seq, seq))
    return out


@pytest.mark.slow
def test_c07_copy_task(desk_pretrain, report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    train = _copy_pairs(rng, 5000)
    test = [s for s, _ in _copy_pairs(rng, 200)]
    params = desk_pretrain[0].params.copy()
    cfg = FinetuneConfig(steps=300, batch_size=64, lr=3e-3, dropout=0.0, target_mask_prob=0.7)
    train_seq2seq(params, train, cfg, seed=0)
    dc = DecodeConfig(beam_size=3, max_out_len=12, block_ngram=None)
    exact = ended = 0
    for src in test:
        hyp = beam_search(params, src, dc).ids
        ended += hyp[-1] == EOS
        exact += list(hyp) == src + [EOS]
    elapsed = time.perf_counter() - t0
    acc = exact / len(test)
    passed = acc >= 0.95 and ended == len(test) and elapsed < 300
    report_criterion(7, passed, f"exact copies {acc:.3f} (need 0.95), generated EOS {ended}/200, "
                                f"{elapsed:.0f}s (limit 300s)")
    assert passed


# ---------------------------------------------------------------------------
# 8. blocking soundness
# ---------------------------------------------------------------------------

def test_c08_blocking_soundness(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    p = random_model(rng, 1, 16, 2, 20, 40, std=0.3)
    # push a handful of tokens up so unblocked decoding would repeat itself
    p["lm_bias"].data[5:9] += 4.0
    p["lm_bias"].data[EOS] -= 6.0
    beam_cfg = DecodeConfig(beam_size=3, max_out_len=16, block_ngram=3)
    sample_cfg = DecodeConfig(max_out_len=16, top_k=40, block_ngram=4)
    repeats = 0
    lengths = []
    for seed in range(1000):
        r = np.random.default_rng(seed)
        src = [int(x) for x in r.integers(5, 20, int(r.integers(1, 8)))]
        b = beam_search(p, src, beam_cfg).ids
        s = sample_lr(p, src, sample_cfg, seed=seed).ids
        repeats += has_repeated_ngram(b, 3) + has_repeated_ngram(s, 4)
        lengths += [len(b), len(s)]
    unblocked = beam_search(p, [5, 6], DecodeConfig(beam_size=3, max_out_len=16, block_ngram=None)).ids
    elapsed = time.perf_counter() - t0
    passed = repeats == 0 and elapsed < 120
    report_criterion(8, passed, f"2000 generations (1000 beam n=3, 1000 sampled n=4 top-40), {repeats} repeats, "
                                f"mean length {np.mean(lengths):.1f}, unblocked control repeats: "
                                f"{has_repeated_ngram(unblocked, 3)}, {elapsed:.0f}s (limit 120s)")
    assert passed


# ---------------------------------------------------------------------------
# 9. beam optimality oracle
# ---------------------------------------------------------------------------

def test_c09_beam_optimality(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    candidates = [EOS, 5, 6, 7, 8]   # five generable tokens; PAD, UNK, SOS and MASK are banned
    mismatches = 0
    for _ in range(20):
        p = random_model(rng, 2, 8, 2, 9, 12, std=0.7)
        src = [int(x) for x in rng.integers(5, 9, 3)]
        step = seq2seq_step_fn(p, src)
        got = beam_search_fn(step, DecodeConfig(beam_size=5 ** 4, max_out_len=4, block_ngram=None))
        cache = {}

        def logprob(prefix):
            if prefix not in cache:
                cache[prefix] = step([prefix])[0]
            return cache[prefix]

        want, score = brute_force_best_sequence(logprob, candidates, 4, EOS)
        mismatches += got.ids != want or not math.isclose(got.logprob, score, rel_tol=0, abs_tol=1e-9)
    elapsed = time.perf_counter() - t0
    passed = mismatches == 0 and elapsed < 60
    report_criterion(9, passed, f"20 models, V=5, max_len 4, beam 625: {mismatches} mismatches, {elapsed:.1f}s")
    assert passed


# ---------------------------------------------------------------------------
# 10. metric oracles
# ---------------------------------------------------------------------------

def test_c10_metric_oracles(report_criterion):
    t0 = time.perf_counter()
    short = [s for n in range(6) for s in itertools.product("abc", repeat=n)]
    bad = 0
    for a in short:
        for b in short:
            bad += lcs_length(a, b) != brute_force_lcs_subsets(a, b)
    rng = np.random.default_rng(10)
    for _ in range(2000):
        a = "".join(rng.choice(list("abc"), int(rng.integers(0, 11))))
        b = "".join(rng.choice(list("abc"), int(rng.integers(0, 11))))
        bad += lcs_length(a, b) != brute_force_lcs_subsets(a, b)
    for _ in range(200):
        a = "".join(rng.choice(list("abc"), int(rng.integers(0, 11))))
        b = "".join(rng.choice(list("abc"), int(rng.integers(0, 11))))
        bad += lcs_length(a, b) != brute_force_lcs(a, b)
    r1 = rouge_n(tokens("the cat"), tokens("the cat sat"), 1)
    rl = rouge_l(tokens("a c"), tokens("a b c"))
    hand = (r1.precision, r1.recall) == (1.0, 2 / 3) and (rl.precision, rl.recall) == (1.0, 2 / 3)
    hand &= abs(r1.f1 - 0.8) < 1e-15 and abs(rl.f1 - 0.8) < 1e-15
    elapsed = time.perf_counter() - t0
    passed = bad == 0 and hand
    report_criterion(10, passed, f"{len(short) ** 2} exhaustive pairs (len <= 5) + 2200 random pairs (len <= 10): "
                                 f"{bad} LCS mismatches; F1 = 0.8 hand examples exact: {hand}; {elapsed:.1f}s")
    assert passed


# ---------------------------------------------------------------------------
# 11. classification and span convergence
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c11_classification_and_span(desk_pretrain, report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    base = desk_pretrain[0].params
    d = base.config.d_model
    markers = (40, 41)

    def cls_example():
        y = int(rng.integers(2))
        toks = [int(x) for x in rng.integers(5, 35, 8)]
        toks[int(rng.integers(8))] = markers[y]
        return classify_pack(toks), y

    train = [cls_example() for _ in range(64)]
    params = base.copy()
    head = ClassifierHead.init(d, 2, seed=0)
    train_classifier(params, head, [x for x, _ in train], [y for _, y in train],
                     FinetuneConfig(mode="classify", steps=50), seed=0)
    cls_acc = np.mean([np.argmax(classify(params, head, x)) == y for x, y in train])

    marker = 42

    def span_example():
        toks = [int(x) for x in rng.integers(5, 35, 12)]
        k = int(rng.integers(12))
        toks[k] = marker
        return span_pack(toks, [marker], (k, k))

    span_train = [span_example() for _ in range(256)]
    span_test = [span_example() for _ in range(200)]
    params = base.copy()
    head = SpanHead.init(d, seed=0)
    train_span(params, head, span_train, FinetuneConfig(mode="span", steps=200), seed=0)
    em = np.mean([extract_span(params, head, e) == e.answer for e in span_test])

    argmax_bad = 0
    for n in range(1, 65):
        for max_len in (0, 3, 16, 64):
            start = rng.integers(-4, 5, n).astype(float)
            end = rng.integers(-4, 5, n).astype(float)
            argmax_bad += best_span(start, end, (0, n), max_len) != brute_force_span(start, end, 0, n, max_len)
    elapsed = time.perf_counter() - t0
    passed = cls_acc >= 0.99 and em >= 0.95 and argmax_bad == 0
    report_criterion(11, passed, f"two-class train accuracy {cls_acc:.3f} after 50 steps (need 0.99); "
                                 f"marker span EM {em:.3f} (need 0.95); span argmax vs exhaustive n <= 64: "
                                 f"{argmax_bad} mismatches; {elapsed:.0f}s")
    assert passed


# ---------------------------------------------------------------------------
# 12. determinism and persistence
# ---------------------------------------------------------------------------

def test_c12_determinism_and_persistence(tmp_path, toy_corpus, toy_vocab, report_criterion):
    cfg = ModelConfig(n_layers=1, d_model=16, n_heads=2, d_ff=32, vocab_size=len(toy_vocab), max_len=48)
    rng = np.random.default_rng(12)
    params = ModelParams.init(cfg, 12)
    for t in params.values():
        t.data[...] += rng.normal(0, 1, t.shape)
    save_checkpoint(params, cfg, tmp_path / "a.ckpt", meta={"step": 1})
    back = read_checkpoint(tmp_path / "a.ckpt", expect=cfg).params
    round_trip = all(back[k].data.tobytes() == params[k].data.tobytes() for k in params)

    opt = OptimizerConfig(total_steps=12, warmup_steps=3)
    st = PretrainSettings(batch_size=4, checkpoint_every=5)
    full = pretrain_loop(toy_corpus, toy_vocab, cfg, opt, 12, seed=3, out_dir=tmp_path / "full", settings=st)
    pretrain_loop(toy_corpus, toy_vocab, cfg, opt, 7, seed=3, out_dir=tmp_path / "cut", settings=st)
    resumed = pretrain_loop(toy_corpus, toy_vocab, cfg, opt, 12, seed=3, out_dir=tmp_path / "cut", settings=st)
    same_traj = [r["loss"] for r in full.history] == [r["loss"] for r in resumed.history]
    same_traj &= all(np.array_equal(full.params[k].data, resumed.params[k].data) for k in full.params)

    corpus = str(resources.files("clozelm").joinpath("data/toy_corpus.txt"))
    outputs = []
    for k in range(2):
        w = tmp_path / f"cli{k}"
        w.mkdir()
        (w / "src.txt").write_text("The cat sat.\nRain fell.\n", encoding="utf-8")
        codes = [
            run(["build-vocab", "--corpus", corpus, "--size", "120", "--out", str(w / "v.json")]),
            run(["pretrain", "--corpus", corpus, "--vocab", str(w / "v.json"), "--steps", "4", "--seed", "9",
                 "--batch-size", "4", "--out", str(w / "pre")]),
            run(["generate", "--checkpoint", str(w / "pre" / "ckpt-000004.ckpt"), "--input", str(w / "src.txt"),
                 "--mode", "sample", "--max-len", "6", "--seed", "5", "--out", str(w / "gen.txt")]),
        ]
        files = {p.relative_to(w).as_posix(): p.read_bytes() for p in sorted(w.rglob("*")) if p.is_file()}
        outputs.append((codes, files))
    cli_same = outputs[0] == outputs[1] and outputs[0][0] == [0, 0, 0]
    passed = round_trip and same_traj and cli_same
    report_criterion(12, passed, f"checkpoint bit-exact: {round_trip}; resumed trajectory identical: {same_traj}; "
                                 f"CLI outputs byte-identical ({len(outputs[0][1])} files): {cli_same}")
    assert passed
