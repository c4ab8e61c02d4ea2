"""Acceptance gate: nine criteria, one test and one printed verdict line each.

Each test prints "[PASS] criterion N: ..." (or the FAIL twin) directly to the
terminal, then asserts. Thresholds are pinned; corpora, keys, and seeds are
frozen so every run is deterministic on a given machine.
"""

import time

import numpy as np
import pytest

from oracles import anova_f_twopass, qp_bias, svm_dual_objective, svm_dual_qp

from atsteg.ats import COVER, STEGO, AtsReport, Diagnostics, PerImage, ats_classify
from atsteg.harness import (
    ExperimentSpec,
    SyntheticGroup,
    ratio_sweep,
    run_experiment,
    stream_experiment,
)
from atsteg.image_io import synth_cover
from atsteg.learner import (
    LearnerParams,
    anova_f,
    decision_values,
    rbf_kernel,
    train_gsvm,
)
from atsteg.quantify import StreamState, confidence, rounds_seen, search_bitrate, stream_add
from atsteg.stego import EmbedConfig, change_rate, lsbm_embed

pytestmark = pytest.mark.acceptance


def _verdict(capsys, ok: bool, criterion: int, detail: str) -> None:
    tag = "PASS" if ok else "FAIL"
    with capsys.disabled():
        print(f"[{tag}] criterion {criterion}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# 1. Change-rate oracle


def test_criterion_1_change_rate_oracle(capsys):
    t0 = time.perf_counter()
    failures = []
    details = []
    for i, rate in enumerate((0.10, 0.25, 0.40)):
        cover = synth_cover(seed=1000 + i, width=512, height=512, smoothness=2.0)
        stego = lsbm_embed(cover, EmbedConfig(rate=rate, key=7))
        measured = change_rate(cover, stego)
        details.append(f"r={rate:.2f}: {measured:.4f}")
        if abs(measured - rate / 2.0) > 0.005:
            failures.append(f"single {rate}: {measured:.4f}")

    cover = synth_cover(seed=1003, width=512, height=512, smoothness=2.0)
    cfg = EmbedConfig(rate=0.10, key=7)
    double = lsbm_embed(lsbm_embed(cover, cfg), cfg)
    measured_double = change_rate(cover, double)
    details.append(f"double r=0.10: {measured_double:.4f}")
    if abs(measured_double - 0.0975) > 0.005:
        failures.append(f"double 0.10: {measured_double:.4f}")

    elapsed = time.perf_counter() - t0
    if elapsed >= 10.0:
        failures.append(f"runtime {elapsed:.1f}s")
    _verdict(
        capsys,
        not failures,
        1,
        f"change fractions {'; '.join(details)} in {elapsed:.1f}s"
        + (f" | failures: {failures}" if failures else ""),
    )


# ---------------------------------------------------------------------------
# 2./3. Surrogate accuracy on balanced and unbalanced 512x512 sets


def _surrogate_spec(seed, n_cover, n_stego, repeats, pool_count):
    return ExperimentSpec(
        embed=EmbedConfig(algorithm="lsbm", rate=0.25, key=123),
        split=EmbedConfig(algorithm="lsbm", rate=0.25, key=11),
        n_cover=n_cover,
        n_stego=n_stego,
        synthetic=(SyntheticGroup(count=pool_count, width=512, height=512, smoothness=5.0),),
        repeats=repeats,
        seed=seed,
    )


def test_criterion_2_balanced_surrogate_accuracy(capsys):
    t0 = time.perf_counter()
    spec = _surrogate_spec(seed=42, n_cover=125, n_stego=125, repeats=5, pool_count=260)
    result = run_experiment(spec)
    elapsed = time.perf_counter() - t0
    accs = [r.accuracy for r in result.reports]
    ok = result.accuracy >= 0.80 and elapsed < 1800.0
    _verdict(
        capsys,
        ok,
        2,
        f"balanced 125/125 mean accuracy {result.accuracy:.3f} "
        f"(per repeat {', '.join(f'{a:.3f}' for a in accs)}) >= 0.80 in {elapsed:.0f}s",
    )


def test_criterion_3_unbalanced_robustness(capsys):
    spec = _surrogate_spec(seed=43, n_cover=125, n_stego=50, repeats=5, pool_count=260)
    result = run_experiment(spec)
    ok = result.accuracy >= 0.70 and result.tp >= 0.8 * 50
    _verdict(
        capsys,
        ok,
        3,
        f"unbalanced 125/50 mean accuracy {result.accuracy:.3f} >= 0.70, "
        f"mean TP {result.tp:.1f}/50 >= 40",
    )


# ---------------------------------------------------------------------------
# 4. Ratio sweep shape


def test_criterion_4_ratio_sweep_shape(capsys):
    spec = ExperimentSpec(
        embed=EmbedConfig(algorithm="lsbm", rate=0.25, key=123),
        split=EmbedConfig(algorithm="lsbm", rate=0.25, key=11),
        n_cover=30,
        n_stego=10,
        synthetic=(SyntheticGroup(count=60, width=512, height=512, smoothness=5.0),),
        repeats=3,
        seed=44,
    )
    results = ratio_sweep(spec, step=10)
    accs = [r.accuracy for r in results]  # stego ratios 0%, 25%, 50%, 75%, 100%
    acc_zero = accs[0]
    mid_band = accs[1:4]
    ok = acc_zero == min(accs) and min(mid_band) - acc_zero >= 0.15
    _verdict(
        capsys,
        ok,
        4,
        f"sweep accuracies {', '.join(f'{a:.3f}' for a in accs)}: 0% row is the "
        f"minimum and the 20-80% band clears it by {min(mid_band) - acc_zero:.3f} >= 0.15",
    )


# ---------------------------------------------------------------------------
# 5. Bitrate search


def test_criterion_5_bitrate_search(capsys):
    candidates = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
    hits = 0
    estimates = []
    for trial in range(10):
        covers = [
            synth_cover(seed=70000 + 1000 * trial + i, width=512, height=512, smoothness=5.0)
            for i in range(20)
        ]
        payload = EmbedConfig(algorithm="lsbm", rate=0.40, key=500 + trial)
        images = list(covers[:10]) + [
            lsbm_embed(img, payload).with_id(img.id) for img in covers[10:]
        ]
        entries = search_bitrate(images, "lsbm", candidates, key=5)
        best = entries[0].tentative_rate
        estimates.append(best)
        if best in (0.3, 0.4, 0.5):
            hits += 1
    ok = hits >= 8
    _verdict(
        capsys,
        ok,
        5,
        f"true rate 0.40: argmin rates {estimates} -> {hits}/10 within "
        "{0.30, 0.40, 0.50} (need >= 8)",
    )


# ---------------------------------------------------------------------------
# 6. SMO against an interior-point QP oracle


def test_criterion_6_smo_vs_qp_oracle(capsys):
    t0 = time.perf_counter()
    worst_gap = 0.0
    mismatches = 0
    for k in range(50):
        rng = np.random.default_rng(200 + k)
        n = int(rng.integers(4, 13))
        X = rng.normal(size=(n, 2))
        y = np.ones(n)
        y[: n // 2] = -1.0
        rng.shuffle(y)
        C = (0.5, 10.0)[k % 2]
        gamma = 0.8
        model = train_gsvm(X, y, C=C, gamma=gamma)
        K_sv = rbf_kernel(model.support_vectors, model.support_vectors, gamma)
        smo_obj = svm_dual_objective(K_sv, model.sv_labels, model.alphas)
        K = rbf_kernel(X, X, gamma)
        alpha_qp = svm_dual_qp(K, y, C)
        qp_obj = svm_dual_objective(K, y, alpha_qp)
        gap = abs(smo_obj - qp_obj) / max(abs(qp_obj), 1e-12)
        worst_gap = max(worst_gap, gap)
        probes = rng.normal(size=(10, 2))
        dec_smo = decision_values(model, probes)
        dec_qp = rbf_kernel(probes, X, gamma) @ (alpha_qp * y) + qp_bias(K, y, alpha_qp, C)
        mismatches += int(np.count_nonzero((dec_smo > 0.0) != (dec_qp > 0.0)))
    elapsed = time.perf_counter() - t0
    ok = worst_gap <= 1e-4 and mismatches == 0 and elapsed < 60.0
    _verdict(
        capsys,
        ok,
        6,
        f"50 training sets: worst relative dual gap {worst_gap:.2e} <= 1e-4, "
        f"{mismatches} prediction mismatches over 500 probes, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 7. ANOVA F oracle


def test_criterion_7_anova_oracle(capsys):
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    y = np.array([0, 0, 1, 1])
    exact = anova_f(X, y)[0]

    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(6, 31))
        d = int(rng.integers(1, 9))
        scale = 10.0 ** rng.uniform(-3, 3)
        data = rng.normal(size=(n, d)) * scale
        labels = np.where(rng.random(n) < 0.5, -1, 1)
        labels[0], labels[1] = -1, 1  # both classes present
        ours = anova_f(data, labels)
        ref = anova_f_twopass(data, labels)
        worst = max(worst, float(np.max(np.abs(ours - ref) / np.maximum(np.abs(ref), 1e-300))))
    ok = exact == 8.0 and worst <= 1e-10
    _verdict(
        capsys,
        ok,
        7,
        f"{{1,2}} vs {{3,4}} scores {exact} (need exactly 8.0); worst relative "
        f"deviation from the two-pass formula over 100 datasets {worst:.2e} <= 1e-10",
    )


# ---------------------------------------------------------------------------
# 8. Streaming contract


def _counting_stub(seed):
    state = {"round": 0}

    def classify(images):
        state["round"] += 1
        rng = np.random.default_rng(seed + state["round"])
        return AtsReport(
            per_image=[
                PerImage(img.id, STEGO if rng.random() < 0.5 else COVER, 0.0)
                for img in images
            ],
            diagnostics=Diagnostics(1.0, len(images), 0.5),
        )

    return classify


def test_criterion_8_streaming_contract(capsys):
    from atsteg.image_io import GrayImage

    # part 1: bookkeeping property over 1000 random add sequences, n_min=10
    n_min = 10
    rng = np.random.default_rng(99)
    template = np.full((8, 8), 100, dtype=np.uint8)
    violations = []
    for case in range(1000):
        total = int(rng.integers(0, 26))
        state = StreamState(
            split=EmbedConfig(), n_min=n_min, classifier=_counting_stub(int(rng.integers(1 << 30)))
        )
        first_round_at = None
        for k in range(1, total + 1):
            labels = stream_add(state, GrayImage.from_array(template, f"q{k:03d}"))
            if labels is not None and first_round_at is None:
                first_round_at = k
        if total >= n_min and first_round_at != n_min:
            violations.append(f"case {case}: first round at n={first_round_at}")
        if total < n_min and first_round_at is not None:
            violations.append(f"case {case}: premature round")
        for k in range(1, total + 1):
            expected = max(0, total - n_min + 1) if k <= n_min else max(0, total - k + 1)
            got = rounds_seen(state, f"q{k:03d}")
            if got != expected:
                violations.append(f"case {case}: n_l({k})={got} != {expected}")
            elif expected > 0 and not 0.0 < confidence(state, f"q{k:03d}") <= 1.0:
                violations.append(f"case {case}: confidence out of range")
        if violations:
            break

    # part 2: accuracy at the full set beats accuracy at n=30 on the
    # 105 cover / 45 stego surrogate, averaged over 20 seeded streams
    base = dict(
        embed=EmbedConfig(algorithm="lsbm", rate=0.25, key=999),
        split=EmbedConfig(algorithm="lsbm", rate=0.25, key=5),
        n_cover=105,
        n_stego=45,
        synthetic=(SyntheticGroup(count=150, width=128, height=128, smoothness=5.0),),
        n_min=n_min,
        batch_every=5,
        learner_params=LearnerParams(
            c_grid=(2.0**-1, 2.0**3, 2.0**7, 2.0**11),
            gamma_grid=(2.0**-9, 2.0**-7, 2.0**-5, 2.0**-3),
        ),
    )
    early, late = [], []
    for k in range(20):
        rounds = stream_experiment(ExperimentSpec(seed=k, **base), order_seed=1000 + k)
        by_n = {r.n: r for r in rounds}
        early.append(by_n[30].accuracy)
        late.append(by_n[150].accuracy)
    acc_30 = float(np.mean(early))
    acc_full = float(np.mean(late))

    ok = not violations and acc_full > acc_30
    _verdict(
        capsys,
        ok,
        8,
        f"bookkeeping exact over 1000 sequences ({len(violations)} violations); "
        f"mean accuracy {acc_full:.3f} at n=150 vs {acc_30:.3f} at n=30 over 20 streams",
    )


# ---------------------------------------------------------------------------
# 9. Structural invariants on every classification run


def test_criterion_9_structural_invariants(capsys, monkeypatch):
    import atsteg.ats as ats_module

    calls = []
    real = ats_module.verify_structure

    def spy(a_ids, b_ids, c_ids, y):
        calls.append((list(a_ids), list(b_ids), list(c_ids)))
        real(a_ids, b_ids, c_ids, y)

    monkeypatch.setattr(ats_module, "verify_structure", spy)

    pool = [
        synth_cover(seed=900 + i, width=64, height=64, smoothness=3.0).with_id(f"v{i}")
        for i in range(6)
    ]
    split = EmbedConfig(algorithm="lsbm", rate=0.5, key=11)
    fast = LearnerParams(c_grid=(1.0, 256.0), gamma_grid=(2.0**-7, 2.0**-3))
    reports = [
        ats_classify(pool, split, learner_params=fast),
        ats_classify(list(reversed(pool)), split, learner_params=fast),
    ]

    problems = []
    if len(calls) != 2:
        problems.append(f"verify_structure ran {len(calls)} times for 2 runs")
    for a_ids, b_ids, c_ids in calls:
        if not (len(a_ids) == len(b_ids) == len(c_ids) == 6):
            problems.append("cardinality drifted")
        if [i + ":g1" for i in a_ids] != b_ids or [i + ":g2" for i in a_ids] != c_ids:
            problems.append("positional bijection broke id derivation")
        if (set(a_ids) | set(c_ids)) & set(b_ids):
            problems.append("training ids leak into the classified set")
    for report, images in zip(reports, (pool, list(reversed(pool)))):
        if [p.id for p in report.per_image] != [img.id for img in images]:
            problems.append("report ids do not mirror the input ids")
    _verdict(
        capsys,
        not problems,
        9,
        "cardinality, bijection, disjointness, and balance checked inside both "
        "classification runs" + (f" | problems: {problems}" if problems else ""),
    )
