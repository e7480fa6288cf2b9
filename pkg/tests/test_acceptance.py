"""Acceptance criteria, one marked group per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``; the terminal summary
prints one PASS/FAIL line per criterion.
"""

import itertools
import math
import time

import numpy as np
import pytest

import oracles
from breathscreen.audio import AudioClip
from breathscreen.cv import (
    ConfusionMatrix,
    grouped_kfold_split,
    metrics_from_confusion,
    permuted_label_control,
    run_cv,
    run_experiment_grid,
)
from breathscreen.dsp import compute_mfcc, estimate_f0, frame_signal, per_frame_basic
from breathscreen.errors import EmptyMatrix
from breathscreen.models import CnnSpec, DnnSpec, draw_masks, init_model, loss_and_grad
from breathscreen.pipeline import PipelineSpec
from breathscreen.select import fit_pca, pca_transform, top_k, train_random_forest
from breathscreen.stats import aggregate_stats

RATE = 16000


def _frames(x, window="rectangular", frame_len=None):
    x = np.asarray(x, dtype=float)
    n = frame_len or x.size
    return frame_signal(AudioClip(x, RATE), n, n, window)


# --------------------------------------------------------------------------- #
C1 = pytest.mark.acceptance(1, "DSP oracle suite (MFCC 1e-6 rel on 100 frames; ZCR/STE/SPL closed forms; <30 s)")


@C1
def test_c1_mfcc_matches_bruteforce_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1234)
    W, _ = oracles.triangle_weights(26, 512, RATE)
    worst = 0.0
    for _ in range(100):
        raw = rng.uniform(-1, 1, 400) * rng.uniform(0.01, 1.0)
        fs = _frames(raw, "hamming")
        got = compute_mfcc(fs, 512, 26, 13, 1e-10)[0]
        x = raw * oracles.hamming_weights(400)
        power = oracles.dft_power_matrix(x[None, :], 512)[0]
        logs = [math.log(float(W[m] @ power) + 1e-10) for m in range(26)]
        want = oracles.dct2_ortho(logs, 13)
        rel = np.max(np.abs(got - want) / np.maximum(np.abs(want), 1.0))
        worst = max(worst, rel)
    assert worst < 1e-6, worst
    assert time.perf_counter() - t0 < 30


@C1
def test_c1_mfcc_oracle_single_frame_direct_dft():
    # one frame through the fully loop-based DFT as a check on the matrix DFT
    rng = np.random.default_rng(7)
    raw = rng.uniform(-1, 1, 400)
    x = raw * oracles.hamming_weights(400)
    assert np.allclose(oracles.dft_power(x, 512), oracles.dft_power_matrix(x[None, :], 512)[0],
                       rtol=1e-10, atol=1e-10)
    got = compute_mfcc(_frames(raw, "hamming"), 512, 26, 13, 1e-10)[0]
    want = oracles.mfcc_frame(raw, RATE)
    assert np.max(np.abs(got - want) / np.maximum(np.abs(want), 1.0)) < 1e-6


@C1
@pytest.mark.parametrize("c", [0.5, -0.25, 1.0, 1e-3])
def test_c1_constant_closed_form(c):
    ste, log_e, zcr, spl = per_frame_basic(_frames(np.full(400, c)), 1e-10)
    assert ste[0] == pytest.approx(c * c, abs=1e-15)
    assert zcr[0] == 0.0
    assert abs(spl[0] - 20 * math.log10(abs(c) + 1e-10)) < 1e-9
    assert abs(log_e[0] - math.log(c * c + 1e-10)) < 1e-9


@C1
def test_c1_constant_hamming_energy_closed_form():
    N, c = 400, 0.5
    # sum of w^2 over n = 0..N-1 for w = 0.54 - 0.46 cos(2 pi n/(N-1))
    sum_w2 = 0.2916 * N - 0.4968 + 0.2116 * (N + 1) / 2
    ste = per_frame_basic(_frames(np.full(N, c), "hamming"))[0][0]
    assert abs(ste - c * c * sum_w2 / N) < 1e-12


@C1
@pytest.mark.parametrize("freq,phase", [(1000.0, 0.1), (400.0, 0.3), (200.0, 1.0)])
def test_c1_sine_closed_form(freq, phase):
    N = 400
    n = np.arange(N)
    omega = 2 * math.pi * freq / RATE
    x = 0.8 * np.sin(omega * n + phase)
    ste, _, zcr, spl = per_frame_basic(_frames(x))
    # integer number of periods in the frame -> mean of sin^2 is exactly 1/2
    assert (N * freq / RATE) == int(N * freq / RATE)
    assert abs(ste[0] - 0.32) < 1e-9
    assert abs(spl[0] - 20 * math.log10(math.sqrt(0.32) + 1e-10)) < 1e-9
    # zeros at omega*t + phase = k*pi; count those in (0, N-1]
    crossings = math.floor(((N - 1) * omega + phase) / math.pi) - math.floor(phase / math.pi)
    assert zcr[0] == crossings / (N - 1)


@C1
@pytest.mark.parametrize("a", [1.0, 0.3])
def test_c1_alternating_closed_form(a):
    x = a * np.where(np.arange(400) % 2 == 0, 1.0, -1.0)
    ste, _, zcr, spl = per_frame_basic(_frames(x))
    assert zcr[0] == 1.0
    assert abs(ste[0] - a * a) < 1e-15
    assert abs(spl[0] - 20 * math.log10(a + 1e-10)) < 1e-9


# --------------------------------------------------------------------------- #
C2 = pytest.mark.acceptance(2, "F0 of sines 100-400 Hz within 1% over 50 seeded frames")


@C2
def test_c2_f0_sines_within_one_percent():
    errs = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        f = rng.uniform(100.0, 400.0)
        x = rng.uniform(0.1, 1.0) * np.sin(2 * np.pi * f * np.arange(400) / RATE + rng.uniform(0, 2 * np.pi))
        est = estimate_f0(_frames(x, "hamming"), 70.0, 500.0)[0]
        assert not np.isnan(est), (seed, f)
        errs.append(abs(est - f) / f)
    assert max(errs) < 0.01, max(errs)


# --------------------------------------------------------------------------- #
C3 = pytest.mark.acceptance(3, "aggregate_stats closed forms (1e-12) and normal Monte Carlo skew/kurt")


@C3
def test_c3_three_points():
    s = aggregate_stats([1.0, 2.0, 3.0])
    assert abs(s.mean - 2.0) <= 1e-12
    assert abs(s.std - math.sqrt(2.0 / 3.0)) <= 1e-12
    assert (s.min, s.max, s.range) == (1.0, 3.0, 2.0)
    assert abs(s.skew) <= 1e-12
    assert abs(s.kurt - (-1.5)) <= 1e-12


@C3
def test_c3_two_points():
    s = aggregate_stats([-1.0, 1.0])
    assert abs(s.mean) <= 1e-12 and abs(s.std - 1.0) <= 1e-12
    assert abs(s.skew) <= 1e-12 and abs(s.kurt - (-2.0)) <= 1e-12


@C3
def test_c3_normal_monte_carlo():
    x = np.random.default_rng(2024).standard_normal(10_000)
    s = aggregate_stats(x)
    assert abs(s.skew) <= 0.1
    assert abs(s.kurt) <= 0.2
    m, sd, sk, ku = oracles.moments(x.tolist())
    assert abs(s.skew - sk) < 1e-9 and abs(s.kurt - ku) < 1e-9


# --------------------------------------------------------------------------- #
C4 = pytest.mark.acceptance(4, "PCA vs characteristic-polynomial oracle on 5x3 (1e-8), orthonormality, reconstruction")


@C4
@pytest.mark.parametrize("seed", range(20))
def test_c4_pca_matches_eigen_oracle(seed):
    X = np.random.default_rng(seed).normal(size=(5, 3)) * [1.0, 2.0, 0.5]
    model = fit_pca(X, k=3)
    mu = [sum(X[i, j] for i in range(5)) / 5 for j in range(3)]
    C = [[sum((X[r, i] - mu[i]) * (X[r, j] - mu[j]) for r in range(5)) / 4 for j in range(3)] for i in range(3)]
    lam, vecs = oracles.sym3_eigen(C)
    assert np.max(np.abs(model.eigenvalues - lam)) < 1e-8
    for j in range(3):
        v = np.array(vecs[j])
        w = model.W[:, j]
        assert min(np.max(np.abs(w - v)), np.max(np.abs(w + v))) < 1e-8
    assert np.max(np.abs(model.W.T @ model.W - np.eye(3))) < 1e-8
    Z = pca_transform(model, X)
    assert np.max(np.abs((X - X.mean(0)) - Z @ model.W.T)) < 1e-8


# --------------------------------------------------------------------------- #
C5 = pytest.mark.acceptance(5, "RF planted signal ranked first in >=95/100 seeds; importance averaging identity exact")


def _planted(seed, n=200):
    rng = np.random.default_rng(seed)
    c0 = rng.standard_normal(n)
    c1 = rng.standard_normal(n)
    return np.column_stack([c0, c1]), (c0 > 0).astype(int)


@C5
def test_c5_planted_column_first():
    wins = 0
    for seed in range(100):
        X, y = _planted(seed)
        rf = train_random_forest((X, y), n_trees=50, seed=seed)
        wins += int(top_k(rf.importance, 1)[0] == 0)
    assert wins >= 95, wins


@C5
def test_c5_averaging_identity_exact():
    X, y = _planted(3)
    rf = train_random_forest((X, y), n_trees=37, seed=3)
    per_tree = rf.per_tree_importance
    assert per_tree.shape == (37, 2)
    assert np.array_equal(rf.importance, per_tree.mean(axis=0))
    assert np.all(per_tree >= 0)


# --------------------------------------------------------------------------- #
C6 = pytest.mark.acceptance(6, "analytic vs central finite-difference gradients < 1e-4, DNN and CNN, 20 draws (<60 s)")


def _max_rel_grad_error(model, X, y, masks, h=1e-5):
    _, grads = loss_and_grad(model, X, y, masks)
    worst = 0.0
    for name, p in model.params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp, _ = loss_and_grad(model, X, y, masks)
            flat[i] = old - h
            lm, _ = loss_and_grad(model, X, y, masks)
            flat[i] = old
            num = (lp - lm) / (2 * h)
            worst = max(worst, abs(num - g[i]) / max(abs(num), abs(g[i]), 1e-6))
    return worst


def _kink_margin(model, X, masks):
    """How far the network is from an activation switch (ReLU sign or max-pool winner)."""
    from breathscreen.models import logits

    _, cache = logits(model, X, masks)
    if model.spec.kind == "dnn":
        return min(np.abs(cache[f"z{i}"]).min() for i in (1, 2, 3))
    spec = model.spec
    m, C, side, P = X.shape[0], spec.channels, spec.grid, spec.pooled
    padded = np.full((m, C, 2 * P, 2 * P), -np.inf)
    padded[:, :, :side, :side] = cache["z1"]
    blocks = np.sort(padded.reshape(m, C, P, 2, P, 2).transpose(0, 1, 2, 4, 3, 5).reshape(m, C, P, P, 4), -1)
    top, second = blocks[..., -1], np.maximum(blocks[..., -2], 0.0)
    # a block only switches when its best pre-activation crosses 0 or the runner-up
    pool = np.where(top > 0, np.minimum(top, top - second), -top)
    return min(pool.min(), np.abs(cache["z2"]).min())


@C6
def test_c6_gradient_check_both_architectures():
    # Draws whose pre-activations sit within reach of the finite-difference
    # step of a ReLU or max-pool switch are skipped: there the derivative is
    # undefined and the central difference straddles the kink.
    t0 = time.perf_counter()
    worst = {}
    for kind, spec in (("dnn", DnnSpec((23, 16, 12, 8, 1))), ("cnn", CnnSpec(23))):
        w, used, draw = 0.0, 0, 0
        while used < 20:
            rng = np.random.default_rng([draw, 99])
            model = init_model(spec, seed=draw)
            draw += 1
            for k in model.params:  # non-zero biases exercise every term
                model.params[k] = model.params[k] + rng.normal(0, 0.1, model.params[k].shape)
            X = rng.normal(size=(20, spec.d_in))
            y = (rng.random(20) < 0.5).astype(float)
            masks = draw_masks(model, 20, rng)  # held fixed during differencing
            if _kink_margin(model, X, masks) < 1e-4:
                continue
            w = max(w, _max_rel_grad_error(model, X, y, masks))
            used += 1
        worst[kind] = w
        assert draw <= 40, f"{kind}: too many draws near a kink"
    assert worst["dnn"] < 1e-4 and worst["cnn"] < 1e-4, worst
    assert time.perf_counter() - t0 < 60


# --------------------------------------------------------------------------- #
C7 = pytest.mark.acceptance(7, "confusion metrics agree with direct formulas on every 4-tuple in 0..10")


@C7
def test_c7_exhaustive_metrics():
    checked = 0
    for tp, fp, tn, fn in itertools.product(range(11), repeat=4):
        cm = ConfusionMatrix(tp, fp, tn, fn)
        if tp + fp + tn + fn == 0:
            with pytest.raises(EmptyMatrix):
                metrics_from_confusion(cm)
            continue
        got = metrics_from_confusion(cm)
        want = oracles.confusion_metrics(tp, fp, tn, fn)
        for key, w in zip(("accuracy", "precision", "recall", "f1"), want):
            assert abs(got[key] - w) <= 1e-12, (tp, fp, tn, fn, key)
        assert got["precision_undefined"] == (tp + fp == 0)
        assert got["recall_undefined"] == (tp + fn == 0)
        checked += 1
    assert checked == 11**4 - 1


# --------------------------------------------------------------------------- #
C8 = pytest.mark.acceptance(8, "1000-seed fold sweep disjoint/exhaustive/patient-disjoint; audit shows train-only fits")


@C8
def test_c8_thousand_seed_sweep():
    rng = np.random.default_rng(5)
    groups = [f"p{int(g)}" for g in rng.integers(0, 40, size=150)]
    rows = set(range(len(groups)))
    for seed in range(1000):
        plan = grouped_kfold_split(groups, 3, seed)
        sets = [set(f.tolist()) for f in plan.folds]
        assert set().union(*sets) == rows
        assert sum(len(s) for s in sets) == len(rows)
        owner = {}
        for i, s in enumerate(sets):
            for r in s:
                assert owner.setdefault(groups[r], i) == i


@C8
def test_c8_audit_log_train_rows_only(synth_features):
    rep = run_cv(synth_features, PipelineSpec(model="dnn", selection=PipelineSpec().selection), 3, 0)
    plan = grouped_kfold_split(synth_features.groups, 3, 0)
    seen = set()
    for rec in rep.audit.records:
        train, test = plan.train_test(rec["fold"])
        assert rec["rows"] == sorted(train.tolist())
        assert not set(rec["rows"]) & set(test.tolist())
        seen.add((rec["fold"], rec["stage"]))
    assert seen == {(f, s) for f in range(3) for s in ("scaler_fit", "selection_fit", "model_train")}


# --------------------------------------------------------------------------- #
C9 = pytest.mark.acceptance(9, "synthetic benchmark: DNN/all >= 0.90; permuted labels in [0.35, 0.65]; grid < 10 min")


@C9
def test_c9_dnn_all_features(synth_features):
    assert synth_features.n == 128 and int(synth_features.y.sum()) == 67
    rep = run_cv(synth_features, PipelineSpec(model="dnn"), 3, 0)
    assert rep.accuracy >= 0.90, rep.accuracy


@C9
def test_c9_logistic_oracle_agrees(synth_features):
    plan = grouped_kfold_split(synth_features.groups, 3, 0)
    accs = []
    for i in range(3):
        tr, te = plan.train_test(i)
        X, y = synth_features.X, synth_features.y
        accs.append(oracles.logistic_regression_accuracy(X[tr], y[tr], X[te], y[te]))
    assert np.mean(accs) >= 0.90


@C9
def test_c9_permuted_label_control(synth_features):
    accs = permuted_label_control(synth_features, PipelineSpec(model="dnn"), range(10))
    assert all(0.35 <= a <= 0.65 for a in accs), accs
    assert 0.35 <= float(np.mean(accs)) <= 0.65


@C9
def test_c9_grid_runtime_and_shape(synth_features):
    t0 = time.perf_counter()
    grid = run_experiment_grid(synth_features, seeds=(0,))
    elapsed = time.perf_counter() - t0
    assert elapsed < 600, elapsed
    assert len(grid.rows) == 8
    for _, m, f, rep in grid.rows:
        assert 0.0 <= rep.accuracy <= 1.0 and 0.0 <= rep.f1 <= 1.0
        if f == "corr8":
            assert all(fd["n_model_inputs"] == 8 for fd in rep.folds)
    # recorded for the report, not asserted
    obs = grid.observations()
    assert set(obs) == {"dnn_ge_cnn", "cnn_weakest_feature_set", "dnn_best_feature_set"}


# --------------------------------------------------------------------------- #
C10 = pytest.mark.acceptance(10, "cmd cv with fixed seed writes byte-identical reports")


@C10
def test_c10_cv_byte_identical(synth_dir, tmp_path):
    from breathscreen.cli import main

    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["cv", str(synth_dir / "manifest.csv"), "--out", str(out), "--seed", "11"]) == 0
        outs.append(out)
    for name in ("report.json", "audit.log"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


@C10
def test_c10_grid_byte_identical(synth_features_csv, tmp_path):
    from breathscreen.cli import main

    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["cv", str(synth_features_csv), "--grid", "--out", str(out), "--seed", "4"]) == 0
        outs.append(out)
    for name in ("grid.json", "grid.csv", "table.txt", "audit.log"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
