"""Acceptance suite: every criterion runs at its stated tolerance and prints
one pass/fail line on the real terminal (bypassing pytest capture)."""

import hashlib
import time
from pathlib import Path

import numpy as np
import pytest

from motionseg.cli import main as cli_main
from motionseg.data import (
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    mask_labels,
    save_dataset,
    split_leave_one_out,
)
from motionseg.embedding import (
    npairs_loss,
    sample_triplets_supervised,
    sample_triplets_time_contrastive,
    triplet_loss,
)
from motionseg.experiments import fraction_sweep, grid_eval, pose_table
from motionseg.imitation import EndEffectorPose, pose_loss, pose_loss_batch
from motionseg.modelio import load_model, save_model
from motionseg.numerics import finite_diff_check, pack_arrays, unpack_arrays
from motionseg.pipeline import (
    PipelineConfig,
    PseudoLabel,
    infer_pseudo_labels,
    pretrain_encoder,
    select_top_k,
    train_sequence_model,
)
from motionseg.seqmodels.crf import LinearChainCrf, crf_log_partition, crf_loglik_and_grad, crf_viterbi
from motionseg.seqmodels.hmm import hmm_em_fit, hmm_forward_backward, hmm_viterbi
from motionseg.seqmodels.hsmm import Hsmm, hsmm_em_fit, hsmm_loglik, hsmm_viterbi
from motionseg.seqmodels.rnn import BiRnn, LstmCell, birnn_backward, birnn_forward, cross_entropy_and_grad

from test_crf import enumerate_paths, random_crf
from test_hmm import random_hmm, enumerate_logliks, sample_hmm
from test_hsmm import enumerate_segmentations, random_hsmm, sample_hsmm


_CAPFD = None


@pytest.fixture(autouse=True)
def _live_reporting(capfd):
    global _CAPFD
    _CAPFD = capfd
    yield
    _CAPFD = None


def report(line: str):
    if _CAPFD is not None:
        with _CAPFD.disabled():
            print(line, flush=True)
    else:
        print(line, flush=True)


def passfail(ok: bool, criterion: str, detail: str):
    report(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


GRAD_TOL = 1e-4


# ---------------------------------------------------------------------------
# criterion 1: gradient correctness


def _check_triplet_instances(rng, n):
    worst = 0.0
    done = 0
    while done < n:
        vecs = rng.normal(size=(3, 5))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        a, p, m = vecs
        pre = np.sum((a - p) ** 2) - np.sum((a - m) ** 2) + 0.2
        if abs(pre) < 1e-3:
            continue
        flat0, shapes = pack_arrays([a, p, m])

        def fn(flat):
            aa, pp, nn = unpack_arrays(flat, shapes)
            loss, (ga, gp, gn) = triplet_loss(aa, pp, nn, margin=0.2)
            return loss, pack_arrays([ga, gp, gn])[0]

        worst = max(worst, finite_diff_check(fn, flat0))
        done += 1
    return worst


def _check_npairs_instances(rng, n):
    worst = 0.0
    for _ in range(n):
        A, P = rng.normal(size=(2, 4, 3))
        labels = np.array([1, 2, 3, 1])
        flat0, shapes = pack_arrays([A, P])

        def fn(flat):
            aa, pp = unpack_arrays(flat, shapes)
            loss, (ga, gp) = npairs_loss(aa, pp, labels)
            return loss, pack_arrays([ga, gp])[0]

        worst = max(worst, finite_diff_check(fn, flat0))
    return worst


def _check_bptt_instances(rng, n):
    worst = 0.0
    for _ in range(n):
        H, d, C, T = 3, 2, 3, 4
        rnn_seed = int(rng.integers(2**32))
        from motionseg.seqmodels.rnn import new_birnn

        rnn = new_birnn(input_dim=d, num_labels=C, hidden=H, stride=T, seed=rnn_seed)
        X = rng.normal(size=(2, T, d))
        lengths = np.array([T, T - 1])
        mask = np.arange(T)[None, :] < lengths[:, None]
        y = rng.integers(1, C + 1, size=(2, T))
        flat0, shapes = pack_arrays(rnn.param_arrays())

        def fn(flat):
            vals = unpack_arrays(flat, shapes)
            trial = BiRnn(
                fwd=LstmCell(vals[0], vals[1], vals[2]),
                bwd=LstmCell(vals[3], vals[4], vals[5]),
                w_out=vals[6], b_out=vals[7], stride=T,
            )
            logits, cache = birnn_forward(trial, X, lengths)
            loss, dlogits = cross_entropy_and_grad(logits, y, mask)
            return loss, pack_arrays(birnn_backward(trial, cache, dlogits))[0]

        worst = max(worst, finite_diff_check(fn, flat0))
    return worst


def _check_crf_instances(rng, n):
    worst = 0.0
    for _ in range(n):
        crf = random_crf(C=3, d=2, E=4, rng=rng)
        seqs = [(rng.normal(size=(4, 2)), rng.integers(1, 4, size=4)) for _ in range(2)]
        flat0, shapes = pack_arrays([crf.unary, crf.transitions])

        def fn(flat):
            unary, trans = unpack_arrays(flat, shapes)
            trial = LinearChainCrf(projection=crf.projection, unary=unary, transitions=trans)
            ll, gu, gt = crf_loglik_and_grad(trial, seqs)
            return -ll, -pack_arrays([gu, gt])[0]

        worst = max(worst, finite_diff_check(fn, flat0))
    return worst


def _check_pose_instances(rng, n):
    worst = 0.0
    done = 0
    while done < n:
        pred = rng.normal(size=16)
        truth_q = rng.normal(size=(2, 4))
        truth_q /= np.linalg.norm(truth_q, axis=1, keepdims=True)
        truth = rng.normal(size=16)
        truth[3:7], truth[11:15] = truth_q[0], truth_q[1]
        dots = [
            abs(pred[sl] / np.linalg.norm(pred[sl]) @ truth[sl])
            for sl in (slice(3, 7), slice(11, 15))
        ]
        if min(dots) < 1e-2:
            continue

        def fn(flat):
            loss, grad = pose_loss_batch(flat[None, :], truth[None, :], w_pos=0.4)
            return loss, grad[0]

        worst = max(worst, finite_diff_check(fn, pred))
        done += 1
    return worst


def test_criterion_1_gradient_correctness():
    start = time.time()
    rng = np.random.default_rng(101)
    worsts = {
        "triplet": _check_triplet_instances(rng, 20),
        "npairs": _check_npairs_instances(rng, 20),
        "bptt": _check_bptt_instances(rng, 20),
        "crf": _check_crf_instances(rng, 20),
        "pose": _check_pose_instances(rng, 20),
    }
    elapsed = time.time() - start
    ok = all(v < GRAD_TOL for v in worsts.values()) and elapsed < 60
    detail = (
        "gradients vs central differences, 20 instances each, worst rel err "
        + ", ".join(f"{k}={v:.2e}" for k, v in worsts.items())
        + f", {elapsed:.0f}s"
    )
    passfail(ok, "criterion 1 (gradient correctness)", detail)


# ---------------------------------------------------------------------------
# criterion 2: dynamic-programming oracles


def test_criterion_2_dp_oracles():
    start = time.time()
    rng = np.random.default_rng(202)
    tol = 1e-9
    worst = 0.0
    instances = 0
    for _ in range(15):  # HMM forward + viterbi
        K = int(rng.integers(2, 4))
        T = int(rng.integers(3, 7))
        hmm = random_hmm(K=K, d=2, rng=rng)
        X = rng.normal(size=(T, 2))
        total, best, best_path = enumerate_logliks(hmm, X)
        _, ll = hmm_forward_backward(hmm, X)
        path, score = hmm_viterbi(hmm, X)
        worst = max(worst, abs(ll - total), abs(score - best))
        assert (path == best_path).all()
        instances += 2
    for _ in range(13):  # HSMM loglik + viterbi
        K = int(rng.integers(2, 4))
        T = int(rng.integers(3, 7))
        hsmm = random_hsmm(K=K, d=2, d_max=3, rng=rng)
        X = rng.normal(size=(T, 2))
        total, best, best_path = enumerate_segmentations(hsmm, X)
        worst = max(worst, abs(hsmm_loglik(hsmm, X) - total))
        path, score = hsmm_viterbi(hsmm, X)
        worst = max(worst, abs(score - best))
        instances += 2
    for _ in range(12):  # CRF partition
        crf = random_crf(C=3, d=2, E=4, rng=rng)
        T = int(rng.integers(2, 6))
        X = rng.normal(size=(T, 2))
        total, _, best_path = enumerate_paths(crf, X)
        worst = max(worst, abs(crf_log_partition(crf, X) - total))
        assert (crf_viterbi(crf, X) == best_path).all()
        instances += 1
    elapsed = time.time() - start
    ok = worst < tol and instances >= 50 and elapsed < 60
    passfail(
        ok,
        "criterion 2 (DP enumeration oracles)",
        f"{instances} instances, worst abs err {worst:.2e} < 1e-9, {elapsed:.0f}s",
    )


# ---------------------------------------------------------------------------
# criterion 3: EM monotonicity


def test_criterion_3_em_monotonicity():
    tol = 1e-6
    worst_drop = 0.0
    for seed in (0, 1, 2):
        rng = np.random.default_rng(seed)
        truth_hmm = random_hmm(K=3, d=2, rng=rng)
        X, _ = sample_hmm(truth_hmm, 400, rng)
        _, trace = hmm_em_fit([X], K=3, iterations=20, seed=seed)
        worst_drop = max(worst_drop, -min(np.diff(trace)))

        truth_hsmm = Hsmm(
            pi=[0.5, 0.5], A=[[0.0, 1.0], [1.0, 0.0]],
            means=[[-2.0, 0.0], [2.0, 0.5]], covs=np.stack([np.eye(2) * 0.3] * 2),
            lambdas=[4.0, 6.0], d_max=12,
        )
        seqs = [sample_hsmm(truth_hsmm, 120, rng) for _ in range(3)]
        _, trace = hsmm_em_fit(seqs, K=2, iterations=20, seed=seed, d_max=12)
        worst_drop = max(worst_drop, -min(np.diff(trace)))
    ok = worst_drop <= tol
    passfail(
        ok,
        "criterion 3 (EM monotonicity)",
        f"HMM+HSMM, 20 iterations x 3 seeds, worst log-likelihood drop {worst_drop:.2e} <= 1e-6",
    )


# ---------------------------------------------------------------------------
# criterion 4: synthetic end-to-end grid ordering


def acceptance_pipeline_config(seed=0):
    return PipelineConfig(
        embed_dim=32, encoder_hidden=(256, 64), embed_epochs=40, batch_size=128,
        rnn_hidden=32, rnn_epochs=12, rnn_lr=1e-2, stride=64,
        hmm_states=30, em_iterations=10, d_max=20, crf_iterations=50, seed=seed,
    )


def test_criterion_4_synthetic_end_to_end():
    start = time.time()
    dataset = generate_synthetic(SyntheticConfig(seed=0))
    config = acceptance_pipeline_config()
    cells = grid_eval(
        dataset, config, seeds=(0, 1, 2), rows=("ipca", "raw", "triplet"), cols=("hmm", "rnn")
    )
    triplet_rnn = cells[("triplet", "rnn")]
    raw_rnn = cells[("raw", "rnn")]
    ipca_hmm = cells[("ipca", "hmm")]
    elapsed = time.time() - start
    ok = (
        triplet_rnn >= 0.90
        and triplet_rnn > raw_rnn > ipca_hmm
        and elapsed < 30 * 60
    )
    passfail(
        ok,
        "criterion 4 (synthetic end-to-end)",
        f"triplet+rnn={triplet_rnn:.3f} >= 0.90 and > raw+rnn={raw_rnn:.3f} "
        f"> ipca+hmm={ipca_hmm:.3f}, 3-seed means, {elapsed:.0f}s < 30min",
    )


# ---------------------------------------------------------------------------
# criterion 5: semi-supervised direction at 25% labels


def test_criterion_5_semi_supervised_direction():
    start = time.time()
    dataset = generate_synthetic(SyntheticConfig(seed=0))
    config = PipelineConfig(
        rounds=3, top_k=100, stride=64, embed_dim=32, encoder_hidden=(256, 64),
        embed_epochs=30, batch_size=128, rnn_hidden=32, rnn_epochs=15, rnn_lr=1e-2,
    )
    records = fraction_sweep(dataset, [0.25], config, seeds=(0, 1, 2, 3, 4))
    rec = records[0]
    elapsed = time.time() - start
    ok = rec["triplet_rnn_ss"] > rec["svtcn_rnn"] and elapsed < 3600
    passfail(
        ok,
        "criterion 5 (semi-supervised direction)",
        f"25% labels, 5-seed means: triplet+rnn alternation {rec['triplet_rnn_ss']:.3f} "
        f"> svtcn+rnn {rec['svtcn_rnn']:.3f}, {elapsed:.0f}s < 1h",
    )


# ---------------------------------------------------------------------------
# criterion 6: pose imitation


def test_criterion_6_pose_imitation():
    start = time.time()
    clean_rmse, noisy_rmse = [], []
    for seed in (0, 1, 2):
        dataset = generate_synthetic(
            SyntheticConfig(noise_sigma=0.15, pose_phase_amp_cm=0.4, proto_scale=1.5, seed=seed)
        )
        config = PipelineConfig(
            embed_dim=32, encoder_hidden=(256, 64), embed_epochs=30, batch_size=128, seed=seed
        )
        rows, _, _ = pose_table(
            dataset, config, noise_sigmas=(0.0, 0.15), seed=seed,
            decoder_hidden=(64, 32), decoder_epochs=200,
        )
        d = {(r["scope"], r["noise_sigma"]): r["rmse_position_cm"] for r in rows}
        clean_rmse.append(d[("per_demonstrator", 0.0)])
        noisy_rmse.append(d[("per_demonstrator", 0.15)])

    # exact quaternion sign invariance
    rng = np.random.default_rng(606)
    exact = True
    for _ in range(20):
        vecs = rng.normal(size=(2, 16))
        for v in vecs:
            for sl in (slice(3, 7), slice(11, 15)):
                v[sl] /= np.linalg.norm(v[sl])
        pred, truth = (EndEffectorPose.from_vector(v) for v in vecs)
        flipped = pred.to_vector().copy()
        flipped[3:7] *= -1.0
        flipped[11:15] *= -1.0
        la, _ = pose_loss(pred, truth, w_pos=0.5)
        lb, _ = pose_loss(EndEffectorPose.from_vector(flipped), truth, w_pos=0.5)
        exact = exact and (la == lb)

    mean_clean = float(np.mean(clean_rmse))
    ratio = float(np.mean(noisy_rmse)) / mean_clean
    elapsed = time.time() - start
    ok = mean_clean < 0.5 and ratio < 2.0 and exact
    passfail(
        ok,
        "criterion 6 (pose imitation)",
        f"per-demonstrator RMSE {mean_clean:.3f}cm < 0.5, noise-0.15 degradation "
        f"{ratio:.2f}x < 2, quaternion sign invariance exact={exact}, "
        f"3-seed means, {elapsed:.0f}s",
    )


# ---------------------------------------------------------------------------
# criterion 7: determinism and serialization


CLI_CONFIG = """
[synthetic]
demonstrators = 3
demos_per_demonstrator = 3
num_classes = 4
feature_width = 24
mean_durations = 5.0
cycles = 2
style_scale = 1.5
noise_sigma = 0.4
seed = 0

[pipeline]
rounds = 2
top_k = 30
stride = 32
embed_dim = 8
encoder_hidden = 32
embed_epochs = 6
batch_size = 32
rnn_hidden = 16
rnn_epochs = 8
hmm_states = 6
em_iterations = 3
d_max = 10
crf_iterations = 10
pos_window = 3
neg_window = 8
labeled_fraction = 0.5

[imitate]
decoder_hidden = 24,12
decoder_epochs = 30
"""


def _tree_digest(root) -> dict:
    out = {}
    for path in sorted(Path(root).rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


def test_criterion_7_determinism_and_serialization(tmp_path):
    config = tmp_path / "config.txt"
    config.write_text(CLI_CONFIG)

    checks = []
    # every CLI command, run twice, checksum-identical outputs
    for name, args in (
        ("gen-data", ["gen-data", "--config", str(config)]),
        ("train", ["train", "--config", str(config), "--rounds", "1"]),
        ("eval", ["eval", "--config", str(config), "--sweep", "0.5"]),
        ("imitate", ["imitate", "--config", str(config), "--noise-sigma", "0.15"]),
        ("embed-dump", ["embed-dump"]),
    ):
        digests = []
        for attempt in ("a", "b"):
            out = tmp_path / f"{name}_{attempt}"
            argv = list(args)
            if name == "gen-data":
                argv += ["--out", str(out)]
            elif name == "embed-dump":
                argv += [
                    "--data", str(tmp_path / "gen-data_a" / "manifest.txt"),
                    "--encoder", str(tmp_path / "train_a" / "encoder.model"),
                    "--out", str(out),
                ]
            else:
                argv += ["--data", str(tmp_path / "gen-data_a" / "manifest.txt"), "--out", str(out)]
            assert cli_main(argv) == 0, f"{name} failed"
            digests.append(_tree_digest(out))
        checks.append((name, digests[0] == digests[1]))

    # dataset round-trip is value-identical
    ds = generate_synthetic(SyntheticConfig(seed=3, demonstrators=2, demos_per_demonstrator=2,
                                            num_classes=3, feature_width=8, cycles=1))
    manifest = save_dataset(ds, tmp_path / "rt")
    back = load_dataset(manifest)
    rt_ok = all(
        np.array_equal(a.features, b.features)
        and np.array_equal(a.labels, b.labels)
        and np.array_equal(a.poses, b.poses)
        for a, b in zip(ds.demos, back.demos)
    )
    checks.append(("dataset-roundtrip", rt_ok))

    # model round-trips bit-exact for every kind
    enc = load_model(tmp_path / "train_a" / "encoder.model")
    save_model(enc, tmp_path / "enc2.model")
    checks.append(
        ("model-roundtrip",
         (tmp_path / "enc2.model").read_bytes() == (tmp_path / "train_a" / "encoder.model").read_bytes())
    )
    ok = all(flag for _, flag in checks)
    detail = ", ".join(f"{name}={'ok' if flag else 'DIFF'}" for name, flag in checks)
    passfail(ok, "criterion 7 (determinism & serialization)", detail)


# ---------------------------------------------------------------------------
# criterion 8: pseudo-label hygiene


def test_criterion_8_pseudo_label_hygiene():
    rng = np.random.default_rng(808)

    # 1. true labels never overwritten; pseudo-labels only on unlabeled frames
    dataset = generate_synthetic(
        SyntheticConfig(demonstrators=3, demos_per_demonstrator=3, num_classes=4,
                        feature_width=24, mean_durations=5.0, cycles=2,
                        style_scale=1.5, noise_sigma=0.4, seed=0)
    )
    masked = mask_labels(dataset, 0.5, seed=1)
    train, _ = split_leave_one_out(masked, 0)
    config = PipelineConfig(
        rounds=1, stride=32, embed_dim=8, encoder_hidden=(32,), embed_epochs=6,
        batch_size=32, rnn_hidden=16, rnn_epochs=8, seed=0,
    )
    labeled_before = {d.demo_id: d.labels.copy() for d in train.labeled_demos()}
    encoder, _ = pretrain_encoder(train, config, seed=0)
    from motionseg.embedding import encode_array

    bundle = train_sequence_model(lambda F: encode_array(encoder, F), train, config, seed=1)
    pseudo = infer_pseudo_labels(encoder, bundle, train.unlabeled_demos())
    unlabeled_ids = {d.demo_id for d in train.unlabeled_demos()}
    labels_intact = all(
        np.array_equal(d.labels, labeled_before[d.demo_id]) for d in train.labeled_demos()
    )
    pseudo_scoped = all(p.demo_id in unlabeled_ids for p in pseudo)
    coverage = len(pseudo) == sum(d.num_frames for d in train.unlabeled_demos())

    # 2. top-k cardinality identity on random pseudo sets
    cardinality_ok = True
    for _ in range(50):
        fake = [
            PseudoLabel(f"d{rng.integers(4)}", int(i), int(rng.integers(1, 6)), float(rng.random()))
            for i in range(int(rng.integers(1, 300)))
        ]
        k = int(rng.integers(1, 40))
        by_class: dict[int, int] = {}
        for p in fake:
            by_class[p.label] = by_class.get(p.label, 0) + 1
        expected = sum(min(k, n) for n in by_class.values())
        cardinality_ok = cardinality_ok and len(select_top_k(fake, k)) == expected

    # 3. sampler constraints on 10k triplets of each kind
    labels = rng.integers(1, 6, size=128)
    supervised_ok = True
    count = 0
    while count < 10_000:
        for a, p, n in sample_triplets_supervised(labels, rng):
            supervised_ok = supervised_ok and labels[a] == labels[p] != labels[n] and a != p
            count += 1
    tcn_ok = True
    triplets = sample_triplets_time_contrastive(200, 6, 12, rng, 10_000)
    for a, p, n in triplets:
        tcn_ok = tcn_ok and p != a and abs(p - a) <= 6 and abs(n - a) > 12 and 0 <= n < 200
    ok = all([labels_intact, pseudo_scoped, coverage, cardinality_ok, supervised_ok, tcn_ok])
    passfail(
        ok,
        "criterion 8 (pseudo-label hygiene)",
        f"labels_intact={labels_intact}, pseudo_on_unlabeled_only={pseudo_scoped}, "
        f"coverage={coverage}, topk_cardinality={cardinality_ok}, "
        f"supervised_sampler_10k={supervised_ok}, window_sampler_10k={tcn_ok}",
    )
