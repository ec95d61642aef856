"""End-to-end acceptance checks, one test per criterion.

Each test carries a ``criterion`` marker; ``conftest.py`` prints one
PASS/FAIL line per criterion at the end of the run. Measured values are
printed from inside the tests (visible with ``-s``).
"""

import json
import time

import numpy as np
import pytest

import gradcheck
import oracles
from admspoof import fft
from admspoof.artifact_gen import (
    FIXED_BANDS, background_noise_mix, draw_dynamic_band, fixed_freq_swap, swap_bins,
    time_segment_swap,
)
from admspoof.audio_io import Waveform, peak_normalize
from admspoof.cli import EXIT_OK, main
from admspoof.dataset import Task, build_task_view, parse_manifest
from admspoof.metrics import ScoreSet, auc, eer
from admspoof.model import EXTRACTOR, TRAINABLE, TrainConfig, load_checkpoint, train_final
from admspoof.pipeline import accuracy, score_view
from admspoof.spectral import dft_forward, dft_inverse

RATE = 16000
N3S = 3 * RATE


def run(*argv):
    return main([str(a) for a in argv])


def clip(rng, n=N3S):
    return Waveform(rng.uniform(-1, 1, n), RATE)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    import os
    for k in list(os.environ):
        if k.startswith("ADMSPOOF_"):
            monkeypatch.delenv(k)


# ----------------------------------------------------------------- criterion 1


@pytest.mark.criterion(1, "self-swap identity, max abs error < 1e-6, < 1 s per clip")
def test_self_swap_identity():
    rng = np.random.default_rng(101)
    band = FIXED_BANDS["2000-3500"]
    worst, slowest = 0.0, 0.0
    for _ in range(100):
        x = clip(rng)
        t0 = time.perf_counter()
        out = fixed_freq_swap(x, x, band)
        slowest = max(slowest, time.perf_counter() - t0)
        worst = max(worst, float(np.max(np.abs(out.samples - peak_normalize(x).samples))))
    print(f"criterion 1: max abs error {worst:.3g}, slowest clip {slowest:.3f} s")
    assert worst < 1e-6
    assert slowest < 1.0


# ----------------------------------------------------------------- criterion 2


@pytest.mark.criterion(2, "band exclusion, exact pre-IFFT and < 1e-6 after round trip")
def test_band_exclusion():
    rng = np.random.default_rng(202)
    worst = 0.0
    for i in range(100):
        fake, real = clip(rng), clip(rng)
        band = FIXED_BANDS["2000-3500"] if i % 2 else draw_dynamic_band(rng, RATE)
        start, end = band.indices(RATE, N3S)
        F, R = dft_forward(fake), dft_forward(real)
        swapped = swap_bins(F, R, start, end)
        outside = np.ones(len(F.bins), bool)
        outside[start:end] = False
        assert np.array_equal(swapped.bins[outside], F.bins[outside])
        assert np.array_equal(swapped.bins[~outside], R.bins[~outside])

        raw = dft_inverse(swapped).samples
        out = fixed_freq_swap(fake, real, band)
        np.testing.assert_array_equal(out.samples, peak_normalize(Waveform(raw, RATE)).samples)
        back = dft_forward(out).bins * np.max(np.abs(raw))
        err = np.linalg.norm(back[outside] - F.bins[outside]) / np.linalg.norm(F.bins[outside])
        worst = max(worst, float(err))
    print(f"criterion 2: worst relative error outside the band {worst:.3g}")
    assert worst < 1e-6


# ----------------------------------------------------------------- criterion 3


@pytest.mark.criterion(3, "time exclusion, samples outside the segment bit-exact")
def test_time_exclusion():
    rng = np.random.default_rng(303)
    for _ in range(100):
        fake, real = clip(rng), clip(rng)
        out, (start, end) = time_segment_swap(fake, real, rng)
        assert 0 <= start < end <= N3S
        assert np.array_equal(out.samples[:start], fake.samples[:start])
        assert np.array_equal(out.samples[end:], fake.samples[end:])
        assert np.array_equal(out.samples[start:end], real.samples[start:end])


# ----------------------------------------------------------------- criterion 4


@pytest.mark.criterion(4, "dynamic-swap band bounds over 10000 draws, start mean within 2%")
def test_dynamic_swap_bounds():
    rng = np.random.default_rng(404)
    starts = []
    for _ in range(10000):
        b = draw_dynamic_band(rng, RATE)
        width = b.f_end - b.f_start
        assert 200 <= b.f_start <= 5600
        assert 100 <= width <= 500 + 1e-9
        assert b.f_end <= 8000
        starts.append(b.f_start)
    mean = float(np.mean(starts))
    target = (200 + 5600) / 2
    print(f"criterion 4: start mean {mean:.1f} Hz vs {target:.1f} Hz ({abs(mean / target - 1):.2%})")
    assert abs(mean - target) <= 0.02 * target


# ----------------------------------------------------------------- criterion 5


@pytest.mark.criterion(5, "noise-mix peak 1 +- 1e-6, alpha 0.2 recorded end to end")
def test_noise_mix_contract(tmp_path):
    rng = np.random.default_rng(505)
    for _ in range(100):
        fake, real = clip(rng), clip(rng)
        scale = 10.0 ** rng.uniform(-3, 1)
        mixed = background_noise_mix(Waveform(fake.samples * scale, RATE), real, float(rng.uniform(0.01, 0.99)))
        assert abs(float(np.max(np.abs(mixed.samples))) - 1.0) <= 1e-6
        assert abs(float(np.max(np.abs(background_noise_mix(fake, real).samples))) - 1.0) <= 1e-6

    g = ["--workdir", tmp_path / "w", "--seed", 5]
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"audio": {"seconds": 1.0}}))
    g += ["--config", cfg]
    assert run("toy", "--out", tmp_path / "c", "--n-real", 6, "--n-fake", 6, "--speakers", 2, *g) == EXIT_OK
    assert run("import", "--manifest", tmp_path / "c" / "manifest.tsv", *g) == EXIT_OK
    assert run("split", *g) == EXIT_OK
    assert run("gen", "--kind", "background_noise", *g) == EXIT_OK
    lines = (tmp_path / "w" / "artifacts" / "background_noise" / "provenance.jsonl").read_text().splitlines()
    assert len(lines) == 6
    assert all(json.loads(line)["alpha"] == 0.2 for line in lines)


# ----------------------------------------------------------------- criterion 6


@pytest.mark.criterion(6, "AUC equals pair counting, EER within 1e-9 of enumeration")
def test_metric_oracles():
    rng = np.random.default_rng(606)
    worst = 0.0
    for i in range(1000):
        n = int(rng.integers(2, 13))
        labels = rng.permutation([0, 1] + list(rng.integers(0, 2, n - 2)))
        # every third set is drawn from a coarse grid so that ties occur
        scores = rng.integers(0, 5, n) / 4 if i % 3 == 0 else rng.random(n)
        s = ScoreSet(scores, labels)
        assert auc(s) == oracles.auc_pairs(scores, labels)
        rate, _ = eer(s)
        worst = max(worst, abs(rate - oracles.eer_enumerate(list(scores), list(labels))[0]))
    print(f"criterion 6: worst EER deviation {worst:.3g}")
    assert worst < 1e-9


# ----------------------------------------------------------------- criterion 7


@pytest.mark.criterion(7, "gradient check, relative error < 1e-3 on 5 inits, every tensor sampled")
def test_gradient_check():
    for seed in range(5):
        worst, checked, skipped, draws = gradcheck.check(seed)
        print(f"criterion 7: seed {seed} worst {worst:.3g}, checked {sum(checked.values())}, "
              f"kink-skipped {skipped}, input draws {draws}")
        assert set(checked) == set(TRAINABLE) and min(checked.values()) >= 1
        assert worst < 1e-3


# ----------------------------------------------------------- small CLI pipeline

SMALL_CONFIG = {
    "audio": {"seconds": 1.0},
    "mel": {"n_fft": 512, "hop": 256, "n_mels": 32},
    "split": {"fractions": [0.5, 0.25, 0.25]},
    "train": {"epochs": 3, "batch": 8},
}


def small_pipeline(root, seed=11):
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(SMALL_CONFIG))
    wd = root / "work"
    g = ["--config", cfg, "--workdir", wd, "--seed", seed]
    steps = [
        ("toy", "--out", root / "corpus", "--n-real", 16, "--n-fake", 16, "--speakers", 4),
        ("import", "--manifest", root / "corpus" / "manifest.tsv"),
        ("split",),
        ("gen", "--kind", "dynamic_freq", "--kind", "time_segment"),
        ("featurize",),
        ("train", "--stage", "all"),
        ("eval", "--checkpoint", "final", "--split", "test"),
        ("eval", "--checkpoint", "baseline", "--split", "val"),
        ("eval", "--checkpoint", "adm", "--task", "adm", "--split", "test"),
        ("embed", "--checkpoint", "final", "--split", "test"),
    ]
    for step in steps:
        assert run(*step, *g) == EXIT_OK, step
    return wd, g


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# ----------------------------------------------------------------- criterion 8


@pytest.mark.criterion(8, "stage 2 extractor bytes equal stage 1; stage 3 starts from stage 2 weights")
def test_protocol_staging(tmp_path):
    wd, _ = small_pipeline(tmp_path)
    ck = wd / "checkpoints"
    base, adm = load_checkpoint(ck / "baseline.spfw"), load_checkpoint(ck / "adm.spfw")
    for k in EXTRACTOR + ("norm.mean", "norm.std"):
        assert adm.params[k].tobytes() == base.params[k].tobytes(), k

    # replay stage 3 from the stored stage-2 checkpoint and inspect its starting point
    main_view = build_task_view([parse_manifest(wd / "manifests" / "train.tsv")], Task.MAIN, wd / "features")
    seen = {}

    def capture(epoch, model):
        if epoch == -1:
            seen.update({k: v.tobytes() for k, v in model.params.items()})

    cfg = TrainConfig(epochs=3, batch=8, seed=11)
    final, _ = train_final(adm, main_view, cfg, callback=capture)
    for k in TRAINABLE + ("norm.mean", "norm.std"):
        assert seen[k] == adm.params[k].tobytes(), k
    stored = load_checkpoint(ck / "final.spfw")
    for k in stored.params:
        assert stored.params[k].tobytes() == final.params[k].tobytes(), k


# ----------------------------------------------------------------- criterion 9

TOY_CONFIG = {"train": {"stage_epochs": {"baseline": 10, "adm": 50, "final": 10}}}


@pytest.mark.criterion(9, "toy corpus: stage 1 >= 0.95, ADM >= 0.95, stage 3 AUC >= stage 1 - 0.02, < 5 min CPU")
def test_toy_end_to_end(tmp_path):
    cfg = tmp_path / "toy.json"
    cfg.write_text(json.dumps(TOY_CONFIG))
    wd = tmp_path / "work"
    g = ["--config", cfg, "--workdir", wd, "--seed", 0]
    cpu0 = time.process_time()
    for step in [("toy", "--out", tmp_path / "corpus", "--n-real", 300, "--n-fake", 300),
                 ("import", "--manifest", tmp_path / "corpus" / "manifest.tsv"),
                 ("split",), ("gen", "--kind", "dynamic_freq"), ("featurize",), ("train", "--stage", "all")]:
        assert run(*step, *g) == EXIT_OK, step
    cpu = time.process_time() - cpu0

    held_out = [parse_manifest(wd / "manifests" / f"{s}.tsv", s) for s in ("val", "test")]
    held_art = [parse_manifest(wd / "manifests" / f"{s}.artifacts.tsv", s) for s in ("val", "test")]
    main_view = build_task_view(held_out, Task.MAIN, wd / "features")
    adm_view = build_task_view(held_out + held_art, Task.ADM, wd / "features")
    ck = wd / "checkpoints"
    s1 = score_view(load_checkpoint(ck / "baseline.spfw"), main_view)
    s2 = score_view(load_checkpoint(ck / "adm.spfw"), adm_view)
    s3 = score_view(load_checkpoint(ck / "final.spfw"), main_view)
    acc1, acc2 = accuracy(s1), accuracy(s2)
    auc1, auc3 = auc(s1), auc(s3)
    print(f"criterion 9: held-out n={len(main_view)} main / {len(adm_view)} adm; stage-1 accuracy {acc1:.4f}, "
          f"ADM accuracy {acc2:.4f}, AUC stage 1 {auc1:.4f} -> stage 3 {auc3:.4f}, CPU {cpu:.1f} s")
    assert acc1 >= 0.95
    assert acc2 >= 0.95
    assert auc3 >= auc1 - 0.02
    assert cpu < 300


# ---------------------------------------------------------------- criterion 10


@pytest.mark.criterion(10, "two identical CLI runs give bit-identical checkpoints, scores and reports")
def test_cli_determinism(tmp_path):
    wd_a, _ = small_pipeline(tmp_path / "a")
    wd_b, _ = small_pipeline(tmp_path / "b")
    for sub in ("checkpoints", "scores", "reports", "embeddings", "features", "manifests"):
        a, b = tree_bytes(wd_a / sub), tree_bytes(wd_b / sub)
        assert a, sub
        assert a == b, sub
    for kind in ("dynamic_freq", "time_segment"):
        a = tree_bytes(wd_a / "artifacts" / kind)
        b = tree_bytes(wd_b / "artifacts" / kind)
        assert {k: v for k, v in a.items() if k.endswith(".wav")} == {k: v for k, v in b.items() if k.endswith(".wav")}
        assert a["provenance.jsonl"] == b["provenance.jsonl"]


# ---------------------------------------------------------------- criterion 11


@pytest.mark.criterion(11, "Parseval and round trip, relative L2 error < 1e-9 at n = 48000")
def test_parseval_and_round_trip():
    rng = np.random.default_rng(1111)
    n = 48000
    worst_parseval = worst_real = worst_complex = 0.0
    for _ in range(100):
        x = rng.standard_normal(n)
        X = fft.fft(x)
        worst_parseval = max(worst_parseval, abs(np.sum(np.abs(X) ** 2) / n - np.sum(x ** 2)) / np.sum(x ** 2))
        back = fft.ifft(X)
        worst_complex = max(worst_complex, np.linalg.norm(back - x) / np.linalg.norm(x))
        y = fft.irfft(fft.rfft(x), n)
        worst_real = max(worst_real, np.linalg.norm(y - x) / np.linalg.norm(x))
    print(f"criterion 11: Parseval {worst_parseval:.3g}, complex round trip {worst_complex:.3g}, "
          f"real round trip {worst_real:.3g}")
    assert worst_parseval < 1e-9
    assert worst_complex < 1e-9
    assert worst_real < 1e-9
