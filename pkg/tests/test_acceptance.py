"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import time

import numpy as np
import pytest
import scipy.linalg
from scipy.stats import spearmanr

from wigait.channel import SceneConfig, WalkerParams, WalkSegment, scatterer_trajectories, synthesize_csi
from wigait.dsp import bandpass_filter, principal_components, remove_long_delays
from wigait.evaluation import attention_energy_mass, chunk_energy, confusion, scores
from wigait.model import ModelConfig, ModelParams, backward, forward, loss
from wigait.pipeline import PreprocessConfig, SessionConfig, build_dataset, default_paths, default_roster
from wigait.profile import BLOCK, N_BINS, PROFILE_ROWS, build_profile, reverse_features, standardize_features
from wigait.train import TrainConfig, evaluate_set, train

# desk-scale recipe, shared with configs/desk.yaml
DESK_MODEL = dict(projected_dim=64, hidden_dim=64, n_layers=1, n_subjects_out=8, dropout_rate=0.2,
                  noise_std_train=0.01, rng_seed=0)
DESK_TRAIN = dict(batch_size=64, epochs=32, lr_start=0.5, lr_end=0.005, clip_norm=5.0, momentum=0.0, seed=0)
WALL_CLOCK_LIMIT = 45 * 60


@pytest.fixture(scope="module")
def desk():
    t0 = time.perf_counter()
    store, splits, summary = build_dataset(SceneConfig(), default_roster(8, 0), default_paths(),
                                           SessionConfig(minutes_per_path=0.75), PreprocessConfig(), seed=0)
    t_data = time.perf_counter() - t0
    params = ModelParams.initialize(ModelConfig(**DESK_MODEL), np.float32)
    result = train(params, store.subset(splits.train), store.subset(splits.validation), TrainConfig(**DESK_TRAIN))
    elapsed = time.perf_counter() - t0
    test = store.subset(splits.test)
    ev = evaluate_set(result.params, test, keep_weights=True)
    return dict(store=store, splits=splits, summary=summary, result=result, test=test, ev=ev,
                t_data=t_data, elapsed=elapsed)


@pytest.mark.slow
def test_criterion_1_end_to_end(desk, criterion):
    ev = desk["ev"]
    f_dir, f_gait = ev.macro_f1("direction", 8), ev.macro_f1("gait", 8)
    ok = f_dir >= 0.90 and f_gait >= 0.80 and desk["elapsed"] <= WALL_CLOCK_LIMIT
    criterion(1, ok, f"direction macro-F1 {f_dir:.4f} (>= 0.90), gait macro-F1 {f_gait:.4f} (>= 0.80), "
                     f"wall-clock {desk['elapsed'] / 60:.1f} min (<= 45; data {desk['t_data'] / 60:.1f} min), "
                     f"{len(desk['test'])} test profiles, best epoch {desk['result'].best_epoch}")


def _numeric_max_rel_error(params, x, d, g, h=1e-5, floor=1e-6):
    grads = backward(params, forward(params, x), d, g)
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            tr = forward(params, x)
            up = loss(tr.logits_dir, tr.logits_gait, d, g)
            flat[i] = old - h
            tr = forward(params, x)
            down = loss(tr.logits_dir, tr.logits_gait, d, g)
            flat[i] = old
            num = (up - down) / (2 * h)
            ana = grads[name].reshape(-1)[i]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), floor))
    return worst


def test_criterion_2_gradient_check(criterion):
    cfg = ModelConfig(projected_dim=8, hidden_dim=8, n_layers=1, n_subjects_out=8, dropout_rate=0.0,
                      noise_std_train=0.0, rng_seed=0)
    params = ModelParams.initialize(cfg, np.float64)
    x = np.random.default_rng(0).standard_normal((2, 6, 768))
    t0 = time.perf_counter()
    err = _numeric_max_rel_error(params, x, np.array([1, 6]), np.array([0, 4]))
    dt = time.perf_counter() - t0
    n = sum(p.size for p in params.values())
    criterion(2, err < 1e-4 and dt < 120,
              f"max relative error {err:.2e} (< 1e-4) over all {n} parameters, {dt:.1f} s (< 120)")


def test_criterion_3_attention_normalisation(criterion):
    rng = np.random.default_rng(0)
    worst_sum, lo, hi = 0.0, 1.0, 0.0
    for trial in range(1000):
        cfg = ModelConfig(projected_dim=8, hidden_dim=8, n_layers=1, n_subjects_out=5, rng_seed=trial)
        params = ModelParams.initialize(cfg, np.float64)
        T = int(rng.integers(2, 30))
        x = rng.standard_normal((3, T, 768)) * rng.choice([0.1, 1.0, 30.0])
        w = forward(params, x).weights
        worst_sum = max(worst_sum, float(np.max(np.abs(w.sum(axis=-1) - 1))))
        lo, hi = min(lo, float(w.min())), max(hi, float(w.max()))
    criterion(3, worst_sum <= 1e-6 and lo >= 0 and hi <= 1,
              f"1000 passes, max |row sum - 1| {worst_sum:.1e}, entries in [{lo:.3g}, {hi:.3g}]")


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def test_criterion_4_dsp_response(criterion):
    t = np.arange(4000) / 1000.0
    pass_loss = 1 - _rms(bandpass_filter(np.sin(2 * np.pi * 40 * t))) / _rms(np.sin(2 * np.pi * 40 * t))
    stop = _rms(bandpass_filter(np.sin(2 * np.pi * 200 * t))) / _rms(np.sin(2 * np.pi * 200 * t))
    const = _rms(bandpass_filter(np.full(4000, 3.0))) / 3.0
    # two paths at 100 ns and 700 ns; only the short one lies within the kept taps
    k, df = np.arange(30), 20e6 / 30
    short = (0.8 + 0.3j) * np.exp(-2j * np.pi * k * df * 100e-9)
    long = (0.5 - 0.2j) * np.exp(-2j * np.pi * k * df * 700e-9)
    out = remove_long_delays(np.repeat((short + long)[:, None], 3, axis=1))
    delay_err = float(np.max(np.abs(out - short[:, None])) / np.max(np.abs(short)))
    ok = abs(pass_loss) <= 0.05 and stop <= 0.05 and const <= 0.05 and delay_err < 1e-6
    criterion(4, ok, f"40 Hz RMS loss {pass_loss:.2%}, 200 Hz residual {stop:.2%}, DC residual {const:.1e}, "
                     f"delay removal rel. error {delay_err:.1e}")


def test_criterion_5_pca_oracle(criterion):
    worst_val = worst_vec = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        data = rng.standard_normal((30, 500)) * np.linspace(1, 3, 30)[:, None]
        comps, vals, vecs = principal_components(data, 3)
        # oracle: general dense eigensolver on np.cov, sorted descending
        o_vals, o_vecs = scipy.linalg.eig(np.cov(data))
        order = np.argsort(o_vals.real)[::-1][:3]
        o_vals, o_vecs = o_vals.real[order], o_vecs.real[:, order]
        o_vecs /= np.linalg.norm(o_vecs, axis=0)
        o_vecs *= np.sign(np.sum(o_vecs * vecs, axis=0))
        o_comps = o_vecs.T @ (data - data.mean(axis=1, keepdims=True))
        worst_val = max(worst_val, float(np.max(np.abs(vals - o_vals) / o_vals)))
        worst_vec = max(worst_vec, float(np.max(np.linalg.norm(vecs - o_vecs, axis=0))),
                        float(np.max(np.linalg.norm(comps - o_comps, axis=1) / np.linalg.norm(o_comps, axis=1))))
    criterion(5, worst_val < 1e-8 and worst_vec < 1e-8,
              f"100 inputs 30x500, eigenvalue rel. error {worst_val:.1e}, component rel. error {worst_vec:.1e}")


def test_criterion_6_physics(criterion):
    # Doppler: one point scatterer walking radially at 1 m/s
    scene = SceneConfig(tx_position=(0, 0, 1.0), rx_positions=((0, 0, 0.95), (0, 0, 1.05)), noise_std=0.0)
    walker = WalkerParams(0, torso_speed=1.0, leg_swing_speed_amp=0.0, arm_swing_speed_amp=0.0,
                          part_heights=(1.0,) * 5)
    tr = scatterer_trajectories(walker, WalkSegment((8, 0), (3, 0), 4, 5.0), 1000.0)
    low, _ = synthesize_csi(scene, tr, reflectivities=[1, 0, 0, 0, 0], dtype=np.complex128)
    worst_bins = 0.0
    for sub in range(30):
        x = np.abs(low.csi[0, sub])
        spec = np.abs(np.fft.rfft((x - x.mean()) * np.hanning(len(x))))
        freqs = np.fft.rfftfreq(len(x), 1e-3)
        peak = freqs[np.argmax(spec[1:]) + 1]
        worst_bins = max(worst_bins, abs(peak - 2 / scene.wavelengths[sub]) / freqs[1])
    # variance trend while approaching and receding from the devices
    rhos = []
    for start, end, label in (((3.0, 7.5), (3.0, 1.5), 6), ((3.0, 1.5), (3.0, 7.5), 2)):
        tr = scatterer_trajectories(WalkerParams(0), WalkSegment(start, end, label, 6.0), 1000.0)
        rec, _ = synthesize_csi(SceneConfig(), tr)
        power = np.abs(rec.csi[0, 0].astype(complex)) ** 2
        var = power[:len(power) // 250 * 250].reshape(-1, 250).var(axis=1)
        rhos.append(spearmanr(np.arange(len(var)), var).statistic)
    ok = worst_bins <= 1 and rhos[0] > 0.9 and rhos[1] < -0.9
    criterion(6, ok, f"Doppler peak off by {worst_bins:.2f} bins (<= 1) on all 30 subcarriers, "
                     f"Spearman approach {rhos[0]:.3f}, recede {rhos[1]:.3f} (|rho| > 0.9)")


@pytest.mark.slow
def test_criterion_7_profile_algebra(desk, criterion):
    rng = np.random.default_rng(0)
    involution = all(np.array_equal(reverse_features(reverse_features(f)), f)
                      for f in rng.standard_normal((50, PROFILE_ROWS, 24)))
    z = standardize_features(rng.standard_normal((20, PROFILE_ROWS, 24)) * 4 + 2)
    idem = float(np.max(np.abs(standardize_features(z) - z)))
    # sentinel layout: constant per PCA component and receiver, primary rows ramp over chunks
    T = 5
    low = np.stack([np.full((N_BINS, T), 10.0 + c) for c in range(3)]) + np.arange(T)
    high = np.stack([np.full((N_BINS, T), 20.0 + c) for c in range(3)]) + 2 * np.arange(T)
    f = build_profile(low, high).features
    layout = f.shape == (PROFILE_ROWS, T) and all(
        np.all(f[c * N_BINS:(c + 1) * N_BINS, 0] == 10.0 + c)
        and np.all(f[2 * BLOCK + c * N_BINS:2 * BLOCK + (c + 1) * N_BINS, 0] == 20.0 + c) for c in range(3))
    layout = layout and np.all(f[BLOCK:2 * BLOCK, 1:] == 1.0) and np.all(f[3 * BLOCK:, 1:] == 2.0)
    # augmentation on the desk dataset: every training profile once forward, once reversed
    train_entries = desk["splits"].train
    fwd = sorted(i for i, r in train_entries if not r)
    rev = sorted(i for i, r in train_entries if r)
    doubles = fwd == rev and len(train_entries) == 2 * len(fwd) == 2 * 6 * desk["summary"]["train_windows"]
    ok = involution and idem <= 1e-6 and bool(layout) and doubles
    criterion(7, ok, f"involution exact {involution}, standardize idempotence {idem:.1e}, sentinel layout "
                     f"{bool(layout)}, training profiles {len(fwd)} -> {len(train_entries)}")


@pytest.mark.slow
def test_criterion_8_attention_energy(desk, criterion):
    test, ev = desk["test"], desk["ev"]
    energy = chunk_energy(test.raw(np.arange(len(test))))
    mass = [float(attention_energy_mass(ev.weights[:, k], energy).mean()) for k in (0, 1)]
    criterion(8, mass[0] > 0.5 and mass[1] > 0.5,
              f"mean attention mass on above-median-energy chunks: direction {mass[0]:.3f}, "
              f"gait {mass[1]:.3f} (both > 0.5)")


def test_criterion_9_metrics(criterion):
    true = [0] * 4 + [1] * 6
    pred = [0, 0, 0, 1, 0, 0, 1, 1, 1, 1]
    cm = confusion(true, pred, 2)
    s = scores(cm)
    exact = (cm.counts.tolist() == [[3, 1], [2, 4]] and np.isclose(s.precision[0], 0.6)
             and np.isclose(s.recall[0], 0.75) and np.isclose(s.f1[0], 2 / 3)
             and np.isclose(s.precision[1], 0.8) and np.isclose(s.recall[1], 2 / 3)
             and np.isclose(s.f1[1], 16 / 22) and np.isclose(s.macro_f1, (2 / 3 + 16 / 22) / 2))
    rng = np.random.default_rng(0)
    t, p = rng.integers(0, 8, 200), rng.integers(0, 8, 200)
    base = scores(confusion(t, p, 8)).macro_f1
    worst = 0.0
    for _ in range(100):
        perm = rng.permutation(8)
        worst = max(worst, abs(scores(confusion(perm[t], perm[p], 8)).macro_f1 - base))
    criterion(9, exact and worst < 1e-12,
              f"2-class example exact {exact}, max macro-F1 change over 100 relabelings {worst:.1e}")
