import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wigait.errors import AlignmentError, DataError
from wigait.evaluation import (EvalReport, attention_energy_mass, attention_rows, chunk_energy, confusion,
                               export_attention, read_confusion_csv, read_pgm, render_attention, scores,
                               write_pgm)
from wigait.profile import BLOCK, N_BINS


class TestConfusion:
    def test_perfect(self):
        cm = confusion([0, 1, 2, 2], [0, 1, 2, 2], 3)
        npt.assert_array_equal(cm.counts, np.diag([1, 1, 2]))

    def test_single(self):
        cm = confusion([2], [5], 8)
        assert cm.counts[2, 5] == 1 and cm.total == 1

    def test_counts_sum(self):
        rng = np.random.default_rng(0)
        t, p = rng.integers(0, 6, 500), rng.integers(0, 6, 500)
        cm = confusion(t, p, 6)
        assert cm.total == 500
        npt.assert_array_equal(cm.counts.sum(axis=1), np.bincount(t, minlength=6))

    def test_errors(self):
        with pytest.raises(DataError):
            confusion([0, 1], [0], 2)
        with pytest.raises(DataError):
            confusion([0, 2], [0, 1], 2)


class TestScores:
    def test_hand_computed_two_class(self):
        s = scores(confusion([0, 0, 0, 0, 1, 1, 1, 1, 1, 1], [0, 0, 0, 1, 0, 0, 1, 1, 1, 1], 2))
        npt.assert_array_equal(confusion([0] * 4 + [1] * 6, [0, 0, 0, 1, 0, 0, 1, 1, 1, 1], 2).counts, [[3, 1], [2, 4]])
        assert s.precision[0] == pytest.approx(0.6)
        assert s.recall[0] == pytest.approx(0.75)
        assert s.f1[0] == pytest.approx(2 / 3)
        assert s.precision[1] == pytest.approx(0.8)
        assert s.recall[1] == pytest.approx(4 / 6)
        assert s.accuracy[0] == s.accuracy[1] == pytest.approx(0.7)
        assert s.macro_f1 == pytest.approx((2 / 3 + 2 * 0.8 * (2 / 3) / (0.8 + 2 / 3)) / 2)

    def test_identity(self):
        s = scores(confusion(np.arange(5), np.arange(5), 5))
        npt.assert_array_equal(s.f1, 1.0)
        npt.assert_array_equal(s.accuracy, 1.0)

    def test_never_predicted_class(self):
        s = scores(confusion([0, 1, 2], [0, 1, 1], 3))
        assert s.precision[2] == 0 and s.f1[2] == 0

    def test_empty(self):
        with pytest.raises(DataError):
            scores(confusion([], [], 3))

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_macro_f1_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 9))
        t, p = rng.integers(0, n, 60), rng.integers(0, n, 60)
        perm = rng.permutation(n)
        a = scores(confusion(t, p, n)).macro_f1
        b = scores(confusion(perm[t], perm[p], n)).macro_f1
        assert a == pytest.approx(b, abs=1e-12)

    def test_rates_in_unit_interval(self):
        rng = np.random.default_rng(3)
        s = scores(confusion(rng.integers(0, 4, 40), rng.integers(0, 4, 40), 4))
        for arr in (s.accuracy, s.precision, s.recall, s.f1):
            assert np.all((arr >= 0) & (arr <= 1))


class TestReport:
    def test_write_and_recompute(self, tmp_path):
        import json
        rng = np.random.default_rng(0)
        true = {"direction": rng.integers(0, 8, 100), "gait": rng.integers(0, 5, 100)}
        pred = {"direction": rng.integers(0, 8, 100), "gait": true["gait"].copy()}
        rep = EvalReport.from_predictions(true, pred, {"direction": 8, "gait": 5})
        rep.write(tmp_path)
        data = json.loads((tmp_path / "report.json").read_text())
        for task in ("direction", "gait"):
            cm = read_confusion_csv(tmp_path / f"confusion_{task}.csv")
            s = scores(cm)
            assert data["tasks"][task]["macro_f1"] == pytest.approx(s.macro_f1, abs=1e-12)
            assert data["tasks"][task]["macro_accuracy"] == pytest.approx(s.macro_accuracy, abs=1e-12)
            per = [c["f1"] for c in data["tasks"][task]["classes"]]
            assert np.mean(per) == pytest.approx(data["tasks"][task]["macro_f1"])
        assert data["tasks"]["gait"]["macro_f1"] == 1.0


class TestRendering:
    def test_uniform_weights_render_flat(self):
        rows = attention_rows(np.full(6, 1 / 6), np.full(6, 1 / 6))
        assert len(np.unique(rows)) == 1

    def test_one_hot(self):
        w = np.zeros(6)
        w[4] = 1.0
        rows = attention_rows(w, w)
        for r in rows:
            assert np.count_nonzero(r == 255) == 1 and r[4] == 255
            assert np.count_nonzero(r) == 1

    def test_layout_and_argmax_readback(self, tmp_path):
        rng = np.random.default_rng(1)
        T = 9
        w1, w2 = rng.dirichlet(np.ones(T)), rng.dirichlet(np.ones(T))
        high, low = rng.standard_normal((N_BINS, T)), rng.standard_normal((N_BINS, T))
        img = render_attention(w1, w2, high, low)
        assert img.shape == (2 * N_BINS + 2, T)
        write_pgm(img, tmp_path / "a.pgm")
        back = read_pgm(tmp_path / "a.pgm")
        npt.assert_array_equal(back, img)
        r1, r2 = back[N_BINS], back[N_BINS + 1]
        assert r1[np.argmax(w1)] == r1.max() == 255
        assert r2[np.argmax(w2)] == r2.max() == 255
        npt.assert_allclose(r1 / 255, w1 / w1.max(), atol=1 / 255)
        # low frequencies at the bottom of each spectrogram band
        assert back[N_BINS - 1, np.argmax(high[0])] == back[N_BINS - 1].max()
        assert back[-1, np.argmin(low[0])] == back[-1].min()

    def test_scaling(self):
        img = render_attention(np.ones(3) / 3, np.ones(3) / 3, np.zeros((N_BINS, 3)), np.zeros((N_BINS, 3)),
                               col_scale=4, attn_height=5)
        assert img.shape == (2 * N_BINS + 10, 12)

    def test_mismatch(self):
        with pytest.raises(AlignmentError):
            render_attention(np.ones(3), np.ones(4), np.zeros((N_BINS, 3)), np.zeros((N_BINS, 3)))

    def test_export(self, tmp_path):
        rng = np.random.default_rng(2)
        f = rng.standard_normal((768, 6))
        w1, w2 = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
        out = export_attention(f, w1, w2, tmp_path / "m")
        img = read_pgm(out["image"])
        assert img.shape == (130, 6)
        side = np.loadtxt(out["sidecar"], delimiter=",", skiprows=1)
        npt.assert_allclose(side[:, 1], w1, rtol=1e-15)
        npt.assert_allclose(side[:, 2], w2, rtol=1e-15)

    def test_bad_pgm(self, tmp_path):
        (tmp_path / "x.pgm").write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(DataError):
            read_pgm(tmp_path / "x.pgm")


class TestEnergyAlignment:
    def test_chunk_energy_uses_primary_rows(self):
        f = np.full((768, 4), -12.0)
        f[5, 2] = 0.0  # low receiver primary
        f[2 * BLOCK + 7, 1] = 1.0  # high receiver primary
        f[BLOCK + 3, 3] = 5.0  # delta rows ignored
        e = chunk_energy(f)
        assert np.argmax(e) == 1
        assert e[1] == pytest.approx(10.0, rel=1e-6)
        assert e[2] == pytest.approx(1.0, rel=1e-6)
        assert e[3] < 1e-6

    def test_mass(self):
        energy = np.array([[1.0, 5.0, 2.0, 8.0]])
        w = np.array([[0.1, 0.4, 0.2, 0.3]])
        assert attention_energy_mass(w, energy)[0] == pytest.approx(0.7)
