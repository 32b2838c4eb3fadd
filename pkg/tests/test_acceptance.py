"""End-to-end acceptance checks: gradients, causality, normalization,
geometry, metric oracles, overfitting, ablation ordering, determinism, and
the attention export contract.

One check is known red: perturbing a visit's own embedding does move that
visit's long-range summary, because every pair score conditions on the target
embedding.  See the strict-future test for the part that holds exactly.
"""

import json
import time

import numpy as np
import pytest

from helpers import gradcheck

from tempattn import autodiff as ad
from tempattn import cli, data, longterm, metrics, model, temporal, train
from tempattn.coupled import ClassWeights
from tempattn.data import PatientJourney
from tempattn.metrics import ScoredSet


def random_journey(rng, n, t, g_c, g_d, label=1, obs_mask=None):
    return PatientJourney(
        id="acc", r=rng.standard_normal((n, t)),
        mu=np.cumsum(rng.uniform(0.2, 2.0, size=t)),
        r_c=(rng.random(g_c) < 0.5).astype(float),
        r_d=(rng.random(g_d) < 0.5).astype(float),
        label=label, obs_mask=obs_mask)


class TestGradientSuite:
    """Central finite differences over every parameter of the full model and
    each single-module ablation, on one small journey."""

    CONFIGS = [
        {},
        {"disable_stacked": True},
        {"disable_short": True},
        {"disable_long": True},
        {"disable_coupled": True},
    ]

    @pytest.mark.parametrize("flags", CONFIGS)
    def test_every_parameter_matches_finite_differences(self, flags):
        start = time.monotonic()
        cfg = model.ModelConfig(n_features=3, t_max=4, n_heads=2, d_k=2,
                                d_ff=4, d_h=8, d_u=5, g_c=5, g_d=5, seed=17,
                                **flags)
        params = model.assemble_model(cfg)
        rng = np.random.default_rng(23)
        journey = random_journey(rng, n=3, t=4, g_c=5, g_d=5)
        weights = ClassWeights(0.5, 1.5)

        def build_loss():
            return model.journey_loss(params, journey, weights)

        nodes = [node for _, node in params.named()]
        gradcheck(build_loss, nodes, step=1e-4, tol=1e-4)
        assert time.monotonic() - start < 120.0


class TestCausalitySuite:
    """Exact-zero influence checks on both temporal paths, random models and
    journeys over 10 seeds."""

    def _long_setup(self, seed):
        rng = np.random.default_rng(seed)
        n, t = 3, 6
        params = longterm.init_params(rng, n, g_c=4, g_d=4, d_h=5)
        h = rng.standard_normal((n, t))
        mu = np.cumsum(rng.uniform(0.2, 2.0, size=t))
        r_c = (rng.random(4) < 0.5).astype(float)
        r_d = (rng.random(4) < 0.5).astype(float)
        return params, h, mu, r_c, r_d

    def _long_summary(self, params, h, mu, r_c, r_d):
        e_star, _ = longterm.forward(ad.constant(h), mu, r_c, r_d, params)
        return e_star.value - h  # the aggregated part alone

    @pytest.mark.parametrize("seed", range(10))
    def test_future_visits_never_reach_earlier_summaries(self, seed):
        params, h, mu, r_c, r_d = self._long_setup(seed)
        base = self._long_summary(params, h, mu, r_c, r_d)
        t = h.shape[1]
        for i in range(t):
            bumped = h.copy()
            bumped[:, i] += 1.0
            out = self._long_summary(params, bumped, mu, r_c, r_d)
            for j in range(i):
                np.testing.assert_array_equal(out[:, j], base[:, j])

    def test_own_visit_perturbation_leaves_its_summary_unchanged(self):
        # Known red: the pair scores condition on the target embedding, so
        # moving h_j re-weights the sources of e_j even though no future or
        # same-visit value enters the sum itself.
        for seed in range(10):
            params, h, mu, r_c, r_d = self._long_setup(seed)
            base = self._long_summary(params, h, mu, r_c, r_d)
            t = h.shape[1]
            for j in range(t):
                bumped = h.copy()
                bumped[:, j] += 1.0
                out = self._long_summary(params, bumped, mu, r_c, r_d)
                np.testing.assert_array_equal(out[:, j], base[:, j])

    @pytest.mark.parametrize("seed", range(10))
    def test_convolution_windows_are_strictly_local(self, seed):
        rng = np.random.default_rng(100 + seed)
        n, t = 3, 6
        params = temporal.init_short_term(rng, n)
        h = rng.standard_normal((n, t))
        delta = rng.standard_normal((n, t - 1))

        def conv(h_np, d_np):
            h_prime = temporal.interleave(ad.constant(h_np), ad.constant(d_np))
            return temporal.conv_features(h_prime, params).value

        base = conv(h, delta)
        for v in range(t):
            bumped = h.copy()
            bumped[:, v] += 1.0
            out = conv(bumped, delta)
            allowed = {v, v + 1}
            for o in range(t):
                if o not in allowed:
                    np.testing.assert_array_equal(out[:, o], base[:, o])
        for d in range(t - 1):
            bumped = delta.copy()
            bumped[:, d] += 1.0
            out = conv(h, bumped)
            for o in range(t):
                if o != d + 1:
                    np.testing.assert_array_equal(out[:, o], base[:, o])


class TestNormalizationSuite:
    def _bundle(self):
        rng = np.random.default_rng(31)
        cfg = model.ModelConfig(n_features=4, t_max=6, n_heads=2, d_k=3,
                                d_ff=8, d_h=6, d_u=5, g_c=4, g_d=4, seed=7)
        params = model.assemble_model(cfg)
        mask = np.ones((4, 6), dtype=bool)
        mask[2, 1:] = False   # feature 2 imputed at every later visit
        mask[3, :] = False    # feature 3 fully imputed
        journey = random_journey(rng, n=4, t=6, g_c=4, g_d=4, obs_mask=mask)
        y_hat, bundle = model.forward(params, journey, apply_obs_mask=True)
        return journey, y_hat, bundle

    def test_every_attention_product_is_a_distribution(self):
        journey, y_hat, bundle = self._bundle()
        t = journey.t_len
        for xi in bundle.xi:
            np.testing.assert_allclose(xi.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(bundle.alpha[:, :t].sum(axis=0), 1.0,
                                   atol=1e-9)
        for j in range(1, t):
            np.testing.assert_allclose(bundle.P[:, :, j].sum(axis=1), 1.0,
                                       atol=1e-9)
        np.testing.assert_allclose(bundle.beta.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(y_hat.value.sum(), 1.0, atol=1e-9)

    def test_masked_entries_are_exactly_zero(self):
        journey, _, bundle = self._bundle()
        t = journey.t_len
        for xi in bundle.xi:
            assert np.all(xi[:, 3] == 0.0)  # fully imputed feature's key column
        assert np.all(bundle.alpha[:, :t][~journey.obs_mask] == 0.0)
        assert np.all(bundle.P[:, :, 0] == 0.0)  # first target has no sources
        for j in range(1, t):
            assert np.all(bundle.P[:, j:, j] == 0.0)  # no same-or-future source

    def test_three_visit_mask_pattern(self):
        neg = float("-inf")
        expect = np.array([[neg, 0.0, 0.0],
                           [neg, neg, 0.0],
                           [neg, neg, neg]])
        np.testing.assert_array_equal(longterm.build_mask(3), expect)


class TestGeometryIdentity:
    def test_interleave_and_convolution_widths(self):
        rng = np.random.default_rng(41)
        for t in range(1, 65):
            h = ad.constant(rng.standard_normal((2, t)))
            delta = ad.constant(rng.standard_normal((2, t - 1)))
            h_prime = temporal.interleave(h, delta)
            assert h_prime.shape == (2, 2 * t + 1)
            params = temporal.init_short_term(rng, 2)
            assert temporal.conv_features(h_prime, params).shape == (2, t)


class TestMetricOracle:
    @staticmethod
    def brute_force_auroc(scores, labels):
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        total = 0.0
        for p in pos:
            for q in neg:
                if p > q:
                    total += 1.0
                elif p == q:
                    total += 0.5
        return total / (pos.size * neg.size)

    def test_thousand_random_instances_match_pairwise_count(self):
        rng = np.random.default_rng(59)
        for trial in range(1000):
            n = int(rng.integers(2, 201))
            scores = np.round(rng.random(n), 2)
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            got = metrics.auroc(ScoredSet.from_lists(scores, labels))
            assert abs(got - self.brute_force_auroc(scores, labels)) < 1e-12

    def test_hand_examples_reproduce_exactly(self):
        s = ScoredSet.from_lists([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        assert metrics.auroc(s) == 0.75
        s = ScoredSet.from_lists([0.9, 0.8, 0.7, 0.1], [0, 0, 0, 1])
        assert metrics.auprc(s) == 0.25


class TestOverfitCheck:
    def test_small_separable_set_is_memorized(self):
        start = time.monotonic()
        journeys = data.generate_synthetic(
            data.SyntheticConfig(n_journeys=50), seed=5)
        stats = data.fit_normalization(journeys)
        journeys = data.apply_normalization(journeys, stats)
        weights = data.class_weights(journeys)
        params = model.assemble_model(model.ModelConfig(seed=5))
        tcfg = train.TrainConfig(epochs=200, patience=200, seed=5)
        params, history = train.train(params, journeys, [], weights, tcfg)
        assert min(h["train_loss"] for h in history) < 0.05
        report = train.evaluate(params, journeys, seed=5)
        assert report["auroc"] >= 0.99
        assert time.monotonic() - start < 300.0


class TestAblationDirection:
    def test_full_model_beats_single_path_variants(self):
        start = time.monotonic()
        seeds = range(5)
        results: dict[str, list[float]] = {"full": [], "beta": [], "gamma": []}
        variants = {"full": {}, "beta": {"disable_short": True},
                    "gamma": {"disable_long": True}}
        for seed in seeds:
            journeys = data.generate_synthetic(data.SyntheticConfig(), seed=seed)
            splits, _ = cli._prepare_splits(journeys, seed=seed)
            weights = data.class_weights(splits.train)
            tcfg = train.TrainConfig(learning_rate=3e-3, epochs=10,
                                     patience=10, seed=seed)
            for name, flags in variants.items():
                params = model.assemble_model(model.ModelConfig(seed=seed, **flags))
                params, _ = train.train(params, splits.train, splits.valid,
                                        weights, tcfg)
                report = train.evaluate(params, splits.test, seed=seed)
                results[name].append(report["auroc"])
        means = {name: float(np.mean(v)) for name, v in results.items()}
        assert means["full"] >= means["beta"] + 0.01, means
        assert means["full"] >= means["gamma"] + 0.01, means
        assert time.monotonic() - start < 1800.0


class TestDeterminism:
    def test_train_and_eval_are_byte_identical(self, tmp_path):
        gen_cfg = tmp_path / "gen.json"
        gen_cfg.write_text(json.dumps({"synthetic": {"n_journeys": 120}}))
        data_dir = tmp_path / "data"
        assert cli.main(["gen-data", "--config", str(gen_cfg), "--seed", "9",
                         "--out", str(data_dir)]) == 0
        run_cfg = tmp_path / "run.json"
        run_cfg.write_text(json.dumps({
            "data": str(data_dir / "journeys.jsonl"),
            "train": {"epochs": 3, "patience": 3},
        }))
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert cli.main(["train", "--config", str(run_cfg), "--seed", "9",
                             "--out", str(out)]) == 0
            outs.append(out)
        a, b = outs
        assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
        assert (a / "model.ckpt").read_bytes() == (b / "model.ckpt").read_bytes()
        for name in ("a-eval", "b-eval"):
            src = a if name.startswith("a") else b
            eval_cfg = tmp_path / f"{name}.json"
            eval_cfg.write_text(json.dumps({
                "data": str(data_dir / "journeys.jsonl"),
                "checkpoint": str(src / "model.ckpt"),
                "norm_stats": str(src / "norm_stats.json"),
            }))
            assert cli.main(["eval", "--config", str(eval_cfg), "--seed", "9",
                             "--out", str(tmp_path / name)]) == 0
        assert ((tmp_path / "a-eval" / "report.json").read_bytes()
                == (tmp_path / "b-eval" / "report.json").read_bytes())


class TestExportContract:
    def test_file_count_and_distribution_rows(self, tmp_path):
        rng = np.random.default_rng(71)
        cfg = model.ModelConfig(n_features=4, t_max=6, n_heads=3, d_k=3,
                                d_ff=8, d_h=6, d_u=5, g_c=4, g_d=4, seed=13)
        params = model.assemble_model(cfg)
        mask = np.ones((4, 5), dtype=bool)
        mask[2, 2] = False
        mask[3, :] = False
        journey = random_journey(rng, n=4, t=5, g_c=4, g_d=4, obs_mask=mask)
        files = train.export_attention(params, journey, tmp_path)
        t = journey.t_len
        assert len(files) == cfg.n_heads + 1 + t + 1

        def load(name):
            rows = [line.split(",") for line in
                    (tmp_path / name).read_text().strip().splitlines()[1:]]
            return np.array([[float(x) for x in row[1:]] for row in rows])

        for m in range(cfg.n_heads):
            xi = load(f"xi_head{m}.csv")
            np.testing.assert_allclose(xi.sum(axis=1), 1.0, atol=1e-9)
            assert np.all(xi[:, 3] == 0.0)
        alpha = load("alpha.csv")
        np.testing.assert_allclose(alpha.sum(axis=0), 1.0, atol=1e-9)
        assert np.all(alpha[~mask] == 0.0)
        beta = load("beta.csv")
        np.testing.assert_allclose(beta.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(load("p_visit1.csv") == 0.0)
        for v in range(2, t + 1):
            p = load(f"p_visit{v}.csv")
            np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
            assert np.all(p[:, v - 1:] == 0.0)
