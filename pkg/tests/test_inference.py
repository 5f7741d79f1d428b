import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import constant_prior_artifact
from venomguard.inference import (
    EscalationPolicy,
    PredictionResult,
    ScoreMatrix,
    aggregate_observation,
    escalate_venomous,
    joint_scores,
    predict_dataset,
    read_predictions_csv,
    worker_count,
    write_predictions_csv,
)

prob_rows = st.lists(st.floats(0.01, 1.0), min_size=2, max_size=8).map(
    lambda xs: np.array(xs) / np.sum(xs)
)


class TestScoreMatrix:
    def test_stage_tag_validated(self):
        with pytest.raises(ValueError, match="stage"):
            ScoreMatrix(np.ones((1, 2)), "final")

    def test_negative_probabilities_rejected_after_raw(self):
        values = np.array([[0.5, -0.5]])
        ScoreMatrix(values, "raw")  # raw rows may be signed logits
        with pytest.raises(ValueError):
            ScoreMatrix(values, "combined")

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            ScoreMatrix(np.array([[np.inf, 0.0]]), "raw")


class TestJointScores:
    def test_hand_case_flips_argmax(self):
        out = joint_scores(np.array([0.6, 0.4]), np.array([0.0, math.log(3.0)]))
        assert np.allclose(out, [1.0 / 3.0, 2.0 / 3.0], atol=1e-12)
        assert int(np.argmax(out)) == 1

    def test_uniform_prior_changes_nothing(self):
        probs = np.array([0.2, 0.5, 0.3])
        out = joint_scores(probs, np.zeros(3))
        assert np.allclose(out, probs, atol=1e-12)

    def test_one_hot_image_scores_survive_any_prior(self):
        probs = np.array([0.0, 1.0, 0.0])
        out = joint_scores(probs, np.array([5.0, -3.0, 2.0]))
        assert np.allclose(out, probs, atol=1e-12)

    def test_vanishing_product_falls_back_with_warning(self):
        # An extreme prior underflows to exactly zero on the only supported class.
        probs = np.array([0.0, 1.0])
        with pytest.warns(UserWarning, match="falling back"):
            out = joint_scores(probs, np.array([1000.0, -1000.0]))
        assert np.array_equal(out, probs)

    def test_shape_and_sign_validation(self):
        with pytest.raises(ValueError):
            joint_scores(np.array([0.5, 0.5]), np.zeros(3))
        with pytest.raises(ValueError):
            joint_scores(np.array([-0.1, 1.1]), np.zeros(2))

    @settings(max_examples=50, deadline=None)
    @given(probs=prob_rows, data=st.data())
    def test_output_is_normalized(self, probs, data):
        logits = np.array(
            data.draw(
                st.lists(
                    st.floats(-10, 10), min_size=len(probs), max_size=len(probs)
                )
            )
        )
        out = joint_scores(probs, logits)
        assert out.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(out >= 0)


class TestAggregate:
    def test_single_row_identity(self):
        row = np.array([[0.1, 0.9]])
        assert np.array_equal(aggregate_observation(row), row[0])

    def test_two_rows_average(self):
        rows = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert np.allclose(aggregate_observation(rows), [0.5, 0.5], atol=1e-12)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        rows = rng.dirichlet(np.ones(4), size=5)
        shuffled = rows[rng.permutation(5)]
        assert np.allclose(
            aggregate_observation(rows), aggregate_observation(shuffled), atol=1e-12
        )

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_observation(np.empty((0, 3)))


class TestEscalation:
    def test_confident_argmax_stands(self, five_classes):
        row = np.array([0.9, 0.05, 0.03, 0.01, 0.01])
        policy = EscalationPolicy(tau=0.5, top_k=5)
        assert escalate_venomous(row, five_classes, policy) == 0

    def test_uncertain_row_escalates_to_best_venomous(self, five_classes):
        # classes 1 and 3 are venomous; 0.30 < tau picks the 0.25 venomous entry
        row = np.array([0.30, 0.25, 0.20, 0.15, 0.10])
        policy = EscalationPolicy(tau=0.5, top_k=5)
        assert escalate_venomous(row, five_classes, policy) == 1

    def test_no_venomous_in_top_k_keeps_argmax(self, five_classes):
        row = np.array([0.4, 0.05, 0.35, 0.05, 0.15])
        policy = EscalationPolicy(tau=0.5, top_k=2)
        # top-2 are classes 0 and 2, both harmless
        assert escalate_venomous(row, five_classes, policy) == 0

    def test_tau_zero_is_identity(self, five_classes):
        rng = np.random.default_rng(1)
        policy = EscalationPolicy(tau=0.0, top_k=5)
        for _ in range(50):
            row = rng.dirichlet(np.ones(5))
            assert escalate_venomous(row, five_classes, policy) == int(np.argmax(row))

    def test_score_ties_resolve_to_lower_id(self, five_classes):
        row = np.array([0.3, 0.175, 0.175, 0.175, 0.175])
        policy = EscalationPolicy(tau=0.5, top_k=5)
        # venomous classes 1 and 3 tie; lower id wins
        assert escalate_venomous(row, five_classes, policy) == 1

    def test_top_k_larger_than_classes_is_clipped(self, five_classes):
        row = np.array([0.25, 0.05, 0.25, 0.2, 0.25])
        policy = EscalationPolicy(tau=0.9, top_k=50)
        assert escalate_venomous(row, five_classes, policy) == 3

    def test_row_must_be_a_distribution(self, five_classes):
        with pytest.raises(ValueError, match="sum"):
            escalate_venomous(np.full(5, 0.3), five_classes, EscalationPolicy())

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            EscalationPolicy(tau=1.5)
        with pytest.raises(ValueError):
            EscalationPolicy(top_k=0)

    def test_never_downgrades_a_venomous_argmax(self, five_classes):
        rng = np.random.default_rng(2)
        policy = EscalationPolicy(tau=0.6, top_k=5)
        flags = five_classes.venomous_flags
        for _ in range(200):
            row = rng.dirichlet(np.ones(5))
            final = escalate_venomous(row, five_classes, policy)
            if flags[int(np.argmax(row))]:
                assert flags[final]

    def test_only_fires_below_tau(self, five_classes):
        rng = np.random.default_rng(3)
        policy = EscalationPolicy(tau=0.4, top_k=5)
        for _ in range(200):
            row = rng.dirichlet(np.ones(5))
            final = escalate_venomous(row, five_classes, policy)
            if row.max() >= 0.4:
                assert final == int(np.argmax(row))


class TestWorkerCount:
    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("VENOMGUARD_THREADS", "3")
        assert worker_count() == 3

    def test_empty_and_zero_fall_back_to_auto(self, monkeypatch):
        for raw in ("", "0"):
            monkeypatch.setenv("VENOMGUARD_THREADS", raw)
            assert 1 <= worker_count() <= 8

    def test_negative_rejected(self, monkeypatch):
        monkeypatch.setenv("VENOMGUARD_THREADS", "-2")
        with pytest.raises(ValueError):
            worker_count()


class TestPredictDataset:
    def test_argmax_of_averaged_softmax_without_prior(self, tiny_bundle):
        out = predict_dataset(
            tiny_bundle, policy=EscalationPolicy(tau=0.0, top_k=5)
        )
        ids = {r.observation_id: r.class_id for r in out.results}
        # obs_a averages two rows that both favor class 0
        assert ids == {"obs_a": 0, "obs_b": 1, "obs_c": 3}
        assert [r.observation_id for r in out.results] == ["obs_a", "obs_b", "obs_c"]

    def test_intermediates_align_with_rows_and_results(self, tiny_bundle):
        out = predict_dataset(tiny_bundle)
        n_rows = len(tiny_bundle.observations.rows)
        assert out.raw.values.shape == (n_rows, 5)
        assert out.combined.values.shape == (n_rows, 5)
        assert out.aggregated.values.shape == (len(out.results), 5)
        assert out.raw.stage == "raw"
        for i, r in enumerate(out.results):
            assert out.aggregated.values[i].argmax() == r.pre_escalation_class_id
            assert r.confidence == pytest.approx(out.aggregated.values[i].max())

    def test_constant_prior_preserves_predictions(self, tiny_bundle):
        plain = predict_dataset(tiny_bundle)
        prior = constant_prior_artifact(tiny_bundle)
        primed = predict_dataset(tiny_bundle, prior=prior)
        assert [r.class_id for r in plain.results] == [
            r.class_id for r in primed.results
        ]
        assert np.allclose(
            plain.aggregated.values, primed.aggregated.values, atol=1e-12
        )

    def test_probability_scores_mode(self, tiny_bundle):
        # Raw scores are non-negative, so they can be read as unnormalized probs.
        out = predict_dataset(tiny_bundle, scores_are_logits=False)
        assert np.allclose(out.raw.values.sum(axis=1), 1.0, atol=1e-12)

    def test_probability_mode_rejects_negative_scores(self, tiny_bundle):
        from dataclasses import replace

        from venomguard.data_model import FeatureMatrix

        bad = replace(
            tiny_bundle,
            image_scores=FeatureMatrix(-np.ones((4, 5))),
        )
        with pytest.raises(ValueError):
            predict_dataset(bad, scores_are_logits=False)

    def test_score_width_mismatch_rejected(self, tiny_bundle):
        from dataclasses import replace

        from venomguard.data_model import FeatureMatrix

        bad = replace(tiny_bundle, image_scores=FeatureMatrix(np.ones((4, 3))))
        with pytest.raises(ValueError, match="width"):
            predict_dataset(bad)

    def test_thread_count_does_not_change_predictions(self, monkeypatch, synth7):
        bundle = synth7.bundle
        monkeypatch.setenv("VENOMGUARD_THREADS", "1")
        serial = predict_dataset(bundle)
        monkeypatch.setenv("VENOMGUARD_THREADS", "4")
        threaded = predict_dataset(bundle)
        assert [r.class_id for r in serial.results] == [
            r.class_id for r in threaded.results
        ]
        assert np.array_equal(serial.aggregated.values, threaded.aggregated.values)

    def test_results_sorted_by_observation_id(self, synth7):
        out = predict_dataset(synth7.bundle)
        ids = [r.observation_id for r in out.results]
        assert ids == sorted(ids)


class TestPredictionCsv:
    def results(self):
        return [
            PredictionResult("obs_a", 3, 1, 0.42),
            PredictionResult("obs_b", 0, 0, 0.97),
        ]

    def test_round_trip(self, tmp_path):
        path = tmp_path / "preds.csv"
        write_predictions_csv(path, self.results())
        assert read_predictions_csv(path) == {"obs_a": 3, "obs_b": 0}

    def test_explain_adds_escalation_columns(self, tmp_path):
        path = tmp_path / "preds.csv"
        write_predictions_csv(path, self.results(), explain=True)
        lines = path.read_text().splitlines()
        assert lines[0] == "observation_id,class_id,pre_escalation_class_id,confidence"
        assert lines[1].startswith("obs_a,3,1,")
        # explain files still satisfy the minimal reader
        assert read_predictions_csv(path) == {"obs_a": 3, "obs_b": 0}

    def test_duplicate_observation_rejected(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("observation_id,class_id\nobs_a,1\nobs_a,2\n")
        with pytest.raises(ValueError, match="duplicate"):
            read_predictions_csv(path)

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("obs_a,1\n")
        with pytest.raises(ValueError, match="header"):
            read_predictions_csv(path)
