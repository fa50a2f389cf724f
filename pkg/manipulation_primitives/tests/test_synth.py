"""Tests for the synthetic action generator and its zero-noise round trip."""

from collections import Counter

import numpy as np
import pytest
from scipy.integrate import trapezoid

from manipulation_primitives.config import ACTION_LABELS
from manipulation_primitives.core.config import SynthConfig
from manipulation_primitives.core.entities import ChannelGroup, EventKind, PrimitiveFamily
from manipulation_primitives.core.exceptions import ArgumentException
from manipulation_primitives.providers.action_synthesizer import (
    ActionScript, ActionSynthesizer, NoiseSigmas, ScriptEvent, SubjectParams, builtin_scripts,
    default_subject, draw_subject, generate_dataset, load_dataset, mix_seed, nominal_levels, render_trial,
    robustness_curve,
)
from manipulation_primitives.providers.primitive_extractor import extract_sequence
from manipulation_primitives.providers.signal_processor import composite_norm

ZERO_NOISE = NoiseSigmas()


@pytest.fixture(scope="module")
def scripts():
    return {script.label: script for script in builtin_scripts()}


def _families(sequence):
    return [token.family for token in sequence]


class TestBuiltinScripts:
    def test_eight_distinct_actions(self, scripts):
        assert sorted(scripts) == sorted(ACTION_LABELS)

    def test_begin_and_end_with_reach(self, scripts):
        for script in scripts.values():
            families = _families(script.expected)
            assert families[0] is PrimitiveFamily.REACH
            assert families[-1] is PrimitiveFamily.REACH
            assert script.events[0].kind is EventKind.REACH

    def test_rotation_counts(self, scripts):
        assert _families(scripts["Stir"].expected).count(PrimitiveFamily.ROTATE) >= 4
        assert _families(scripts["CloseDrawer"].expected).count(PrimitiveFamily.ROTATE) == 0

    def test_open_drawer_sequence(self, scripts):
        assert scripts["OpenDrawer"].expected.names == [
            "Vx-", "Gl", "Gm", "Gh", "Vx+", "Rh", "Rm", "Rl", "Vx-",
        ]

    def test_pick_place_merges_lift_and_carry(self, scripts):
        assert "Vy+&Vz+" in scripts["PickPlace"].expected.names

    def test_spray_bends_twice(self, scripts):
        names = scripts["Spray"].expected.names
        assert names.count("Bh") == 2 and names.count("Eh") == 2
        assert "Gh" not in names


class TestScriptEvents:
    def test_motion_event_needs_channel(self):
        with pytest.raises(ArgumentException):
            ScriptEvent(EventKind.REACH, "wx", 1, 0.3)

    def test_subject_factor_bounds(self):
        with pytest.raises(ArgumentException):
            SubjectParams("s1", duration_factor=1.5)

    def test_drawn_subject_templates_are_unit_vectors(self):
        subject = draw_subject("s3", np.random.default_rng(0))
        assert np.linalg.norm(subject.grasp_template) == pytest.approx(1.0)
        assert np.all(subject.bend_template >= 0)
        assert 0.7 <= subject.magnitude_factor <= 1.3


class TestRenderTrial:
    def test_zero_noise_round_trip(self, scripts):
        force, bend = nominal_levels()
        rng = np.random.default_rng(99)
        subjects = [default_subject()] + [draw_subject(f"s{i}", rng) for i in range(1, 5)]
        for subject in subjects:
            for index, script in enumerate(scripts.values()):
                trial, truth = render_trial(script, subject, ZERO_NOISE, 50.0, seed=mix_seed(5, index))
                extracted = extract_sequence(trial, force, bend)
                assert extracted.names == truth.names, (subject.subject, script.label)

    def test_default_subject_matches_script(self, scripts):
        trial, truth = render_trial(scripts["OpenDrawer"], default_subject(), ZERO_NOISE, 50.0, seed=1)
        assert truth.names == scripts["OpenDrawer"].expected.names
        assert trial.action_label == "OpenDrawer"

    def test_deterministic(self, scripts):
        noise = NoiseSigmas.from_config(SynthConfig())
        a, _ = render_trial(scripts["Pour"], default_subject(), noise, 50.0, seed=42)
        b, _ = render_trial(scripts["Pour"], default_subject(), noise, 50.0, seed=42)
        np.testing.assert_array_equal(a.v, b.v)
        np.testing.assert_array_equal(a.F, b.F)

    def test_composite_force_follows_envelope(self, scripts):
        trial, _ = render_trial(scripts["OpenDrawer"], default_subject(), ZERO_NOISE, 50.0, seed=3)
        composite = composite_norm(trial, ChannelGroup.PRESSURE).values
        assert composite.max() == pytest.approx(SynthConfig().grasp_force, rel=0.02)
        np.testing.assert_allclose(composite, np.linalg.norm(trial.F, axis=1), atol=1e-12)
        assert composite_norm(trial, ChannelGroup.BEND).values.max() == 0.0

    def test_small_magnitude_is_lifted(self):
        script = ActionScript("Tiny", (ScriptEvent(EventKind.REACH, "vx", 1, 0.01, duration=0.8),))
        trial, truth = render_trial(script, default_subject(), ZERO_NOISE, 50.0, seed=0)
        assert truth.names == ["Vx+"]
        assert trapezoid(trial.v[:, 0], dx=1 / 50.0) == pytest.approx(0.12, rel=0.02)

    @pytest.mark.parametrize("margin", [1.0, 1.5])
    def test_lift_follows_configured_margin(self, margin):
        script = ActionScript("Tiny", (ScriptEvent(EventKind.REACH, "vx", 1, 0.01, duration=0.8),))
        config = SynthConfig(magnitude_margin=margin)
        trial, _ = render_trial(script, default_subject(), ZERO_NOISE, 50.0, seed=0, config=config)
        assert trapezoid(trial.v[:, 0], dx=1 / 50.0) == pytest.approx(0.10 * margin, rel=0.02)

    def test_minimum_rate(self, scripts):
        with pytest.raises(ArgumentException):
            render_trial(scripts["Stir"], default_subject(), ZERO_NOISE, 10.0, seed=0)


class TestGenerateDataset:
    def test_minimal_counts(self):
        dataset = generate_dataset(2, 1, ZERO_NOISE, seed=7)
        assert len(dataset) == 16
        assert {trial.subject for trial in dataset.trials} == {"s1", "s2"}
        assert dataset.rows[0].trial_id == "s1_CloseCabinet_01"
        assert dataset.rows[0].seed == mix_seed(7, 0)

    def test_full_size_is_balanced(self):
        dataset = generate_dataset(5, 6, ZERO_NOISE, seed=1)
        assert len(dataset) == 240
        assert set(Counter(dataset.labels).values()) == {30}

    def test_seeds_change_trials_not_labels(self):
        noise = NoiseSigmas.from_config(SynthConfig())
        a = generate_dataset(2, 1, noise, seed=1)
        b = generate_dataset(2, 1, noise, seed=2)
        assert Counter(a.labels) == Counter(b.labels)
        assert not np.array_equal(a.trials[0].v, b.trials[0].v)

    def test_test_subjects_flagged(self):
        dataset = generate_dataset(3, 1, ZERO_NOISE, seed=1, test_subjects=("s3",))
        splits = {row.subject: row.split for row in dataset.rows}
        assert splits == {"s1": "train", "s2": "train", "s3": "test"}

    def test_single_subject_rejected(self):
        with pytest.raises(ArgumentException):
            generate_dataset(1, 1, ZERO_NOISE, seed=0)


class TestActionSynthesizer:
    def test_write_and_load(self, fresh_config, tmp_path):
        synthesizer = ActionSynthesizer(fresh_config)
        dataset = synthesizer.generate(seed=11, noise_scale=0.0, n_subjects=2, trials_per_action=1)
        assert synthesizer.write(dataset, tmp_path / "data") == 16
        loaded = load_dataset(tmp_path / "data")
        assert [row.trial_id for row, _ in loaded] == [row.trial_id for row in dataset.rows]
        row, trial = loaded[0]
        assert row.truth == " ".join(dataset.truths[0].names)
        assert trial.action_label == row.action
        np.testing.assert_allclose(trial.v, dataset.trials[0].v, atol=1e-8)
        meta = (tmp_path / "data" / "dataset.meta").read_text(encoding="utf-8")
        assert "seed=11" in meta

    def test_robustness_curve(self, fresh_config):
        factors = [0.0, 0.5, 1.0, 2.0, 4.0]
        curve = robustness_curve(factors, seed=4, n_subjects=2, trials_per_action=1, config=fresh_config)
        assert [factor for factor, _ in curve] == factors
        similarity = dict(curve)
        assert similarity[0.0] == pytest.approx(1.0)
        assert similarity[1.0] >= 0.95
        scores = [score for _, score in curve]
        assert all(later <= earlier + 0.005 for earlier, later in zip(scores, scores[1:]))
