import logging

import numpy as np
import pytest

from subgoal_transfer import hrl
from subgoal_transfer.dataset import SubgoalSequence, trajectory_from_entry
from subgoal_transfer.env import EnvState, KNIGHT_JUMPS, Square, subgoal_window
from subgoal_transfer.hrl import (
    HighPolicy,
    LearningCurve,
    LowPolicy,
    TrainConfig,
    WINDOW_OFFSETS,
    demo_triples,
    greedy_high_rollout,
    high_features,
    legal_offset_indices,
    low_features,
    pretrain_low,
    project_to_window,
    projected_prediction,
    rollout_episode,
    run_baseline,
    save_curve,
    load_curve_bins,
    train_hierarchy,
    warm_init_high,
    window_offset_index,
)


def sq(name):
    return Square.from_name(name)


D4 = sq("d4")


@pytest.fixture(scope="module")
def pretrained_low(dataset):
    tasks = [e.task for e in dataset.entries]
    demos = [trajectory_from_entry(e) for e in dataset.train_entries()[:80]]
    low = LowPolicy(seed=5)
    pretrain_low(low, demos, tasks, epochs=40, seed=5)
    return low


class TestWindowGeometry:
    def test_24_offsets_cover_the_window(self):
        assert len(WINDOW_OFFSETS) == 24
        squares = {
            Square(D4.file + df, D4.rank + dr) for df, dr in WINDOW_OFFSETS
        }
        assert squares == set(subgoal_window(D4))

    def test_offset_index_round_trip(self):
        for i, (df, dr) in enumerate(WINDOW_OFFSETS):
            target = Square(D4.file + df, D4.rank + dr)
            assert window_offset_index(D4, target) == i
        assert window_offset_index(D4, sq("h8")) is None
        assert window_offset_index(D4, D4) is None

    def test_legal_offsets_match_board_edges(self):
        assert len(legal_offset_indices(D4)) == 24
        assert len(legal_offset_indices(sq("a1"))) == 8

    def test_projection_identity_inside_window(self):
        target, projected = project_to_window(D4, sq("e5"))
        assert target == sq("e5") and not projected

    def test_projection_nearest_chebyshev(self):
        # h8 is (4,4) away from d4; nearest window square is f6
        target, projected = project_to_window(D4, sq("h8"))
        assert projected and target == sq("f6")

    def test_projection_tie_breaks_by_square_index(self):
        # a4 is (-3, 0) from d4, outside the window; b3/b4/b5 are all
        # Chebyshev 1 from a4 and b3 has the lowest square index
        target, projected = project_to_window(D4, sq("a4"))
        assert projected
        assert target == sq("b3")


class TestFeatures:
    def test_high_feature_layout(self):
        state = EnvState(agent=D4, captured_a=True)
        feats = high_features(state, sq("c2"))
        assert feats.shape == (130,)
        assert feats[D4.index] == 1.0
        assert feats[64] == 1.0 and feats[65] == 0.0
        assert feats[66 + sq("c2").index] == 1.0
        assert feats.sum() == 3.0

    def test_high_features_without_achieved(self):
        feats = high_features(EnvState(agent=D4), None)
        assert feats.sum() == 1.0

    def test_low_feature_layout(self):
        feats = low_features(EnvState(agent=D4), None, 5)
        assert feats.shape == (154,)
        assert feats[130 + 5] == 1.0


class TestMaskedDistributions:
    def test_off_board_offsets_have_zero_probability(self):
        policy = HighPolicy(seed=1)
        a1 = sq("a1")
        legal = legal_offset_indices(a1)
        probs, _ = policy.distribution(high_features(EnvState(agent=a1), None), legal)
        assert abs(probs.sum() - 1.0) < 1e-9
        illegal = set(range(24)) - set(legal)
        assert all(probs[i] == 0.0 for i in illegal)
        assert all(probs[i] > 0.0 for i in legal)

    def test_low_policy_masks_off_board_jumps(self):
        policy = LowPolicy(seed=2)
        a1 = sq("a1")
        legal = [i for i, j in enumerate(KNIGHT_JUMPS)
                 if 0 <= a1.file + j[0] <= 7 and 0 <= a1.rank + j[1] <= 7]
        feats = low_features(EnvState(agent=a1), None, 0)
        probs, _ = policy.distribution(feats, legal)
        assert abs(probs.sum() - 1.0) < 1e-9
        assert sum(p > 0 for p in probs) == len(legal) == 2


class TestWarmInit:
    def test_zero_noise_rollout_reproduces_prediction(self, dataset):
        entry = dataset.entries[dataset.test_ids[1]]
        cfg = TrainConfig(v_noise=0.0, warm_epochs=200, seed=3)
        policy = warm_init_high(HighPolicy(seed=7), entry.learner, entry.task, cfg)
        expected = projected_prediction(entry.task, entry.learner)
        assert greedy_high_rollout(policy, entry.task, len(expected)) == expected

    def test_full_noise_agreement_is_chance_level(self, dataset):
        entry = dataset.entries[dataset.test_ids[2]]
        expected = projected_prediction(entry.task, entry.learner)
        cfg = TrainConfig(v_noise=1.0, warm_epochs=30, seed=3)
        agree, total, chance_sum = 0, 0, 0.0
        for seed in range(100):
            policy = warm_init_high(
                HighPolicy(seed=seed), entry.learner, entry.task, cfg,
                rng=np.random.default_rng(seed))
            rolled = greedy_high_rollout(policy, entry.task, len(expected))
            state_chain = [entry.task.start] + expected[:-1]
            for agent, want, got in zip(state_chain, expected, rolled):
                agree += int(want == got)
                total += 1
                chance_sum += 1.0 / len(legal_offset_indices(agent))
        rate = agree / total
        chance = chance_sum / total
        sigma = (chance * (1 - chance) / total) ** 0.5
        assert abs(rate - chance) < 5 * sigma + 0.02

    def test_empty_prediction_is_a_noop(self, dataset, caplog):
        entry = dataset.entries[0]
        cfg = TrainConfig(seed=0)
        policy = HighPolicy(seed=3)
        before = [p.value.copy() for p in policy.parameters()]
        n_empty = hrl.diagnostics["empty_predictions"]
        with caplog.at_level(logging.WARNING):
            warm_init_high(policy, SubgoalSequence(()), entry.task, cfg)
        assert hrl.diagnostics["empty_predictions"] == n_empty + 1
        assert "empty prediction" in caplog.text
        for p, b in zip(policy.parameters(), before):
            assert (p.value == b).all()

    def test_out_of_window_labels_projected_and_counted(self, dataset):
        # bishop sequences routinely jump further than the knight window
        entry = next(
            e for e in dataset.entries
            if any(max(abs(a.file - b.file), abs(a.rank - b.rank)) > 2
                   for a, b in zip((e.task.start,) + e.expert.tokens, e.expert.tokens))
        )
        cfg = TrainConfig(warm_epochs=1, seed=0)
        n_before = hrl.diagnostics["window_projections"]
        warm_init_high(HighPolicy(seed=1), entry.expert, entry.task, cfg)
        assert hrl.diagnostics["window_projections"] > n_before


class TestPretrainLow:
    def test_fit_quality_on_held_in_triples(self, dataset, pretrained_low):
        tasks = [e.task for e in dataset.entries]
        demos = [trajectory_from_entry(e) for e in dataset.train_entries()[:80]]
        triples = demo_triples(demos, tasks)
        hits = 0
        for feats, label, legal in triples:
            probs, _ = pretrained_low.distribution(feats, legal)
            hits += int(np.argmax(probs) == label)
        assert hits / len(triples) >= 0.95

    def test_one_jump_subgoals_pick_that_jump(self, pretrained_low):
        hits, total = 0, 0
        for index in range(64):
            agent = Square.from_index(index)
            state = EnvState(agent=agent)
            legal = [i for i, j in enumerate(KNIGHT_JUMPS)
                     if 0 <= agent.file + j[0] <= 7 and 0 <= agent.rank + j[1] <= 7]
            for jump_idx in legal:
                df, dr = KNIGHT_JUMPS[jump_idx]
                subgoal = Square(agent.file + df, agent.rank + dr)
                offset_idx = window_offset_index(agent, subgoal)
                probs, _ = pretrained_low.distribution(
                    low_features(state, None, offset_idx), legal)
                hits += int(np.argmax(probs) == jump_idx)
                total += 1
        assert hits / total >= 0.95

    def test_deterministic(self, dataset):
        tasks = [e.task for e in dataset.entries]
        demos = [trajectory_from_entry(e) for e in dataset.train_entries()[:10]]
        a = pretrain_low(LowPolicy(seed=4), demos, tasks, epochs=5, seed=9)
        b = pretrain_low(LowPolicy(seed=4), demos, tasks, epochs=5, seed=9)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert (pa.value == pb.value).all()

    def test_empty_demo_set_rejected(self, dataset):
        with pytest.raises(ValueError):
            pretrain_low(LowPolicy(seed=0), [], [e.task for e in dataset.entries])


class TestEpisodes:
    def test_reward_accounting(self, dataset, pretrained_low):
        cfg = TrainConfig(seed=0)
        rng = np.random.default_rng(123)
        for trial in range(100):
            entry = dataset.entries[int(rng.integers(len(dataset.entries)))]
            high = HighPolicy(seed=int(rng.integers(10_000)))
            result = rollout_episode(high, pretrained_low, entry.task, cfg, rng)
            k = len(result.attempts)
            c = sum(a.captured for a in result.attempts)
            assert result.high_return == 10 * c - (k - c)
            assert result.high_return <= 20
            assert result.steps <= cfg.horizon

    def test_episode_ends_when_both_captured(self, dataset, pretrained_low):
        entry = dataset.entries[7]
        cfg = TrainConfig(v_noise=0.0, warm_epochs=150, seed=3)
        high = warm_init_high(HighPolicy(seed=5), entry.learner, entry.task, cfg)
        for seed in range(10):
            result = rollout_episode(high, pretrained_low, entry.task, cfg,
                                     np.random.default_rng(seed))
            if result.all_captured:
                assert result.steps < cfg.horizon or result.steps == cfg.horizon
                assert result.captures == 2
                return
        pytest.fail("warm policy never captured both pawns in 10 rollouts")

    def test_per_step_reward_variant(self, dataset, pretrained_low):
        entry = dataset.entries[7]
        cfg = TrainConfig(seed=0, per_step_high_rewards=True)
        result = rollout_episode(HighPolicy(seed=2), pretrained_low, entry.task,
                                 cfg, np.random.default_rng(5))
        # per-step emission: each attempt contributes its summed step rewards
        assert result.high_return == sum(a.r_high for a in result.attempts)


class TestTrainHierarchy:
    def test_curve_shapes_and_determinism(self, dataset, pretrained_low):
        entry = dataset.entries[7]
        cfg = TrainConfig(episodes=60, bin_size=20, seed=5)

        def run():
            high = HighPolicy(seed=1)
            low = pretrained_low.clone()
            _, _, curve = train_hierarchy(high, low, entry.task, cfg,
                                          rng=np.random.default_rng(5))
            return curve

        c1, c2 = run(), run()
        assert len(c1.returns) == 60
        assert len(c1.binned()) == 3
        assert c1.returns == c2.returns

    def test_run_baseline_modes(self, dataset, pretrained_low):
        entry = dataset.entries[dataset.test_ids[0]]
        cfg = TrainConfig(episodes=30, bin_size=10, trials=2, warm_epochs=20, seed=2)
        all_curves = {}
        for mode in hrl.MODES:
            curves = run_baseline(mode, entry.task, None, entry.expert,
                                  pretrained_low, cfg, predicted=entry.learner)
            assert len(curves) == 2
            assert all(len(c.returns) == 30 for c in curves)
            assert [c.trial for c in curves] == [0, 1]
            all_curves[mode] = curves
        # identical episode counts across modes
        counts = {len(c.returns) for cs in all_curves.values() for c in cs}
        assert counts == {30}

    def test_run_baseline_validates_inputs(self, dataset, pretrained_low):
        entry = dataset.entries[0]
        cfg = TrainConfig(episodes=5, trials=1, seed=0)
        with pytest.raises(ValueError):
            run_baseline("mapping-warm", entry.task, None, entry.expert,
                         pretrained_low, cfg)
        with pytest.raises(ValueError):
            run_baseline("expert-direct", entry.task, None, None,
                         pretrained_low, cfg)
        with pytest.raises(ValueError):
            run_baseline("bogus", entry.task, None, None, pretrained_low, cfg)


class TestCurveFiles:
    def test_round_trip(self, dataset, tmp_path):
        curve = LearningCurve(mode="no-transfer", trial=1, bin_size=2,
                              returns=(1.0, 3.0, -2.0, 4.0, 5.0))
        path = str(tmp_path / "curve.csv")
        save_curve(curve, dataset.entries[0].task, path, header_lines=["# test"])
        meta, bins = load_curve_bins(path)
        assert meta == {"task": "0", "mode": "no-transfer", "trial": "1",
                        "bin_size": "2"}
        assert bins == pytest.approx([2.0, 1.0, 5.0])

    def test_raw_section_kept_out_of_bins(self, dataset, tmp_path):
        curve = LearningCurve(mode="mapping-warm", trial=0, bin_size=2,
                              returns=(1.0, 3.0, -2.0, 4.0))
        path = str(tmp_path / "raw.csv")
        save_curve(curve, dataset.entries[0].task, path, raw=True)
        text = open(path).read()
        assert "episode,return" in text
        _, bins = load_curve_bins(path)
        assert bins == pytest.approx([2.0, 1.0])

    def test_not_a_curve_file(self, tmp_path):
        path = tmp_path / "junk.csv"
        path.write_text("hello\n")
        with pytest.raises(ValueError):
            load_curve_bins(str(path))
