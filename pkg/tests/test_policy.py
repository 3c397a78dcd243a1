import numpy as np
import pytest

from conftest import synthetic_obs, synthetic_stats, tiny_config

from minivla import numerics as nm
from minivla import policy as pol
from minivla import sim
from minivla.errors import ContractError, DimensionError
from minivla.numerics import Tensor


def tiny_model(**overrides):
    return pol.init_model(tiny_config(**overrides), synthetic_stats())


class TestMaxpoolTokens:
    def test_direct_max(self):
        out = pol.maxpool_tokens(Tensor([[1.0, 5.0], [3.0, 2.0]]))
        np.testing.assert_array_equal(out.data, [[3.0, 5.0]])

    def test_singleton_identity(self, rng):
        row = rng.normal(size=(1, 6))
        out = pol.maxpool_tokens(Tensor(row))
        np.testing.assert_array_equal(out.data, row)

    def test_permutation_invariance(self, rng):
        x = rng.normal(size=(5, 4))
        perm = rng.permutation(5)
        a = pol.maxpool_tokens(Tensor(x)).data
        b = pol.maxpool_tokens(Tensor(x[perm])).data
        np.testing.assert_array_equal(a, b)


class TestLstmStep:
    def test_zero_weights_zero_state_fixed_point(self):
        model = tiny_model()
        for name, t in model.params.items():
            if name.startswith("head.lstm."):
                t.data[:] = 0.0
        x = Tensor(np.zeros((1, model.cfg.d_model)))
        h, state = pol.lstm_step(x, pol.reset_hidden(model), model)
        for h_i, c_i in state:
            np.testing.assert_array_equal(h_i.data, 0.0)
            np.testing.assert_array_equal(c_i.data, 0.0)

    def test_hand_computed_scalar_cell(self):
        # Width-1 cell; only the first input channel is wired, so every
        # gate is a scalar we can do by hand.
        model = tiny_model(d_model=4, lstm_layers=1, lstm_width=1)
        wx_row = np.array([0.5, 0.3, 0.8, -0.2])
        wh = np.array([[0.1, -0.1, 0.2, 0.4]])
        b = np.array([0.05, 1.0, -0.3, 0.2])
        model.params["head.lstm.0.wx"].data[:] = 0.0
        model.params["head.lstm.0.wx"].data[0] = wx_row
        model.params["head.lstm.0.wh"].data[:] = wh
        model.params["head.lstm.0.b"].data[:] = b
        x, h0, c0 = 0.7, 0.2, -0.4

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        z = x * wx_row + h0 * wh[0] + b
        i, f, g, o = sig(z[0]), sig(z[1]), np.tanh(z[2]), sig(z[3])
        c1 = f * c0 + i * g
        h1 = o * np.tanh(c1)

        prev = [(Tensor([[h0]]), Tensor([[c0]]))]
        h_top, state = pol.lstm_step(Tensor([[x, 0.0, 0.0, 0.0]]), prev, model)
        np.testing.assert_allclose(h_top.data, [[h1]], atol=1e-12)
        np.testing.assert_allclose(state[0][1].data, [[c1]], atol=1e-12)

    def test_state_stays_finite_over_many_steps(self, rng):
        model = tiny_model(d_model=4, lstm_layers=1, lstm_width=4)
        x = Tensor(rng.normal(size=(1, 4)))
        state = pol.reset_hidden(model)
        with nm.no_grad():
            for _ in range(10_000):
                _, state = pol.lstm_step(x, state, model)
        for h, c in state:
            assert np.isfinite(h.data).all() and np.isfinite(c.data).all()
            assert np.abs(h.data).max() <= 1.0  # o * tanh(c) is bounded

    def test_width_mismatch_rejected(self):
        model = tiny_model()
        bad = [(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 3))))
               for _ in range(model.cfg.lstm_layers)]
        with pytest.raises(DimensionError):
            pol.lstm_step(Tensor(np.zeros((1, model.cfg.d_model))), bad, model)


class TestActionHeads:
    def test_zero_weights_give_neutral_outputs(self):
        model = tiny_model()
        for name, t in model.params.items():
            if name.startswith(("head.pose.", "head.gripper.")):
                t.data[:] = 0.0
        pose, logit = pol.action_heads(Tensor(np.ones((1, model.cfg.lstm_width))), model)
        np.testing.assert_array_equal(pose.data, np.zeros((1, 6)))
        np.testing.assert_array_equal(logit.data, [[0.0]])

    def test_pose_within_clip_bound(self, rng):
        model = tiny_model()
        for _ in range(20):
            h = Tensor(rng.normal(size=(1, model.cfg.lstm_width)) * 10)
            pose, _ = pol.action_heads(h, model)
            assert np.abs(pose.data).max() <= model.cfg.pose_clip

    def test_matches_direct_formula(self, rng):
        model = tiny_model()
        h = rng.normal(size=(1, model.cfg.lstm_width))
        pose, logit = pol.action_heads(Tensor(h), model)
        p = model.params
        hid = np.tanh(h @ p["head.pose.w1"].data + p["head.pose.b1"].data)
        expect_pose = np.tanh(hid @ p["head.pose.w2"].data + p["head.pose.b2"].data) * 0.1
        hid_g = np.tanh(h @ p["head.gripper.w1"].data + p["head.gripper.b1"].data)
        expect_logit = hid_g @ p["head.gripper.w2"].data + p["head.gripper.b2"].data
        np.testing.assert_allclose(pose.data, expect_pose, atol=1e-12)
        np.testing.assert_allclose(logit.data, expect_logit, atol=1e-12)


class TestResetHidden:
    def test_shape_and_zeros(self):
        model = tiny_model()
        state = pol.reset_hidden(model)
        assert len(state) == model.cfg.lstm_layers
        for h, c in state:
            assert h.shape == (1, model.cfg.lstm_width)
            np.testing.assert_array_equal(h.data, 0.0)
            np.testing.assert_array_equal(c.data, 0.0)

    def test_two_resets_equal(self):
        model = tiny_model()
        a = pol.reset_hidden(model)
        b = pol.reset_hidden(model)
        for (ha, ca), (hb, cb) in zip(a, b):
            assert np.array_equal(ha.data, hb.data)
            assert np.array_equal(ca.data, cb.data)


class TestPolicyStep:
    def test_determinism(self, rng):
        model = tiny_model()
        obs = synthetic_obs(rng, 8)
        a1, s1 = pol.policy_step(model, obs, "lift the red block", pol.reset_hidden(model))
        a2, s2 = pol.policy_step(model, obs, "lift the red block", pol.reset_hidden(model))
        assert np.array_equal(a1.pose, a2.pose)
        assert a1.gripper_closed == a2.gripper_closed
        for (h1, c1), (h2, c2) in zip(s1, s2):
            assert np.array_equal(h1.data, h2.data)

    def test_alpha_zero_makes_action_frame_invariant(self, rng):
        # With every gate at zero the cameras must not matter, while the
        # instruction still reaches the frozen language path.
        model = tiny_model()
        for layer in model.decoder_layers():
            layer["cross.alpha"].data = np.asarray(0.0)
        obs_a = synthetic_obs(rng, 8)
        obs_b = synthetic_obs(rng, 8)
        act_a, _ = pol.policy_step(model, obs_a, "lift the red block", pol.reset_hidden(model))
        act_b, _ = pol.policy_step(model, obs_b, "lift the red block", pol.reset_hidden(model))
        assert np.array_equal(act_a.pose, act_b.pose)
        assert act_a.gripper_closed == act_b.gripper_closed
        act_c, _ = pol.policy_step(model, obs_a, "press the red button", pol.reset_hidden(model))
        assert not np.array_equal(act_a.pose, act_c.pose)

    def test_missing_stats_tagged_with_stage(self, rng):
        model = pol.init_model(tiny_config(), depth_stats=None)
        with pytest.raises(ContractError, match="depth_pipeline"):
            pol.policy_step(model, synthetic_obs(rng, 8), "lift the red block",
                            pol.reset_hidden(model))

    def test_episode_isolation(self, rng):
        model = tiny_model()
        model.params["decoder.0.cross.alpha"].data = np.asarray(0.5)
        obs = synthetic_obs(rng, 8)
        first, _ = pol.policy_step(model, obs, "lift the red block", pol.reset_hidden(model))
        # Run some unrelated steps, then reset: same action again.
        hidden = pol.reset_hidden(model)
        for _ in range(3):
            _, hidden = pol.policy_step(model, synthetic_obs(rng, 8), "press the red button", hidden)
        again, _ = pol.policy_step(model, obs, "lift the red block", pol.reset_hidden(model))
        assert np.array_equal(first.pose, again.pose)

    def test_full_step_grad_check(self, rng):
        # Finite differences across the whole composition on one step.
        model = tiny_model(d_model=8, resampler_k=2, decoder_layers=1,
                           lstm_layers=1, lstm_width=4)
        for layer in model.decoder_layers():
            layer["cross.alpha"].data = np.asarray(0.3)
        obs = synthetic_obs(rng, 8)
        encoded = pol.encode_observation(model, obs)
        instr = model.instruction("lift the red block")
        target_pose = Tensor(rng.uniform(-0.05, 0.05, size=(1, 6)))
        label = Tensor([[1.0]])

        def f(params):
            pose, logit, _ = pol.policy_core(model, encoded, instr,
                                             pol.reset_hidden(model))
            return nm.add(nm.mse(pose, target_pose), nm.bce_with_logits(logit, label))

        res = nm.grad_check(f, model.params.subset(lambda n: not n.startswith(("vit.", "embed.")) and ".self." not in n))
        assert res.max_rel_error < 1e-4


class TestFrozenContract:
    def test_frozen_entries_get_no_gradients(self, rng):
        model = tiny_model()
        for layer in model.decoder_layers():
            layer["cross.alpha"].data = np.asarray(0.4)
        obs = synthetic_obs(rng, 8)
        encoded = pol.encode_observation(model, obs)
        instr = model.instruction("lift the red block")
        pose, logit, _ = pol.policy_core(model, encoded, instr, pol.reset_hidden(model))
        nm.backward(nm.sum_all(nm.add(pose, nm.mul(logit, logit))), model.params)
        for name, t in model.params.items():
            frozen = name.startswith(("vit.", "embed.")) or ".self." in name
            if frozen:
                assert t.grad is None or not np.any(t.grad), name
            elif name.startswith("resampler.") or ".cross." in name or name.startswith("head."):
                assert t.grad is not None, name

    def test_trainable_partition_by_name(self):
        model = tiny_model()
        for name, t in model.params.items():
            expect = (name.startswith(("resampler.", "head."))
                      or ".cross." in name)
            assert t.requires_grad is expect, name


class TestAgents:
    def test_policy_agent_runs_a_chain(self):
        model = pol.init_model(tiny_config(image_hw=32, patch=8), synthetic_stats())
        chain = sim.sample_chain(0, "D", families=["lift"])
        result = sim.rollout_chain(pol.PolicyAgent(model), chain, max_steps_per_task=8)
        assert len(result.successes) == 5
