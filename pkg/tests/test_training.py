import math

import numpy as np
import pytest

from qcbm_em.ansatz import AnsatzSpec, build_circuit, random_theta
from qcbm_em.distributions import bas_target, kl_divergence
from qcbm_em.errors import DomainError, ShapeError
from qcbm_em.mitigation import build_aem, identity_aem
from qcbm_em.simulator import device_preset, exact_distribution
from qcbm_em.training import (
    AdamState,
    KernelMatrix,
    TargetSpec,
    TrainConfig,
    TrainTrace,
    adam_step,
    evaluate,
    final_kl,
    mmd_gradient,
    mmd_loss,
    train,
)

NOISELESS = device_preset("noiseless")


def delta(i, n=16):
    d = np.zeros(n)
    d[i] = 1.0
    return d


class TestKernel:
    def test_entries(self):
        k = KernelMatrix(16, 0.1)
        assert np.all(np.diag(k.entries) == 1.0)
        assert k.entries[0, 1] == pytest.approx(math.exp(-50), rel=1e-12)
        assert np.allclose(k.entries, k.entries.T)

    def test_psd(self):
        for sigma in (0.1, 1.0, 5.0):
            assert np.linalg.eigvalsh(KernelMatrix(16, sigma).entries).min() > -1e-10

    def test_bad_sigma(self):
        with pytest.raises(DomainError):
            KernelMatrix(16, 0.0)


class TestMMD:
    def test_disjoint_deltas(self):
        assert mmd_loss(delta(0), delta(1), KernelMatrix()) == pytest.approx(2 - 2 * math.exp(-50), abs=1e-15)

    def test_wide_kernel_blind(self):
        assert mmd_loss(delta(0), delta(15), KernelMatrix(16, 1e6)) == pytest.approx(0.0, abs=1e-9)

    def test_self_zero(self):
        p = bas_target()
        assert mmd_loss(p, p, KernelMatrix()) == 0.0

    def test_narrow_kernel_is_squared_distance(self):
        rng = np.random.default_rng(0)
        k = KernelMatrix()
        for _ in range(20):
            q, p = rng.dirichlet(np.ones(16)), rng.dirichlet(np.ones(16))
            assert mmd_loss(q, p, k) == pytest.approx(np.sum((q - p) ** 2), abs=1e-15)

    def test_expanded_form(self):
        rng = np.random.default_rng(1)
        k = KernelMatrix(16, 2.0)
        q, p = rng.dirichlet(np.ones(16)), rng.dirichlet(np.ones(16))
        e = k.entries
        assert mmd_loss(q, p, k) == pytest.approx(q @ e @ q - 2 * q @ e @ p + p @ e @ p, abs=1e-12)

    def test_shape(self):
        with pytest.raises(ShapeError):
            mmd_loss(np.ones(8) / 8, np.ones(8) / 8, KernelMatrix())


def finite_difference(theta, spec, device, aem, p, kernel, h=1e-5):
    def loss(th):
        return mmd_loss(evaluate(th, spec, device, aem, None, None)[1], p, kernel)

    g = np.zeros_like(theta)
    for s in range(theta.size):
        e = np.zeros_like(theta)
        e[s] = h
        g[s] = (loss(theta + e) - loss(theta - e)) / (2 * h)
    return g


class TestGradient:
    @pytest.mark.parametrize("layout", ["dc2", "dc3_star"])
    def test_matches_finite_difference(self, layout):
        spec, p = AnsatzSpec(4, layout), bas_target()
        kernel, aem = KernelMatrix(16, 0.1), identity_aem()
        rng = np.random.default_rng(7)
        for _ in range(20):
            theta = random_theta(spec, rng)
            exact = mmd_gradient(theta, spec, NOISELESS, p, kernel, aem, shots=None)
            np.testing.assert_allclose(exact, finite_difference(theta, spec, NOISELESS, aem, p, kernel),
                                       atol=1e-7)

    def test_noisy_mitigated_matches_finite_difference(self):
        spec, p = AnsatzSpec(), bas_target()
        device = device_preset("P_B")
        aem = build_aem("hw", spec, device, shots=None, timestamp="t")
        kernel = KernelMatrix(16, 1.0)
        rng = np.random.default_rng(8)
        for _ in range(3):
            theta = random_theta(spec, rng)
            np.testing.assert_allclose(mmd_gradient(theta, spec, device, p, kernel, aem, shots=None),
                                       finite_difference(theta, spec, device, aem, p, kernel), atol=1e-7)

    def test_zero_at_optimum(self):
        spec = AnsatzSpec()
        theta = random_theta(spec, np.random.default_rng(3))
        p = exact_distribution(build_circuit(spec, theta))
        g = mmd_gradient(theta, spec, NOISELESS, p, KernelMatrix(), identity_aem(), shots=None)
        assert np.abs(g).max() < 1e-12

    def test_final_rz_has_no_gradient(self):
        spec = AnsatzSpec()
        theta = random_theta(spec, np.random.default_rng(4))
        g = mmd_gradient(theta, spec, NOISELESS, bas_target(), KernelMatrix(), identity_aem(), shots=None)
        last_rz = [spec.layer_slices[2].start + 2 * q + 1 for q in range(4)]
        assert np.abs(g[last_rz]).max() < 1e-12
        assert np.abs(g).max() > 1e-4

    def test_sampled_reproducible(self):
        spec = AnsatzSpec()
        theta = random_theta(spec, np.random.default_rng(5))
        args = (theta, spec, NOISELESS, bas_target(), KernelMatrix(), identity_aem())
        a = mmd_gradient(*args, shots=512, seed=9, step=3)
        assert np.array_equal(a, mmd_gradient(*args, shots=512, seed=9, step=3))
        assert not np.array_equal(a, mmd_gradient(*args, shots=512, seed=9, step=4))


class TestAdam:
    def test_first_step_is_signed_alpha(self):
        state = AdamState.zeros(3, alpha=0.25)
        theta, state = adam_step(state, np.array([2.0, -0.5, 0.0]), np.zeros(3))
        np.testing.assert_allclose(theta, [-0.25, 0.25, 0.0], atol=1e-7)
        assert state.step_count == 1

    def test_moments(self):
        state = AdamState.zeros(1, alpha=0.1)
        g = np.array([1.0])
        _, state = adam_step(state, g, np.zeros(1))
        _, state = adam_step(state, g, np.zeros(1))
        assert state.first_moment[0] == pytest.approx(0.19)
        assert state.second_moment[0] == pytest.approx(0.001999)

    def test_constant_gradient_steps(self):
        # bias correction makes every step exactly alpha for a constant gradient
        state, theta = AdamState.zeros(2, alpha=0.1), np.zeros(2)
        for t in range(1, 6):
            theta, state = adam_step(state, np.array([3.0, -3.0]), theta)
            np.testing.assert_allclose(theta, [-0.1 * t, 0.1 * t], atol=1e-7)

    def test_shape(self):
        with pytest.raises(ShapeError):
            adam_step(AdamState.zeros(3), np.zeros(2), np.zeros(3))


class TestTrain:
    def config(self, **kw):
        base = dict(device=NOISELESS, steps=3, shots_per_eval=256, seed=1)
        base.update(kw)
        return TrainConfig(**base)

    def test_deterministic(self):
        a = train(self.config(), identity_aem())
        b = train(self.config(), identity_aem())
        assert np.array_equal(a.losses, b.losses)
        assert all(np.array_equal(x, y) for x, y in zip(a.thetas, b.thetas))
        c = train(self.config(seed=2), identity_aem())
        assert not np.array_equal(a.losses, c.losses)

    def test_zero_steps(self):
        trace = train(self.config(steps=0), identity_aem())
        assert len(trace) == 1 and trace.steps[0].step == 0

    def test_length_and_trace_io(self, tmp_path):
        trace = train(self.config(), identity_aem(), aem_ref="aem/identity.json")
        assert len(trace) == 4
        assert all(s.raw.effective_shots == 256 for s in trace.steps)
        back = TrainTrace.load(trace.save(tmp_path / "trace.jsonl"))
        assert back.aem_ref == "aem/identity.json" and back.config_hash == trace.config_hash
        assert np.array_equal(back.losses, trace.losses)
        assert all(np.array_equal(x, y) for x, y in zip(back.thetas, trace.thetas))

    def test_pretrained_start(self):
        spec = AnsatzSpec()
        init = random_theta(spec, np.random.default_rng(11))
        trace = train(self.config(steps=7, alpha=0.1, init="from_file", init_theta=tuple(init)), identity_aem())
        assert len(trace) == 8
        assert np.array_equal(trace.steps[0].theta, init)
        assert np.abs(trace.steps[1].theta - init).max() <= 0.1 + 1e-9

    def test_exact_training_decreases_loss(self):
        trace = train(self.config(steps=30, exact=True), identity_aem())
        assert trace.losses[-1] < trace.losses[0]
        assert final_kl(trace, bas_target()) < kl_divergence(bas_target(), trace.steps[0].mitigated)

    def test_aem_kind_mismatch(self):
        with pytest.raises(DomainError):
            train(self.config(aem_kind="hw"), identity_aem())

    def test_bad_config(self):
        with pytest.raises(DomainError):
            TrainConfig(steps=-1)
        with pytest.raises(DomainError):
            TrainConfig(init="from_file")

    def test_custom_target(self):
        probs = tuple(np.full(16, 1 / 16))
        trace = train(self.config(target=TargetSpec("custom", custom_probs=probs)), identity_aem())
        assert len(trace) == 4
