import numpy as np
import pytest
from scipy.stats import chisquare

from byteveil.attack import (
    AttackConfig,
    NoBudget,
    attack,
    build_adversarial_binary,
    compute_budget,
    random_attack,
    select_byte,
)
from byteveil.corpus import build_pe_bytes
from byteveil.encoding import to_input_vector
from byteveil.model import Hyper, classify, f32_representable, forward, init_params
from byteveil.pe import RawBinary

from conftest import TOY_HYPER


def crafted_model(pad_weight=1.0, fill_weight=0.5):
    """A hand-built detector whose score is driven by the mean first-coord
    of embedded bytes: byte 0 embeds to pad_weight, all others to
    fill_weight. With pad_weight > fill_weight, zero padding maximizes the
    score and any random fill lowers it."""
    hyper = Hyper(d=12288, window=512, stride=512, n_filters=1, h=1)
    params = init_params(hyper, np.random.default_rng(0))
    for _, arr in params.tensors():
        arr[...] = 0.0
    params.embedding[0, 0] = pad_weight
    params.embedding[1:, 0] = fill_weight
    params.conv_relu_w[0, :, 0] = 1.0 / 128.0  # exactly representable
    params.fc_w[0, 0] = 1.0
    params.out_w[0] = 1.0
    for name, arr in params.tensors():
        np.testing.assert_array_equal(arr, f32_representable(arr))
    return params


def detected_malware(params, labeled):
    """First malware sample the model flags, as (binary, vec)."""
    for binary, y in labeled:
        if y != 1:
            continue
        vec = to_input_vector(binary, params.hyper.d)
        f, _ = forward(params, vec)
        if f >= 0.5:
            return binary, vec
    raise AssertionError("no detected malware sample in the toy corpus")


class TestComputeBudget:
    def test_paper_scale_values(self):
        assert compute_budget(990_000, 10_000, 10**6) == 10_000
        assert compute_budget(999_995, 10_000, 10**6) == 5

    def test_file_filling_input_is_rejected(self):
        with pytest.raises(NoBudget):
            compute_budget(10**6, 10_000, 10**6)
        with pytest.raises(NoBudget):
            compute_budget(2_000_000, 10_000, 10**6)

    def test_zero_qmax_is_rejected(self):
        with pytest.raises(NoBudget):
            compute_budget(100, 0, 1024)

    def test_partial_budget(self):
        assert compute_budget(1000, 500, 1024) == 24


class TestSelectByte:
    def build_m(self, assignments, e=8, behind=(-1.0, 0.0)):
        """Embedding matrix where unassigned rows sit behind the direction."""
        M = np.zeros((256, e))
        M[:, 0] = behind[0]
        M[:, 1] = behind[1]
        for idx, coords in assignments.items():
            M[idx] = 0.0
            M[idx, : len(coords)] = coords
        return M

    def test_two_candidate_example(self):
        # Direction +x: a=(1, 0.5) has d=0.5; b=(2, 0.1) has d=0.1; c behind.
        z = np.zeros(8)
        w = np.zeros(8)
        w[0] = 2.0
        M = self.build_m({3: (1.0, 0.5), 7: (2.0, 0.1), 250: (-1.0, 0.0)})
        assert select_byte(z, w, M, current=0) == 7

    def test_point_on_the_line_wins(self):
        z = np.zeros(8)
        w = np.zeros(8)
        w[0] = 1.0
        M = self.build_m({10: (3.0, 0.0), 40: (2.0, 0.4)})
        assert select_byte(z, w, M, current=0) == 10

    def test_all_candidates_behind_keeps_current(self):
        z = np.zeros(8)
        w = np.zeros(8)
        w[0] = 1.0
        M = self.build_m({})  # every row has s = -1
        assert select_byte(z, w, M, current=123) == 123

    def test_zero_gradient_keeps_current(self):
        M = np.random.default_rng(0).normal(size=(256, 8))
        assert select_byte(np.zeros(8), np.zeros(8), M, current=99) == 99

    def test_distance_tie_prefers_lower_byte(self):
        z = np.zeros(8)
        w = np.zeros(8)
        w[0] = 1.0
        M = self.build_m({9: (1.0, -0.5), 4: (1.0, 0.5)})
        assert select_byte(z, w, M, current=0) == 4

    def test_offset_origin(self):
        # Same geometry as the two-candidate example, shifted away from 0.
        rng = np.random.default_rng(1)
        z = rng.normal(size=8)
        w = np.zeros(8)
        w[0] = 1.5
        M = self.build_m({}, behind=(0.0, 0.0))
        M[:] = z + M  # all rows exactly at z: s = 0, infeasible
        M[17] = z.copy()
        M[17, 0] += 2.0
        M[17, 1] += 0.3
        M[60] = z.copy()
        M[60, 0] += 1.0
        M[60, 1] += 0.8
        assert select_byte(z, w, M, current=5) == 17


class TestAttackConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            AttackConfig(q_max=-1)
        with pytest.raises(ValueError):
            AttackConfig(q_max=10, iterations=0)
        with pytest.raises(ValueError):
            AttackConfig(q_max=10, refresh="sometimes")


class TestGradientAttack:
    def test_constraints_and_invariants(self, toy_trained, toy_labeled):
        binary, vec = detected_malware(toy_trained, toy_labeled)
        k = vec.informative_len
        config = AttackConfig(q_max=2048, iterations=5, seed=7)
        res = attack(toy_trained, vec, config)
        budget = compute_budget(k, config.q_max, TOY_HYPER.d)

        assert res.f_final <= res.f_initial
        assert res.evaded == (res.f_final < 0.5)
        assert res.q in (0, budget)
        assert len(res.injected_bytes) == res.q
        assert 1 <= res.iterations_used <= config.iterations
        assert len(res.f_trace) == res.iterations_used
        adv = build_adversarial_binary(binary, res)
        assert adv.data[: binary.length] == binary.data
        assert adv.length == binary.length + res.q

    def test_deterministic(self, toy_trained, toy_labeled):
        _, vec = detected_malware(toy_trained, toy_labeled)
        config = AttackConfig(q_max=512, iterations=3, seed=9)
        a = attack(toy_trained, vec, config)
        b = attack(toy_trained, vec, config)
        assert a.f_initial == b.f_initial
        assert a.f_final == b.f_final
        assert a.f_trace == b.f_trace
        assert a.injected_bytes == b.injected_bytes

    def test_early_stop_on_evasion(self, toy_trained, toy_labeled):
        _, vec = detected_malware(toy_trained, toy_labeled)
        res = attack(toy_trained, vec, AttackConfig(q_max=2048, iterations=20, seed=0))
        if res.evaded:
            assert all(f >= 0.5 for f in res.f_trace[:-1])
            assert res.f_trace[-1] < 0.5

    def test_single_iteration_beats_random_init(self, toy_trained, toy_labeled):
        _, vec = detected_malware(toy_trained, toy_labeled)
        config = AttackConfig(q_max=1024, iterations=1, seed=3)
        res = attack(toy_trained, vec, config)

        k = vec.informative_len
        q = compute_budget(k, config.q_max, TOY_HYPER.d)
        values = vec.values.copy()
        rng = np.random.default_rng(config.seed)
        values[k : k + q] = rng.integers(0, 256, size=q, dtype=np.uint8)
        from byteveil.encoding import InputVector

        f_after_init, _ = forward(
            toy_trained, InputVector(values=values, informative_len=k)
        )
        assert res.f_final <= f_after_init + 1e-12

    def test_per_byte_refresh_mode(self, toy_trained, toy_labeled):
        _, vec = detected_malware(toy_trained, toy_labeled)
        config = AttackConfig(q_max=8, iterations=2, seed=1, refresh="per-byte")
        res = attack(toy_trained, vec, config)
        assert res.f_final <= res.f_initial
        again = attack(toy_trained, vec, config)
        assert res.f_final == again.f_final
        assert res.injected_bytes == again.injected_bytes

    def test_no_budget_raises(self, toy_trained):
        big = RawBinary(build_pe_bytes(TOY_HYPER.d + 512, np.random.default_rng(0)))
        vec = to_input_vector(big, TOY_HYPER.d)
        with pytest.raises(NoBudget):
            attack(toy_trained, vec, AttackConfig(q_max=100))

    def test_zero_gradient_model_is_a_no_op(self):
        hyper = Hyper(d=1024, window=128, stride=128, n_filters=2, h=3)
        params = init_params(hyper, np.random.default_rng(0))
        for _, arr in params.tensors():
            arr[...] = 0.0
        binary = RawBinary(build_pe_bytes(600, np.random.default_rng(1)))
        vec = to_input_vector(binary, hyper.d)
        res = attack(params, vec, AttackConfig(q_max=200, iterations=3, seed=0))
        assert res.f_initial == 0.5
        assert res.f_final == 0.5
        assert res.q == 0
        assert res.injected_bytes == b""
        assert not res.evaded


class TestRandomAttack:
    def test_reproducible(self, toy_trained, toy_labeled):
        _, vec = detected_malware(toy_trained, toy_labeled)
        config = AttackConfig(q_max=512, seed=11)
        a = random_attack(toy_trained, vec, config)
        b = random_attack(toy_trained, vec, config)
        assert a.injected_bytes == b.injected_bytes
        assert a.f_final == b.f_final
        assert a.iterations_used == 1

    def test_keeps_original_when_fill_hurts(self):
        # Padding byte embeds low, everything else high: random fill raises f.
        params = crafted_model(pad_weight=0.0, fill_weight=0.5)
        binary = RawBinary(build_pe_bytes(2048, np.random.default_rng(2)))
        vec = to_input_vector(binary, params.hyper.d)
        res = random_attack(params, vec, AttackConfig(q_max=10_240, seed=0))
        assert res.q == 0
        assert res.injected_bytes == b""
        assert res.f_final == res.f_initial

    def test_injected_bytes_uniform(self):
        # Zero padding scores highest, so the random fill is always accepted
        # and the full 10,240-byte draw is returned for inspection.
        params = crafted_model()
        binary = RawBinary(build_pe_bytes(2048, np.random.default_rng(3)))
        vec = to_input_vector(binary, params.hyper.d)
        res = random_attack(params, vec, AttackConfig(q_max=10_240, seed=5))
        assert res.q == 10_240
        counts = np.bincount(
            np.frombuffer(res.injected_bytes, dtype=np.uint8), minlength=256
        )
        assert counts.sum() == res.q
        assert chisquare(counts).pvalue > 0.001

    def test_no_budget_raises(self, toy_trained):
        big = RawBinary(build_pe_bytes(TOY_HYPER.d + 512, np.random.default_rng(4)))
        vec = to_input_vector(big, TOY_HYPER.d)
        with pytest.raises(NoBudget):
            random_attack(toy_trained, vec, AttackConfig(q_max=64))


class TestPipeline:
    def test_classify_reproduces_f_final(self, toy_trained, toy_labeled):
        # Budget small enough that the adversarial file still fits within d.
        for mode_fn, seed in ((attack, 0), (random_attack, 1)):
            binary, vec = detected_malware(toy_trained, toy_labeled)
            room = TOY_HYPER.d - vec.informative_len
            config = AttackConfig(q_max=min(48, room), iterations=3, seed=seed)
            res = mode_fn(toy_trained, vec, config)
            adv = build_adversarial_binary(binary, res)
            assert adv.length <= TOY_HYPER.d
            _, f = classify(toy_trained, adv)
            assert f == res.f_final

    def test_zero_injection_returns_original(self, toy_labeled):
        from byteveil.attack import AttackResult

        binary = toy_labeled[0][0]
        res = AttackResult(evaded=False, f_initial=0.9, f_final=0.9)
        assert build_adversarial_binary(binary, res).data == binary.data
