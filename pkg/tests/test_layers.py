import numpy as np
import pytest

from hnmc import hmm as hh
from hnmc import layers as ll
from hnmc.hmm import derive_entropic, efb, efb2, efb_cn, random_hmm, random_hmm2, random_hmm_cn
from hnmc.layers import (AffineKernel, ArchitectureSpec, BiRnnLayer, HnmcCnLayer,
                         HnmcLayer, Hnmc2Layer, RnnLayer, TableKernel, build_model,
                         hnmc2_table_layer, hnmc_cn_table_layer, hnmc_table_layer)
from hnmc.tensor import Tensor, fresh_tape


def one_hot(obs, m):
    return np.eye(m)[list(obs)]


def constant_kernel(m, n_in, n_out, value):
    """Kernel whose output is `value` (a vector over out states) for any input."""
    table = np.broadcast_to(np.asarray(value, float), (m, n_in, n_out)).copy()
    return TableKernel(table)


class TestHnmcLayer:
    def test_constant_kernel_rows_equal_normalized_c(self):
        # backward recursion contracts the kernel over its output index, so a
        # constant kernel makes beta uniform and every output row is c/sum(c)
        c = np.array([0.2, 1.3, 0.5])
        layer = HnmcLayer(embedding_dim=2, n_states=3, kernel=constant_kernel(2, 3, 3, c))
        out = layer.forward(Tensor(one_hot([0, 1, 0, 1, 1], 2)))
        want = c / c.sum()
        assert np.abs(out.data - want[None, :]).max() < 1e-12

    def test_single_position_base_case(self):
        rng = np.random.default_rng(0)
        layer = HnmcLayer(embedding_dim=2, n_states=3, rng=rng)
        emb = one_hot([1], 2)
        out = layer.forward(Tensor(emb))
        fresh_tape()
        k = layer.kernel.matrix(Tensor(emb[0])).data
        want = layer.initial_state.data @ k
        want /= want.sum()
        assert np.allclose(out.data[0], want, atol=1e-12)

    def test_table_embedding_matches_efb(self):
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(5):
            p = random_hmm(rng, 3, 3)
            ent = derive_entropic(p)
            layer = hnmc_table_layer(ent)
            obs = [int(rng.integers(0, 3)) for _ in range(6)]
            out = layer.forward(Tensor(one_hot(obs, 3)))
            worst = max(worst, np.abs(out.data - efb(ent, obs)).max())
        assert worst < 1e-8

    def test_outputs_row_stochastic_positive(self):
        layer = HnmcLayer(embedding_dim=4, n_states=5, rng=np.random.default_rng(2))
        out = layer.forward(Tensor(np.random.default_rng(3).normal(size=(7, 4))))
        assert np.allclose(out.data.sum(axis=1), 1.0, atol=1e-10)
        assert out.data.min() > 0.0

    def test_sees_future_positions(self):
        rng = np.random.default_rng(4)
        layer = HnmcLayer(embedding_dim=3, n_states=3, rng=rng)
        emb = rng.normal(size=(6, 3))
        base = layer.forward(Tensor(emb)).data[0].copy()
        emb2 = emb.copy()
        emb2[5] += 1.0
        moved = layer.forward(Tensor(emb2)).data[0]
        assert np.abs(moved - base).max() > 1e-9


class TestHnmc2Layer:
    def test_kernel_ignoring_first_pair_index_collapses_to_order1(self):
        rng = np.random.default_rng(5)
        m, n = 3, 3
        base = rng.uniform(0.2, 1.5, size=(m, n, n))
        table2 = np.zeros((m, n * n, n))
        for y in range(m):
            table2[y] = np.broadcast_to(base[y][None, :, :], (n, n, n)).reshape(n * n, n)
        layer2 = Hnmc2Layer(embedding_dim=m, n_states=n, kernel=TableKernel(table2))
        layer1 = HnmcLayer(embedding_dim=m, n_states=n, kernel=TableKernel(base))
        obs = [int(rng.integers(0, m)) for _ in range(6)]
        emb = Tensor(one_hot(obs, m))
        assert np.abs(layer2.forward(emb).data - layer1.forward(emb).data).max() < 1e-8

    def test_constant_kernel_uniform_output(self):
        n = 3
        layer = Hnmc2Layer(embedding_dim=2, n_states=n,
                           kernel=constant_kernel(2, n * n, n, np.full(n, 0.7)))
        out = layer.forward(Tensor(one_hot([0, 1, 1, 0], 2)))
        assert np.abs(out.data - 1.0 / n).max() < 1e-12

    def test_table_embedding_matches_efb2(self):
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(5):
            p = random_hmm2(rng, 3, 2)
            ent = derive_entropic(p)
            layer = hnmc2_table_layer(ent, p.trans2)
            obs = [int(rng.integers(0, 2)) for _ in range(5)]
            out = layer.forward(Tensor(one_hot(obs, 2)))
            worst = max(worst, np.abs(out.data - efb2(ent, p.trans2, obs)).max())
        assert worst < 1e-8

    def test_single_position_falls_back_to_first_step_kernel(self):
        rng = np.random.default_rng(7)
        p = random_hmm2(rng, 3, 2)
        ent = derive_entropic(p)
        layer = hnmc2_table_layer(ent, p.trans2)
        out = layer.forward(Tensor(one_hot([1], 2)))
        # exact posterior for T=1 is the single-symbol posterior row
        want = ent.obs_post[1]
        assert np.allclose(out.data[0], want, atol=1e-10)


class TestHnmcCnLayer:
    def test_degenerates_to_hnmc_when_in_kernel_is_one(self):
        # extra noise dependencies vanish: kernel_in == 1 and kernel_out
        # carrying posterior-row times reversed transition over pi
        rng = np.random.default_rng(8)
        p = random_hmm(rng, 3, 3)
        ent = derive_entropic(p)
        m, n = ent.obs_post.shape
        rev = hh.reverse_transition(ent.pi, ent.trans)
        table_out = np.zeros((m, n, n))
        for y in range(m):
            table_out[y] = (ent.obs_post[y][:, None] * rev / ent.pi[None, :]).T
        layer = HnmcCnLayer(embedding_dim=m, n_states=n,
                            kernel_in=constant_kernel(m, n, n, np.ones(n)),
                            kernel_out=TableKernel(table_out),
                            initial_state=ent.pi)
        obs = [int(rng.integers(0, m)) for _ in range(6)]
        emb = Tensor(one_hot(obs, m))
        want = hnmc_table_layer(ent).forward(emb).data
        assert np.abs(layer.forward(emb).data - want).max() < 1e-8
        assert np.abs(layer.forward(emb).data - efb(ent, obs)).max() < 1e-8

    def test_single_position_is_normalized_first_kernel(self):
        rng = np.random.default_rng(9)
        layer = HnmcCnLayer(embedding_dim=2, n_states=3, rng=rng)
        emb = one_hot([0], 2)
        out = layer.forward(Tensor(emb))
        fresh_tape()
        kj = layer.kernel_out.matrix(Tensor(emb[0])).data
        want = layer.initial_state.data @ kj
        want /= want.sum()
        assert np.allclose(out.data[0], want, atol=1e-12)

    def test_table_embedding_matches_efb_cn(self):
        rng = np.random.default_rng(10)
        worst = 0.0
        for _ in range(5):
            p = random_hmm_cn(rng, 3, 2)
            ent = derive_entropic(p)
            layer = hnmc_cn_table_layer(ent)
            obs = [int(rng.integers(0, 2)) for _ in range(5)]
            out = layer.forward(Tensor(one_hot(obs, 2)))
            worst = max(worst, np.abs(out.data - efb_cn(ent, obs)).max())
        assert worst < 1e-8


class TestRecurrentLayers:
    def test_zero_weights_zero_states(self):
        layer = RnnLayer(3, 4, np.random.default_rng(0))
        for _, p in layer.named_parameters():
            p.data[...] = 0.0
        out = layer.forward(Tensor(np.random.default_rng(1).normal(size=(5, 3))))
        assert np.all(out.data == 0.0)

    def test_rnn_is_causal(self):
        rng = np.random.default_rng(11)
        layer = RnnLayer(3, 4, rng)
        emb = rng.normal(size=(6, 3))
        base = layer.forward(Tensor(emb)).data.copy()
        emb2 = emb.copy()
        emb2[4] += 0.5
        moved = layer.forward(Tensor(emb2)).data
        assert np.allclose(moved[:4], base[:4], atol=1e-15)
        assert np.abs(moved[4:] - base[4:]).max() > 1e-9

    def test_birnn_sees_the_past_from_the_end(self):
        rng = np.random.default_rng(12)
        layer = BiRnnLayer(3, 4, rng)
        emb = rng.normal(size=(6, 3))
        base = layer.forward(Tensor(emb)).data.copy()
        emb2 = emb.copy()
        emb2[0] += 0.5
        moved = layer.forward(Tensor(emb2)).data
        assert np.abs(moved[5] - base[5]).max() > 1e-9
        assert base.shape == (6, 8)


class TestBuildModel:
    def test_rnn_arch1_parameter_count(self):
        d, labels = 5, 4
        model = build_model(ArchitectureSpec("rnn", 1, labels, d))
        assert model.n_parameters() == d * labels + labels * labels + labels

    def test_hnmc_matches_rnn_parameter_count_at_arch1(self):
        d, labels = 6, 5
        hn = build_model(ArchitectureSpec("hnmc", 1, labels, d))
        rn = build_model(ArchitectureSpec("rnn", 1, labels, d))
        assert abs(hn.n_parameters() - rn.n_parameters()) <= 2 * labels

    def test_hnmc_arch3_second_layer_consumes_hidden_width(self):
        model = build_model(ArchitectureSpec("hnmc", 3, 4, 7, hidden_size=32))
        second = model.blocks[1].layer
        assert second.kernel.obs_weight.shape == (4, 32)

    def test_birnn_arch2_head_width(self):
        model = build_model(ArchitectureSpec("birnn", 2, 4, 7, hidden_size=20))
        head = model.blocks[1]
        assert head.weight.shape == (4, 40)

    def test_birnn_arch1_projects_to_labels(self):
        model = build_model(ArchitectureSpec("birnn", 1, 5, 7))
        out = model.forward(np.random.default_rng(0).normal(size=(4, 7)))
        assert out.shape == (4, 5)

    @pytest.mark.parametrize("kind", ll.MODEL_KINDS)
    @pytest.mark.parametrize("arch", [1, 2, 3])
    def test_all_combinations_forward(self, kind, arch):
        spec = ArchitectureSpec(kind, arch, 3, 4, hidden_size=5)
        model = build_model(spec, np.random.default_rng(13))
        out = model.forward(np.random.default_rng(14).normal(size=(5, 4)).astype(float))
        assert out.shape == (5, 3)
        assert np.all(np.isfinite(out.data))

    def test_invalid_combinations(self):
        with pytest.raises(ValueError):
            ArchitectureSpec("lstm", 1, 3, 4)
        with pytest.raises(ValueError):
            ArchitectureSpec("rnn", 4, 3, 4)
        with pytest.raises(ValueError):
            ArchitectureSpec("rnn", 2, 3, 4)  # missing hidden size

    def test_parameter_groups_follow_stages(self):
        model = build_model(ArchitectureSpec("hnmc", 2, 3, 4, hidden_size=6))
        groups = model.parameter_groups()
        assert len(groups) == 2
        names = [n for n, _ in model.named_parameters()]
        assert any(n.startswith("stage0.layer.kernel") for n in names)
        assert any(n.startswith("stage1.") for n in names)


class TestAffineKernelShapes:
    def test_positive_outputs_all_activations(self):
        rng = np.random.default_rng(15)
        for act in ("melu", "exp", "sigmoid"):
            k = AffineKernel(4, 3, 3, act, rng)
            out = k.matrix(Tensor(rng.normal(size=4)))
            assert out.shape == (3, 3)
            assert out.data.min() > 0.0
