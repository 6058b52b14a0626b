import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgda import tensor as T
from dgda.errors import CheckpointError, DataValidationError, ShapeError
from dgda.graph import Graph, augment, normalize_adjacency
from dgda.model import (
    BASELINE_FAMILIES,
    FAMILIES,
    GROUP_A,
    GROUP_B,
    DgdaParams,
    LossWeights,
    ModelDims,
    decode_graph,
    domain_loss,
    encode_group,
    entropy_regularizer,
    extract_features,
    forward,
    gcn_layer,
    graph_embedding,
    kl_to_standard_normal,
    label_loss,
    make_batch,
    noise_loss,
    predict,
    predict_proba,
    reconstruction_loss,
    total_loss,
)
from dgda.optim import Optimizer
from dgda.tensor import Tape, Tensor

DIMS = ModelDims(in_dim=3, hidden=5, dim_zd=3, dim_zy=4, dim_zo=2, decoder_hidden=4,
                 decoder_out=3, classifier_hidden=4)


def random_graph(seed, n=6, domain="source", label=1, width=3, p=0.4):
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < p, 1)
    a = (upper | upper.T).astype(float)
    return Graph(a, rng.standard_normal((n, width)), label=label, domain=domain)


@pytest.fixture
def params():
    return DgdaParams.init(DIMS, seed=0)


class TestParams:
    def test_families_partition(self, params):
        fams = {params.family[n] for n in params}
        assert fams == set(FAMILIES)
        assert set(GROUP_A) | set(GROUP_B) == set(FAMILIES)
        assert set(GROUP_A) & set(GROUP_B) == {"phi_f"}

    def test_default_hidden_width(self):
        dims = ModelDims(in_dim=4)
        p = DgdaParams.init(dims, 0)
        g = random_graph(0, width=4)
        h = extract_features(p, normalize_adjacency(g), g.features)
        assert h.shape == (6, 256)

    def test_init_seeded(self):
        a, b = DgdaParams.init(DIMS, 5), DgdaParams.init(DIMS, 5)
        assert all(np.array_equal(a[n].data, b[n].data) for n in a)

    def test_save_load_bitwise(self, params, tmp_path):
        params["c_y.b1"].data[:] = 0.1 + 1e-17
        params.save(tmp_path / "p.json")
        back = DgdaParams.load(tmp_path / "p.json")
        assert all(np.array_equal(params[n].data, back[n].data) for n in params)

    def test_load_errors(self, tmp_path):
        with pytest.raises(CheckpointError):
            DgdaParams.load(tmp_path / "missing.json")
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(CheckpointError):
            DgdaParams.load(tmp_path / "bad.json")


class TestLayers:
    def test_gcn_identity(self):
        x = np.random.default_rng(0).standard_normal((3, 3))
        out = gcn_layer(np.eye(3), Tensor(x), Tensor(np.eye(3)), activation=False)
        assert np.array_equal(out.data, x)

    def test_gcn_two_node_hand_value(self):
        a_hat = np.array([[0.5, 0.5], [0.5, 0.5]])
        out = gcn_layer(a_hat, Tensor([[1.0], [3.0]]), Tensor([[1.0]]), activation=True)
        assert np.array_equal(out.data, [[2.0], [2.0]])

    def test_gcn_relu_zeroes_negatives(self):
        out = gcn_layer(np.eye(2), Tensor([[-1.0], [2.0]]), Tensor([[1.0]]))
        assert np.array_equal(out.data, [[0.0], [2.0]])

    def test_gcn_shape_error(self):
        with pytest.raises(ShapeError):
            gcn_layer(np.eye(2), Tensor(np.ones((2, 3))), Tensor(np.ones((2, 1))))

    def test_extractor_zero_input(self, params):
        h = extract_features(params, np.eye(4), np.zeros((4, 3)))
        assert not h.data.any()

    def test_extractor_equivariance(self, params):
        g = random_graph(1)
        perm = np.random.default_rng(1).permutation(6)
        gp = g.permuted(perm)
        h = extract_features(params, normalize_adjacency(g), g.features).data
        hp = extract_features(params, normalize_adjacency(gp), gp.features).data
        assert np.allclose(hp, h[perm], atol=1e-12)


class TestEncoder:
    def test_zero_sigma_weights(self, params):
        params["e_y.W_sigma"].data[:] = 0
        g = random_graph(2)
        a_hat = normalize_adjacency(g)
        h = extract_features(params, a_hat, g.features)
        eps = np.random.default_rng(0).standard_normal((6, DIMS.dim_zy))
        lg = encode_group(params, "y", a_hat, h, eps=eps)
        assert not lg.log_sigma.data.any()
        assert np.allclose(lg.z.data, lg.mu.data + eps, atol=1e-15)

    def test_deterministic_mode(self, params):
        g = random_graph(3)
        a_hat = normalize_adjacency(g)
        h = extract_features(params, a_hat, g.features)
        for seed in (0, 1):
            lg = encode_group(params, "d", a_hat, h, noise_seed=seed, deterministic=True)
            assert lg.z is lg.mu

    def test_same_seed_same_sample(self, params):
        g = random_graph(4)
        a_hat = normalize_adjacency(g)
        h = extract_features(params, a_hat, g.features)
        z1 = encode_group(params, "o", a_hat, h, noise_seed=7).z.data
        z2 = encode_group(params, "o", a_hat, h, noise_seed=7).z.data
        assert np.array_equal(z1, z2)

    def test_log_sigma_clamped(self, params):
        params["e_d.W_sigma"].data[:] = 1e3
        g = random_graph(5)
        a_hat = normalize_adjacency(g)
        h = extract_features(params, a_hat, np.abs(g.features) + 1)
        lg = encode_group(params, "d", a_hat, h, noise_seed=0)
        assert lg.log_sigma.data.max() <= 10.0

    def test_unknown_group(self, params):
        with pytest.raises(ValueError):
            encode_group(params, "q", np.eye(1), Tensor(np.ones((1, 5))))


class TestKL:
    def test_prior_equals_posterior(self):
        assert kl_to_standard_normal(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 2)))).item() == 0.0

    def test_single_entry_unit_mean(self):
        assert abs(kl_to_standard_normal(Tensor([[1.0]]), Tensor([[0.0]])).item() - 0.5) < 1e-12

    def test_single_entry_log_two_sigma(self):
        got = kl_to_standard_normal(Tensor([[0.0]]), Tensor([[math.log(2)]])).item()
        assert got == pytest.approx(0.5 * (4 - 1 - 2 * math.log(2)), abs=1e-12)

    def test_per_node_mean(self):
        mu = Tensor(np.ones((4, 2)))
        assert kl_to_standard_normal(mu, Tensor(np.zeros((4, 2)))).item() == pytest.approx(1.0)
        assert kl_to_standard_normal(mu, Tensor(np.zeros((4, 2))), reduction="sum").item() == pytest.approx(4.0)
        assert kl_to_standard_normal(mu, Tensor(np.zeros((4, 2))),
                                     reduction="element_mean").item() == pytest.approx(0.5)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_non_negative(self, rows, cols, seed):
        rng = np.random.default_rng(seed)
        mu = Tensor(rng.standard_normal((rows, cols)) * 3)
        ls = Tensor(rng.uniform(-10, 10, (rows, cols)))
        assert kl_to_standard_normal(mu, ls).item() >= -1e-12


class TestDecoderAndLosses:
    def test_zero_output_weights_give_half(self, params):
        params["d_g.W_g1"].data[:] = 0
        z = [Tensor(np.random.default_rng(i).standard_normal((4, k))) for i, k in enumerate((3, 4, 2))]
        assert np.array_equal(decode_graph(params, *z).data, np.full((4, 4), 0.5))

    def test_symmetric_and_matches_direct_evaluation(self, params):
        rng = np.random.default_rng(6)
        z = [Tensor(rng.standard_normal((3, k))) for k in (3, 4, 2)]
        p = decode_graph(params, *z).data
        assert np.array_equal(p, p.T)
        cat = np.hstack([t.data for t in z])
        zg = np.maximum(cat @ params["d_g.W_g0"].data, 0) @ params["d_g.W_g1"].data
        for i in range(3):
            for j in range(3):
                assert p[i, j] == pytest.approx(1 / (1 + math.exp(-zg[i] @ zg[j])), rel=1e-12)

    def test_row_mismatch(self, params):
        with pytest.raises(ShapeError):
            graph_embedding(params, Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4))), Tensor(np.ones((2, 2))))

    def test_uniform_half_reconstruction_is_ln2(self):
        a = random_graph(7).adjacency
        got = reconstruction_loss(Tensor(np.zeros_like(a)), a, weighted=False).item()
        assert abs(got - math.log(2)) < 1e-12
        # the positive weighting rescales both halves equally at logit 0
        assert abs(reconstruction_loss(Tensor(np.zeros_like(a)), a).item() - math.log(2)) < 1e-12

    def test_near_perfect_reconstruction(self):
        a = random_graph(8).adjacency
        p = np.where(a > 0, 0.999, 0.001)
        assert reconstruction_loss(Tensor(np.log(p / (1 - p))), a).item() <= 0.01

    def test_flipped_probabilities_maximize_loss(self):
        a = random_graph(9).adjacency
        rng = np.random.default_rng(9)
        p = rng.uniform(0.05, 0.95, a.shape)
        p = (p + p.T) / 2
        good = np.where(a > 0, np.maximum(p, 1 - p), np.minimum(p, 1 - p))
        bad = 1 - good
        logit = lambda q: Tensor(np.log(q / (1 - q)))  # noqa: E731
        assert reconstruction_loss(logit(bad), a).item() > reconstruction_loss(logit(good), a).item()

    def test_domain_loss_values(self, params):
        sizes = [2, 2]
        params["c_d.W"].data[:] = 0
        assert domain_loss(params, Tensor(np.ones((4, 3))), sizes, ["source", "target"]).item() == \
            pytest.approx(math.log(2), abs=1e-12)
        params["c_d.W"].data[:] = 20.0
        z = np.vstack([-np.ones((2, 3)) / 3, np.ones((2, 3)) / 3])
        assert domain_loss(params, Tensor(z), sizes, ["source", "target"]).item() < 1e-8

    def test_domain_loss_indistinguishable_inputs(self, params):
        z = Tensor(np.ones((4, 3)))
        for b in np.linspace(-3, 3, 13):
            params["c_d.b"].data[:] = b
            assert domain_loss(params, z, [2, 2], ["source", "target"]).item() >= math.log(2) - 1e-12

    def test_label_loss_values(self, params):
        params["c_y.W1"].data[:] = 0
        params["c_y.b1"].data[:] = 0
        assert label_loss(params, Tensor(np.ones((3, 4))), [3], [1]).item() == pytest.approx(math.log(2))
        params["c_y.b1"].data[:] = 20
        assert label_loss(params, Tensor(np.ones((3, 4))), [3], [1]).item() < 1e-8

    def test_label_loss_contract(self, params):
        with pytest.raises(DataValidationError):
            label_loss(params, Tensor(np.ones((3, 4))), [3], [None])
        with pytest.raises(DataValidationError):
            label_loss(params, Tensor(np.ones((3, 4))), [3], [1], domains=["target"])

    def test_noise_loss_values(self, params):
        z = Tensor(np.ones((4, 2)))
        params["d_o.W_n1"].data[:] = 0
        mask = np.zeros((4, 4))
        mask[0, 1] = mask[1, 0] = -1
        assert noise_loss(params, z, mask, weighted=False).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_noise_loss_no_perturbation_saturated(self):
        from dgda.model import pairwise_bce
        assert pairwise_bce(Tensor(np.full((4, 4), -20.0)), np.zeros((4, 4))).item() < 1e-8

    def test_entropy_at_zero(self):
        z = Tensor([[0.0]])
        one_group = entropy_regularizer(z, z, z).item() / 3
        assert abs(one_group - 0.5 * math.log(0.5)) < 1e-12

    def test_entropy_limits(self):
        big = Tensor(np.full((2, 2), 50.0))
        assert abs(entropy_regularizer(big, big, big).item()) < 1e-20
        zmin = Tensor([[math.log(1 / (math.e - 1))]])
        assert entropy_regularizer(zmin, zmin, zmin).item() / 3 == pytest.approx(-1 / math.e, abs=1e-12)


def mixed_batch(seed=0, augmented=False):
    src = random_graph(seed, label=1)
    tgt = random_graph(seed + 100, domain="target", label=None)
    if augmented:
        return make_batch([augment(src, 0.2, 0.2, seed), augment(tgt, 0.2, 0.2, seed + 1)])
    return make_batch([src, tgt])


class TestTotalLoss:
    def test_breakdown_bookkeeping(self, params):
        w = LossWeights(0.7, 1.3, 0.2, 4.0)
        root, bd = total_loss(params, mixed_batch(), w, seed=3)
        assert abs(bd.total - bd.weighted_sum(w)) < 1e-12
        assert root.item() == bd.total
        assert min(bd.kl_d, bd.kl_y, bd.kl_o) >= 0

    def test_zero_weights(self, params):
        root, bd = total_loss(params, mixed_batch(), LossWeights(0, 0, 0, 0), seed=3)
        assert bd.total == pytest.approx(bd.recon + bd.kl_d + bd.kl_y + bd.kl_o, abs=1e-12)

    def test_defaults(self):
        w = LossWeights()
        assert (w.gamma, w.alpha, w.omega, w.delta) == (1.0, 1.0, 0.1, 5.0)

    def test_clean_batch_has_no_noise_targets(self):
        b = mixed_batch()
        assert all(not t.any() for t in b.noise_targets)

    def test_gradcheck_all_families(self, params):
        batch = mixed_batch(augmented=True)
        report = T.grad_check_report(lambda p: total_loss(params, batch, seed=11)[0], dict(params))
        fams = {params.family[n] for n in report}
        assert fams == set(FAMILIES)
        assert max(report.values()) < 1e-4

    def test_batched_matches_per_graph_mean(self, params):
        rng = np.random.default_rng(0)
        graphs = [random_graph(1, n=5), random_graph(2, n=7, domain="target", label=None)]
        batch = make_batch(graphs)
        eps = {k: rng.standard_normal((12, params.dims.latent(k))) for k in "dyo"}
        _, joint = total_loss(params, batch, seed=0, eps=eps)
        parts = []
        lo = 0
        for g in graphs:
            e = {k: v[lo:lo + g.n] for k, v in eps.items()}
            parts.append(total_loss(params, make_batch([g]), seed=0, eps=e)[1])
            lo += g.n
        for key in ("recon", "kl_d", "kl_y", "kl_o", "l_d", "l_o", "l_e"):
            assert getattr(joint, key) == pytest.approx(np.mean([getattr(p, key) for p in parts]), abs=1e-12)
        assert joint.l_y == pytest.approx(parts[0].l_y, abs=1e-12)

    def test_label_path_isolation(self, params):
        batch = make_batch([random_graph(3, label=0), random_graph(4, label=1)])
        fp = forward(params, batch, seed=0)
        with Tape() as tape:
            fp = forward(params, batch, seed=0)
            ly = label_loss(params, fp.latents["y"].z, batch.sizes, batch.labels)
        grads = tape.backward(ly, dict(params))
        for name, g in grads.items():
            if params.family[name] in ("phi_d", "phi_o", "theta_d", "theta_o", "theta_g"):
                assert not g.any(), name

    def test_permutation_invariance(self, params):
        g = random_graph(5)
        perm = np.random.default_rng(5).permutation(6)
        gp = g.permuted(perm)
        eps = {k: np.random.default_rng(9).standard_normal((6, params.dims.latent(k))) for k in "dyo"}
        eps_p = {k: v[perm] for k, v in eps.items()}
        a = total_loss(params, make_batch([g]), eps=eps)[1].total
        b = total_loss(params, make_batch([gp]), eps=eps_p)[1].total
        assert a == pytest.approx(b, abs=1e-9)
        assert predict(params, g)[0] == pytest.approx(predict(params, gp)[0], abs=1e-9)


class TestPredict:
    def test_repeatable(self, params):
        graphs = [random_graph(i) for i in range(3)]
        assert np.array_equal(predict_proba(params, graphs), predict_proba(params, graphs))

    def test_zero_final_layer(self, params):
        params["c_y.W1"].data[:] = 0
        params["c_y.b1"].data[:] = 0
        assert all(predict(params, random_graph(i))[0] == 0.5 for i in range(3))

    def test_overfit_one_graph(self):
        from dgda.model import baseline_loss

        g = random_graph(6, label=0)
        p = DgdaParams.init(DIMS, 1)
        opt = Optimizer("adam", 0.01)
        names = p.names(BASELINE_FAMILIES)
        batch = make_batch([g])
        for _ in range(500):
            with Tape() as tape:
                root = baseline_loss(p, batch)
            opt.step(p, tape.backward(root, {n: p[n] for n in names}), names)
        assert predict(p, g)[1] == 0

    def test_noise_decoder_overfits_toy_mask(self):
        from dgda.model import noise_logits

        g = random_graph(7, n=5, p=0.6)
        aug = augment(g, 0.3, 0.5, seed=2)
        dims = ModelDims(in_dim=3, hidden=5, dim_zo=4, decoder_hidden=16, decoder_out=8)
        p = DgdaParams.init(dims, 2)
        z = Tensor(np.random.default_rng(2).standard_normal((5, dims.dim_zo)), requires_grad=True)
        trainable = {**p.subset(["theta_o"]), "z": z}
        opt = Optimizer("adam", 0.05)
        for _ in range(800):
            with Tape() as tape:
                root = noise_loss(p, z, aug.a_noise)
            opt.step(trainable, tape.backward(root, trainable))
        pred = T.stable_sigmoid(noise_logits(p, z).data) >= 0.5
        iu = np.triu_indices(5, 1)
        assert np.array_equal(pred[iu], np.abs(aug.a_noise)[iu] > 0)
        assert noise_loss(p, z, aug.a_noise).item() < 0.1
