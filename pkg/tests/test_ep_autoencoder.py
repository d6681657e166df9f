import dataclasses

import numpy as np
import pytest

from errors import ContractViolation, InstabilityError, NumericError, SpectralWarning, StepSizeError
from ep_autoencoder import (
    EpConfig,
    EpNetwork,
    Layout,
    TrainTrace,
    backprop_reference_train,
    bp_gradients,
    bp_loss,
    clamped_phase,
    clip_audit,
    clipped_linear,
    decoder_matrix,
    encoder_output_gradient,
    ep_weight_update,
    free_phase,
    init_network,
    latent_covariance,
    load_checkpoint,
    lowrank_from_autoencoder,
    pca_floor,
    projection_spectrum_report,
    pseudo_inverse_encoder,
    reconstruct,
    reconstruction_loss,
    relax,
    save_checkpoint,
    steady_outputs,
    steady_state_map,
    train,
    train_epoch,
    write_loss_trace_csv,
)

TIGHT = dict(relax_tol=1e-13, relax_steps=5000)


def _orthonormal(rng, n, r):
    Q, _ = np.linalg.qr(rng.standard_normal((n, r)))
    return Q


def _decoder_phases(net, x, cfg):
    """Encoder free phase, then the decoder free and +/-beta phases for one sample"""
    s = free_phase(net, "encoder", x, cfg)[net.layout("encoder").outputs]
    dec_free = free_phase(net, "decoder", s, cfg)
    plus = clamped_phase(net, "decoder", s, x, cfg.beta, cfg, x_start=dec_free)
    minus = clamped_phase(net, "decoder", s, x, -cfg.beta, cfg, x_start=dec_free)
    return s, dec_free, plus, minus


def _decoder_loss(net, s, y, c):
    h = steady_outputs(net, "decoder", s[:, None], c)[:, 0]
    return 0.5 * float(np.sum((y - h) ** 2))


def _update_error(net, x, cfg):
    """Relative error and cosine of the EP decoder update against -eta dC/dW"""
    lay = net.layout("decoder")
    s, _, plus, minus = _decoder_phases(net, x, cfg)
    dJ = ep_weight_update(plus, minus, cfg, edges=lay.edges)
    estimate = dJ[lay.outputs, :lay.n_in + 1]

    h = steady_outputs(net, "decoder", s[:, None], cfg.c)[:, 0]
    v_in = np.append(clipped_linear(s, cfg.c), 1.0)
    exact = cfg.eta * np.outer(x - h, v_in)
    error = np.linalg.norm(estimate - exact) / np.linalg.norm(exact)
    cosine = np.sum(estimate * exact) / (np.linalg.norm(estimate) * np.linalg.norm(exact))
    return error, cosine


class TestConfig:
    def test_defaults(self):
        cfg = EpConfig()
        assert (cfg.beta, cfg.eta, cfg.c) == (1e-3, 0.01, 10.0)

    def test_validation(self):
        with pytest.raises(ContractViolation):
            EpConfig(beta=0.0)
        with pytest.raises(ContractViolation):
            EpConfig(c=-1.0)
        with pytest.raises(ContractViolation):
            EpConfig(relax_dt=1.5)
        with pytest.raises(ContractViolation):
            EpConfig(eta=-0.1)

    def test_eta_decay(self):
        cfg = EpConfig(eta=0.1, eta_decay=0.5)
        assert cfg.eta_at(0) == 0.1
        assert cfg.eta_at(2) == pytest.approx(0.05)


class TestNetwork:
    def test_layout(self):
        lay = Layout(n_in=3, n_out=2)
        assert lay.size == 6
        assert lay.bias == 3
        np.testing.assert_array_equal(lay.clamped, [True, True, True, True, False, False])
        assert not lay.edges[0, 1]
        assert lay.edges[0, 4] and lay.edges[4, 0] and lay.edges[3, 5]

    def test_init_is_bipartite_and_bounded(self):
        net = init_network(5, 2, seed=1)
        for which in ("encoder", "decoder"):
            J = net.couplings(which)
            np.testing.assert_array_equal(J, J.T)
            assert np.all(np.diag(J) == 0.0)
            assert np.all(np.abs(J) <= 1.0 / np.sqrt(7))
        assert net.A.shape == (5, 2)
        assert net.B.shape == (2, 5)

    def test_from_weights(self, rng):
        A = rng.standard_normal((4, 2))
        B = rng.standard_normal((2, 4))
        net = EpNetwork.from_weights(A, B)
        np.testing.assert_array_equal(net.A, A)
        np.testing.assert_array_equal(net.B, B)

    def test_rejects_lateral_edges(self):
        net = init_network(3, 1, seed=0)
        J = net.dec_J.copy()
        J[2, 3] = J[3, 2] = 0.1
        with pytest.raises(ContractViolation, match="inputs to outputs"):
            EpNetwork(enc_J=net.enc_J, dec_J=J, n=3, r=1)

    def test_rejects_asymmetric(self):
        net = init_network(3, 1, seed=0)
        J = net.enc_J.copy()
        J[4, 0] += 0.1
        with pytest.raises(ContractViolation, match="symmetric"):
            EpNetwork(enc_J=J, dec_J=net.dec_J, n=3, r=1)


class TestActivation:
    def test_clipped_linear(self):
        np.testing.assert_array_equal(clipped_linear(np.array([3.0, 15.0, -12.0]), 10.0), [3.0, 10.0, -10.0])

    def test_clipped_linear_is_odd(self, rng):
        x = 20.0 * rng.standard_normal(50)
        np.testing.assert_array_equal(clipped_linear(-x, 10.0), -clipped_linear(x, 10.0))

    def test_bad_bound(self):
        with pytest.raises(ContractViolation):
            clipped_linear(np.zeros(2), 0.0)


class TestPhases:
    def test_free_phase_reaches_closed_form(self, rng):
        net = init_network(6, 2, seed=3)
        cfg = EpConfig(**TIGHT)
        x = rng.standard_normal(6)
        state = free_phase(net, "encoder", x, cfg)
        lay = net.layout("encoder")
        np.testing.assert_array_equal(state[lay.inputs], x)
        assert state[lay.bias] == 1.0
        np.testing.assert_allclose(state[lay.outputs], steady_outputs(net, "encoder", x[:, None], cfg.c)[:, 0],
                                   atol=1e-10)

    def test_wrong_input_length(self):
        net = init_network(4, 2, seed=0)
        with pytest.raises(ContractViolation):
            free_phase(net, "encoder", np.zeros(3), EpConfig())

    def test_zero_beta_is_free_phase(self, rng):
        net = init_network(4, 2, seed=2)
        cfg = EpConfig(**TIGHT)
        s = rng.standard_normal(2)
        free = free_phase(net, "decoder", s, cfg)
        nudged = clamped_phase(net, "decoder", s, rng.standard_normal(4), 0.0, cfg)
        np.testing.assert_allclose(nudged, free, atol=1e-10)

    def test_target_at_fixed_point(self, rng):
        net = init_network(4, 2, seed=2)
        cfg = EpConfig(**TIGHT)
        s = rng.standard_normal(2)
        free = free_phase(net, "decoder", s, cfg)
        lay = net.layout("decoder")
        nudged = clamped_phase(net, "decoder", s, free[lay.outputs], cfg.beta, cfg, x_start=free)
        np.testing.assert_allclose(nudged, free, atol=1e-10)

    def test_displacement_is_linear_in_beta(self, rng):
        net = init_network(6, 2, seed=4)
        s = rng.standard_normal(2)
        y = rng.standard_normal(6)
        displacements = []
        for beta in (1e-3, 5e-4):
            cfg = EpConfig(beta=beta, **TIGHT)
            free = free_phase(net, "decoder", s, cfg)
            nudged = clamped_phase(net, "decoder", s, y, beta, cfg, x_start=free)
            displacements.append(np.linalg.norm(nudged - free))
        assert displacements[0] / displacements[1] == pytest.approx(2.0, rel=0.2)

    def test_beta_must_match_config(self):
        net = init_network(3, 1, seed=0)
        with pytest.raises(ContractViolation, match="beta"):
            clamped_phase(net, "decoder", np.zeros(1), np.zeros(3), 0.5, EpConfig())

    def test_runaway_relaxation(self):
        J = 30.0 * np.array([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(InstabilityError, match="during test phase") as info:
            relax(J, np.ones(2), np.zeros(2, dtype=bool), EpConfig(c=10.0), phase="test")
        assert info.value.exit_code == 1

    def test_clipped_state_stays_bounded(self):
        net = EpNetwork.from_weights(np.full((4, 2), 0.5), np.full((2, 4), 0.5))
        cfg = EpConfig(c=10.0)
        state = free_phase(net, "encoder", np.full(4, 20.0), cfg)
        bound = cfg.c * (1.0 + np.max(np.sum(np.abs(net.enc_J), axis=1)))
        assert np.max(np.abs(state)) <= bound
        findings = clip_audit(net, np.full((4, 1), 20.0), c=cfg.c)
        assert any(f["layer"] == "input" for f in findings)


class TestEpUpdate:
    def test_equal_states_give_zero(self, rng):
        x = rng.standard_normal(5)
        np.testing.assert_array_equal(ep_weight_update(x, x, EpConfig()), np.zeros((5, 5)))

    def test_pair_arithmetic(self):
        cfg = EpConfig(beta=0.1, eta=0.2)
        dJ = ep_weight_update(np.array([1.0, 1.0]), np.array([1.0, -1.0]), cfg)
        assert dJ[0, 1] == pytest.approx(cfg.eta / cfg.beta)
        assert dJ[1, 0] == dJ[0, 1]
        np.testing.assert_array_equal(np.diag(dJ), [0.0, 0.0])

    def test_matches_analytic_gradient(self, rng):
        net = init_network(10, 3, seed=7)
        x = rng.standard_normal(10)
        error, cosine = _update_error(net, x, EpConfig(beta=1e-3, **TIGHT))
        assert cosine >= 0.99
        assert error <= 0.05

    def test_error_shrinks_with_beta(self, rng):
        net = init_network(10, 3, seed=7)
        x = rng.standard_normal(10)
        coarse, _ = _update_error(net, x, EpConfig(beta=0.1, **TIGHT))
        fine, _ = _update_error(net, x, EpConfig(beta=0.05, **TIGHT))
        assert fine < coarse

    def test_error_does_not_grow_at_small_beta(self, rng):
        net = init_network(10, 3, seed=7)
        x = rng.standard_normal(10)
        coarse, _ = _update_error(net, x, EpConfig(beta=1e-3, **TIGHT))
        fine, _ = _update_error(net, x, EpConfig(beta=5e-4, **TIGHT))
        assert fine <= coarse + 1e-6


class TestEncoderGradient:
    def test_matches_finite_difference(self, rng):
        net = init_network(8, 3, seed=5)
        cfg = EpConfig(beta=1e-3, **TIGHT)
        x = rng.standard_normal(8)
        s, _, plus, minus = _decoder_phases(net, x, cfg)
        estimate = encoder_output_gradient(net, plus, minus, cfg)

        eps = 1e-6
        numeric = np.zeros(3)
        for i in range(3):
            step = np.zeros(3)
            step[i] = eps
            numeric[i] = (_decoder_loss(net, s + step, x, cfg.c) - _decoder_loss(net, s - step, x, cfg.c)) / (2 * eps)
        assert np.linalg.norm(estimate - numeric) <= 0.05 * np.linalg.norm(numeric)

        # moving the latents against the gradient lowers the loss
        assert _decoder_loss(net, s - 1e-3 * estimate, x, cfg.c) < _decoder_loss(net, s, x, cfg.c)

    def test_zero_at_perfect_reconstruction(self, rng):
        Q = _orthonormal(rng, 6, 2)
        net = EpNetwork.from_weights(Q, Q.T)
        cfg = EpConfig(**TIGHT)
        x = Q @ rng.standard_normal(2)
        _, _, plus, minus = _decoder_phases(net, x, cfg)
        np.testing.assert_allclose(encoder_output_gradient(net, plus, minus, cfg), 0.0, atol=1e-8)


class TestTraining:
    def test_exact_representation(self, rng):
        Q = _orthonormal(rng, 6, 3)
        X = Q @ rng.standard_normal((3, 20))
        cfg = EpConfig(beta=1e-2, eta=0.05, epochs=300, seed=1)
        net, trace = train(init_network(6, 3, seed=1), X, cfg, log_every=0)
        assert trace.loss[-1] <= 1e-4 * np.sum(X * X)
        assert trace.loss[-1] < trace.loss[0]

    def test_zero_eta_freezes_network(self, rng):
        net = init_network(5, 2, seed=0)
        X = rng.standard_normal((5, 8))
        cfg = EpConfig(eta=0.0)
        before = reconstruction_loss(net, X, cfg.c)
        after_net, row = train_epoch(net, X, cfg)
        np.testing.assert_array_equal(after_net.enc_J, net.enc_J)
        np.testing.assert_array_equal(after_net.dec_J, net.dec_J)
        assert row["loss"] == before

    def test_relaxed_reconstruction_matches_steady_state(self, rng):
        net = init_network(6, 2, seed=3)
        X = rng.standard_normal((6, 5))
        X_hat = reconstruct(net, X, EpConfig(**TIGHT))
        assert X_hat.shape == (6, 5)
        assert np.sum((X - X_hat) ** 2) == pytest.approx(reconstruction_loss(net, X), rel=1e-8)

    def test_symmetry_preserved(self, rng):
        net = init_network(5, 2, seed=0)
        net, _ = train_epoch(net, rng.standard_normal((5, 6)), EpConfig(eta=0.02))
        for J in (net.enc_J, net.dec_J):
            np.testing.assert_array_equal(J, J.T)
            assert np.all(np.diag(J) == 0.0)

    def test_stationary_network_barely_moves(self, rng):
        Q = _orthonormal(rng, 10, 3)
        net = EpNetwork.from_weights(Q, Q.T)
        X = Q @ rng.standard_normal((3, 12))
        cfg = EpConfig(eta=0.01, relax_tol=1e-14, relax_steps=5000)
        _, row = train_epoch(net, X, cfg)
        assert row["update_norm"] <= 1e-6 * cfg.eta

    def test_seeded_runs_are_identical(self, rng):
        X = rng.standard_normal((5, 6))
        cfg = EpConfig(eta=0.02, epochs=3, seed=9)
        net1, trace1 = train(init_network(5, 2, seed=9), X, cfg, log_every=0)
        net2, trace2 = train(init_network(5, 2, seed=9), X, cfg, log_every=0)
        np.testing.assert_array_equal(net1.dec_J, net2.dec_J)
        assert trace1.loss == trace2.loss

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ContractViolation):
            train_epoch(init_network(5, 2, seed=0), rng.standard_normal((4, 3)), EpConfig())

    def test_trace_rejects_non_finite(self):
        with pytest.raises(NumericError):
            TrainTrace().append(1, float("nan"), 0.0)

    def test_loss_trace_csv(self, tmp_path):
        trace = TrainTrace()
        trace.append(1, 2.5, 0.1)
        path = tmp_path / "loss_trace.csv"
        write_loss_trace_csv(trace, str(path))
        assert path.read_text().splitlines() == ["epoch,loss_ep,update_norm", "1,2.5,0.10000000000000001"]


class TestExtraction:
    def test_zero_couplings_decay(self):
        mapping, _ = steady_state_map(np.zeros((3, 3)))
        np.testing.assert_allclose(mapping, 0.0, atol=1e-9)

    def test_projection_is_its_own_limit(self, rng):
        A = rng.standard_normal((6, 2))
        J = A @ pseudo_inverse_encoder(A)
        mapping, _ = steady_state_map(J)
        np.testing.assert_allclose(mapping, J, atol=1e-8)

    def test_unstable_map_warns(self):
        with pytest.warns(SpectralWarning, match="nonnegative real part"):
            steady_state_map(2.0 * np.eye(2), max_horizon=10.0)

    def test_decoder_block_is_A(self, rng):
        Q = _orthonormal(rng, 7, 3)
        _, A = decoder_matrix(EpNetwork.from_weights(Q, Q.T))
        np.testing.assert_allclose(A, Q, atol=1e-6)

    def test_decoder_out_of_linear_regime(self):
        A = np.array([[20.0], [0.0]])
        with pytest.raises(ContractViolation, match="linear regime"):
            decoder_matrix(EpNetwork.from_weights(A, A.T), c=10.0)

    def test_pseudo_inverse(self, rng):
        np.testing.assert_allclose(pseudo_inverse_encoder(np.array([[1.0], [0.0]])), [[1.0, 0.0]], atol=1e-12)
        Q = _orthonormal(rng, 5, 2)
        np.testing.assert_allclose(pseudo_inverse_encoder(Q), Q.T, atol=1e-12)
        A = rng.standard_normal((6, 3))
        B = pseudo_inverse_encoder(A)
        np.testing.assert_allclose(B @ A, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(A @ B @ A, A, atol=1e-9)

    def test_rank_deficient_pseudo_inverse(self):
        with pytest.raises(NumericError):
            pseudo_inverse_encoder(np.array([[1.0, 1.0], [1.0, 1.0], [0.0, 0.0]]))

    def test_projection_spectrum(self, rng):
        for _ in range(5):
            report = projection_spectrum_report(rng.standard_normal((8, 3)))
            assert report["idempotence_error"] <= 1e-8
            assert report["max_eigen_deviation"] <= 1e-6
            assert report["unit_eigenvalue_count"] == 3
            assert report["steady_state_error"] <= 1e-8

    def test_latent_covariance(self, rng):
        np.testing.assert_array_equal(latent_covariance(np.array([[1.0], [0.0]])), [[1.0, 0.0], [0.0, 0.0]])
        np.testing.assert_array_equal(latent_covariance(np.zeros((2, 4))), np.zeros((2, 2)))
        latents = rng.standard_normal((3, 9))
        expected = np.zeros((3, 3))
        for k in range(9):
            expected += np.outer(latents[:, k], latents[:, k])
        np.testing.assert_allclose(latent_covariance(latents), expected / 9, atol=1e-10)

    def test_lowrank_from_autoencoder(self, rng):
        A = np.vstack([np.eye(2), np.zeros((2, 2))])
        np.testing.assert_array_equal(lowrank_from_autoencoder(A, np.eye(2)), np.diag([1.0, 1.0, 0.0, 0.0]))
        M = lowrank_from_autoencoder(rng.standard_normal((9, 3)), latent_covariance(rng.standard_normal((3, 20))))
        singular = np.linalg.svd(M, compute_uv=False)
        assert np.all(singular[3:] <= 1e-8 * singular[0])
        with pytest.raises(ContractViolation):
            lowrank_from_autoencoder(np.ones((3, 2)), np.diag([1.0, -1.0]))


class TestBackprop:
    def test_gradient_matches_finite_difference(self, rng):
        A, B, X = rng.standard_normal((5, 2)), rng.standard_normal((2, 5)), rng.standard_normal((5, 7))
        grad_A, grad_B = bp_gradients(A, B, X)
        eps = 1e-6
        for param, grad in ((A, grad_A), (B, grad_B)):
            numeric = np.zeros_like(param)
            for idx in np.ndindex(*param.shape):
                original = param[idx]
                param[idx] = original + eps
                up = bp_loss(A, B, X)
                param[idx] = original - eps
                down = bp_loss(A, B, X)
                param[idx] = original
                numeric[idx] = (up - down) / (2 * eps)
            assert np.linalg.norm(numeric - grad) <= 1e-6 * np.linalg.norm(grad)

    def test_reaches_pca_floor(self, rng):
        Q = _orthonormal(rng, 10, 3)
        X = Q @ np.diag([5.0, 4.0, 3.0]) @ rng.standard_normal((3, 30)) + 0.1 * rng.standard_normal((10, 30))
        _, _, trace = backprop_reference_train(X, 3, epochs=8000, eta=None, seed=0, log_every=0)
        assert trace.method == "bp"
        assert trace.loss[-1] <= 1.01 * pca_floor(X, 3)

    def test_zero_eta_freezes(self, rng):
        X = rng.standard_normal((4, 6))
        A0, B0, _ = backprop_reference_train(X, 2, epochs=0, eta=0.0, seed=3)
        A1, B1, trace = backprop_reference_train(X, 2, epochs=4, eta=0.0, seed=3)
        np.testing.assert_array_equal(A0, A1)
        np.testing.assert_array_equal(B0, B1)
        assert len(set(trace.loss)) == 1

    def test_divergence(self, rng):
        with pytest.raises(StepSizeError, match="lower eta"):
            backprop_reference_train(rng.standard_normal((6, 10)), 2, epochs=50, eta=10.0, seed=0)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = init_network(4, 2, seed=1)
        cfg = EpConfig(eta=0.03, seed=5)
        rng = np.random.default_rng(8)
        rng.permutation(10)
        path = tmp_path / "checkpoint.json"
        save_checkpoint(str(path), net, cfg, 12, rng)
        back_net, back_cfg, epoch, back_rng = load_checkpoint(str(path))
        np.testing.assert_array_equal(back_net.enc_J, net.enc_J)
        np.testing.assert_array_equal(back_net.dec_J, net.dec_J)
        assert back_cfg == cfg
        assert epoch == 12
        np.testing.assert_array_equal(back_rng.permutation(10), rng.permutation(10))

    def test_invalid_checkpoint(self, tmp_path):
        path = tmp_path / "checkpoint.json"
        path.write_text("{}")
        with pytest.raises(ContractViolation):
            load_checkpoint(str(path))

    def test_config_replace_keeps_validation(self):
        with pytest.raises(ContractViolation):
            dataclasses.replace(EpConfig(), beta=-1.0)
