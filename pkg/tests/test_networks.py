import numpy as np
import pytest
import torch

from paintsr import networks
from paintsr.errors import ConfigurationError, CorruptionError
from paintsr.imaging import ImageTensor
from paintsr.networks import (
    NetworkParams,
    assert_no_normalization,
    build_module,
    init_params,
    load_params,
    save_params,
    split_generator,
)


def zeroed(params: NetworkParams) -> NetworkParams:
    state = {k: np.zeros_like(v) for k, v in params.state.items()}
    return NetworkParams(params.arch_id, params.config, state, params.version)


class TestUpscaler:
    def test_output_is_s_times_input(self, rng):
        for s in (8, 16):
            params = init_params("upscaler", {"s": s}, seed=0)
            lr = ImageTensor(rng.random((4, 6, 3)))
            out = networks.upscale_features(lr, params)
            assert out.shape == (4 * s, 6 * s, 64)

    def test_zero_params_zero_output(self, rng):
        params = zeroed(init_params("upscaler", {"s": 8}, seed=0))
        out = networks.upscale_features(ImageTensor(rng.random((4, 4, 3))), params)
        assert np.all(out == 0.0)

    def test_deterministic(self, rng):
        params = init_params("upscaler", {"s": 8}, seed=3)
        lr = ImageTensor(rng.random((4, 4, 3)))
        a = networks.upscale_features(lr, params)
        b = networks.upscale_features(lr, params)
        assert np.array_equal(a, b)

    def test_no_normalization_layers(self):
        for arch in ("upscaler", "fusion", "generator", "degrader", "critic"):
            module = build_module(init_params(arch, {}, seed=0))
            assert_no_normalization(module)  # raises on violation

    def test_wrong_arch_rejected(self, rng):
        params = init_params("degrader", {}, seed=0)
        with pytest.raises(ConfigurationError):
            networks.upscale_features(ImageTensor(rng.random((4, 4, 3))), params)


class TestFusion:
    def test_zero_residual_branch_reduces_to_rec_of_fsr(self, rng):
        params = init_params("fusion", {"c_ref": 16}, seed=1)
        state = dict(params.state)
        for key in list(state):
            if key.startswith(("entry.", "blocks.", "exit.")):
                state[key] = np.zeros_like(state[key])
        params_zero = NetworkParams("fusion", params.config, state)
        f_sr = rng.random((8, 8, 64))
        f_t = rng.random((8, 8, 16))
        out = networks.fuse_reconstruct(f_sr, f_t, params_zero, clamp=False)
        # H_Res == 0, so output is the reconstruction conv applied to f_sr
        module = build_module(params_zero)
        a = torch.from_numpy(f_sr.transpose(2, 0, 1)).unsqueeze(0).float()
        expect = module.rec(a)[0].permute(1, 2, 0).detach().numpy()
        assert np.abs(out.data - expect).max() < 1e-6

    def test_ft_slice_zeroed_ignores_ft(self, rng):
        params = init_params("fusion", {"c_ref": 16}, seed=2)
        state = dict(params.state)
        w = state["entry.weight"].copy()
        w[:, 64:] = 0.0  # weights reading the transferred-feature slice
        state["entry.weight"] = w
        params = NetworkParams("fusion", params.config, state)
        f_sr = rng.random((8, 8, 64))
        a = networks.fuse_reconstruct(f_sr, rng.random((8, 8, 16)), params, clamp=False)
        b = networks.fuse_reconstruct(f_sr, np.zeros((8, 8, 16)), params, clamp=False)
        assert np.abs(a.data - b.data).max() < 1e-6

    def test_output_shape_rgb(self, rng):
        params = init_params("fusion", {"c_ref": 16}, seed=0)
        out = networks.fuse_reconstruct(
            rng.random((8, 8, 64)), rng.random((8, 8, 16)), params
        )
        assert out.data.shape == (8, 8, 3)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_spatial_mismatch(self, rng):
        params = init_params("fusion", {"c_ref": 16}, seed=0)
        with pytest.raises(ValueError):
            networks.fuse_reconstruct(
                rng.random((8, 8, 64)), rng.random((4, 4, 16)), params
            )


class TestDegrader:
    def test_output_shape(self, rng):
        params = init_params("degrader", {"s": 8}, seed=0)
        out = networks.degrade_net(ImageTensor(rng.random((32, 32, 3))), params)
        assert out.data.shape == (4, 4, 3)

    def test_nondivisible_rejected(self, rng):
        params = init_params("degrader", {"s": 8}, seed=0)
        with pytest.raises(ValueError):
            networks.degrade_net(ImageTensor(rng.random((30, 32, 3))), params)

    def test_zero_weights_constant_output(self, rng):
        params = zeroed(init_params("degrader", {"s": 8}, seed=0))
        out = networks.degrade_net(ImageTensor(rng.random((16, 16, 3))), params)
        assert np.abs(out.data - out.data[0, 0]).max() < 1e-12

    def test_box_init_close_to_bicubic(self, rng):
        # untrained degrader starts as a box downscale, not garbage
        from paintsr.imaging import degrade_bicubic

        params = init_params("degrader", {"s": 8}, seed=0)
        img = ImageTensor(rng.random((64, 64, 3)) * 0.5 + 0.25)
        out = networks.degrade_net(img, params)
        lr = degrade_bicubic(img, 8)
        assert np.abs(out.data - lr.data).mean() < 0.05


class TestCritic:
    def test_scalar_score(self, rng):
        params = init_params("critic", {}, seed=0)
        score = networks.discriminate(ImageTensor(rng.random((64, 64, 3))), params)
        assert isinstance(score, float)

    def test_unbounded_scores(self, rng):
        # no squashing: negative scores occur, and no sigmoid/tanh in the stack
        params = init_params("critic", {}, seed=1)
        module = build_module(params)
        for m in module.modules():
            assert not isinstance(m, (torch.nn.Sigmoid, torch.nn.Tanh))
        x = torch.randn(16, 3, 32, 32, generator=torch.Generator().manual_seed(0))
        scores = module(x * 1e4).detach()  # piecewise-linear net: scores scale up
        assert scores.shape == (16,)
        assert float(scores.abs().max()) > 1.0

    def test_deterministic(self, rng):
        params = init_params("critic", {}, seed=2)
        img = ImageTensor(rng.random((32, 32, 3)))
        assert networks.discriminate(img, params) == networks.discriminate(img, params)


class TestCheckpointIO:
    def test_save_load_save_identical_bytes(self, tmp_path):
        params = init_params("generator", {"s": 8, "c_ref": 16}, seed=5)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_params(params, p1)
        save_params(load_params(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bit_exact_state(self, tmp_path):
        params = init_params("upscaler", {"s": 8}, seed=7)
        path = tmp_path / "u.ckpt"
        save_params(params, path)
        back = load_params(path)
        assert back.arch_id == "upscaler"
        assert back.version == params.version
        for k, v in params.state.items():
            assert np.array_equal(back.state[k], v)
            assert back.state[k].dtype == v.dtype

    def test_truncated_file(self, tmp_path):
        params = init_params("critic", {}, seed=0)
        path = tmp_path / "c.ckpt"
        save_params(params, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 64])
        with pytest.raises(CorruptionError):
            load_params(path)

    def test_tampered_payload(self, tmp_path):
        params = init_params("critic", {}, seed=0)
        path = tmp_path / "c.ckpt"
        save_params(params, path)
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptionError):
            load_params(path)

    def test_arch_mismatch_on_use(self, tmp_path, rng):
        params = init_params("degrader", {"s": 8}, seed=0)
        path = tmp_path / "d.ckpt"
        save_params(params, path)
        with pytest.raises(ConfigurationError):
            networks.upscale_features(ImageTensor(rng.random((4, 4, 3))), load_params(path))

    def test_tags_round_trip(self, tmp_path):
        params = init_params("critic", {}, seed=0)
        params.tags = {"phase": "pretrain", "epoch": 2}
        path = tmp_path / "t.ckpt"
        save_params(params, path)
        assert load_params(path).tags == {"phase": "pretrain", "epoch": 2}


class TestGeneratorComposite:
    def test_split_matches_composite(self, rng):
        gen = init_params("generator", {"s": 8, "c_ref": 16}, seed=9)
        up, fu = split_generator(gen)
        lr = ImageTensor(rng.random((4, 4, 3)))
        f_sr = networks.upscale_features(lr, up)
        f_t = rng.random((32, 32, 16))
        out = networks.fuse_reconstruct(f_sr, f_t, fu, clamp=False)
        module = build_module(gen)
        with torch.no_grad():
            expect = module(
                torch.from_numpy(lr.data.transpose(2, 0, 1)).unsqueeze(0).float(),
                torch.from_numpy(f_t.transpose(2, 0, 1)).unsqueeze(0).float(),
            )
        assert np.abs(out.data - expect[0].permute(1, 2, 0).numpy()).max() < 1e-6

    def test_param_gradcheck_through_rec_loss(self):
        # finite differences on a parameter subsample, 64-bit
        torch.manual_seed(0)
        gen = build_module(
            init_params("generator", {"s": 2, "c_ref": 4, "width": 8, "n_blocks": 1,
                                      "c_feat": 8, "fusion_blocks": 1}, seed=0),
            dtype=torch.float64,
        )
        lr = torch.rand(1, 3, 4, 4, dtype=torch.float64)
        ft = torch.rand(1, 4, 8, 8, dtype=torch.float64)
        gt = torch.rand(1, 3, 8, 8, dtype=torch.float64)

        def loss():
            return torch.mean(torch.abs(gen(lr, ft) - gt))

        loss().backward()
        rng = np.random.default_rng(1)
        params = [p for p in gen.parameters() if p.grad is not None]
        h = 1e-6
        checked = 0
        for p in params[:4]:
            flat = p.data.reshape(-1)
            grad = p.grad.reshape(-1)
            for idx in rng.choice(flat.numel(), size=min(3, flat.numel()), replace=False):
                orig = flat[idx].item()
                flat[idx] = orig + h
                fp = float(loss())
                flat[idx] = orig - h
                fm = float(loss())
                flat[idx] = orig
                fd = (fp - fm) / (2 * h)
                if abs(fd) > 1e-8:
                    assert abs(float(grad[idx]) - fd) / abs(fd) < 1e-3
                    checked += 1
        assert checked > 0


def test_unknown_arch_rejected():
    with pytest.raises(ConfigurationError):
        init_params("transformer", {}, seed=0)


def test_unknown_config_key_rejected():
    with pytest.raises(ConfigurationError):
        init_params("critic", {"dropout": 0.5}, seed=0)
