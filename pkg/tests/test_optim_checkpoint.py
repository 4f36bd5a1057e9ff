"""Tests for the Adam optimizer (against torch.optim.Adam as oracle) and
the checkpoint container (bit-exact round trips, error handling)."""

import numpy as np
import pytest
import torch

from unirestore.checkpoint import (
    check_config_hash,
    config_hash,
    load_checkpoint,
    load_module_arrays,
    module_arrays,
    module_byte_hash,
    save_checkpoint,
)
from unirestore.errors import DataError
from unirestore.optim import Adam, adam_step


class TestAdamStep:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = torch.randn(4, 3, dtype=torch.float64)
        original = p.clone()
        m = torch.zeros_like(p)
        v = torch.zeros_like(p)
        for step in range(1, 6):
            adam_step(p, torch.zeros_like(p), m, v, step)
        assert torch.equal(p, original)

    def test_first_step_magnitude_is_lr(self):
        # Constant gradient, step 1: update = lr * g / (|g| + eps) ~= lr.
        lr = 1e-4
        p = torch.zeros(5, dtype=torch.float64)
        g = torch.ones_like(p)
        adam_step(p, g, torch.zeros_like(p), torch.zeros_like(p), 1, lr=lr)
        assert torch.allclose(p, torch.full_like(p, -lr), atol=1e-10, rtol=0)

    def test_matches_torch_adam_over_many_steps(self):
        torch.manual_seed(0)
        init = torch.randn(8, 8, dtype=torch.float64)
        ours = init.clone().requires_grad_(False)
        theirs = init.clone().requires_grad_(True)
        reference = torch.optim.Adam([theirs], lr=1e-3, betas=(0.9, 0.99), eps=1e-8)
        m = torch.zeros_like(ours)
        v = torch.zeros_like(ours)
        for step in range(1, 51):
            grad = torch.randn(8, 8, dtype=torch.float64)
            adam_step(ours, grad, m, v, step, lr=1e-3)
            reference.zero_grad()
            theirs.grad = grad.clone()
            reference.step()
        torch.testing.assert_close(ours, theirs.detach(), atol=1e-12, rtol=0)


class TestAdamClass:
    def _model(self, seed=0):
        torch.manual_seed(seed)
        return torch.nn.Sequential(torch.nn.Linear(4, 8), torch.nn.Linear(8, 2))

    def _train(self, model, opt, steps, seed=0):
        gen = torch.Generator().manual_seed(seed)
        for _ in range(steps):
            x = torch.randn(16, 4, generator=gen)
            loss = model(x).square().mean()
            opt.zero_grad()
            loss.backward()
            opt.step()

    def test_skips_frozen_params(self):
        model = self._model()
        model[0].weight.requires_grad_(False)
        frozen = model[0].weight.clone()
        opt = Adam(model.named_parameters(), lr=1e-2)
        assert all(name != "0.weight" for name, _ in opt.named_params)
        self._train(model, opt, 3)
        assert torch.equal(model[0].weight, frozen)

    def test_state_round_trips_through_checkpoint(self, tmp_path):
        model_a = self._model(seed=1)
        opt_a = Adam(model_a.named_parameters(), lr=1e-2)
        self._train(model_a, opt_a, 3, seed=10)

        arrays = {f"params/{k}": t for k, t in model_a.state_dict().items()}
        arrays.update({f"opt/{k}": t for k, t in opt_a.state_arrays().items()})
        path = save_checkpoint(tmp_path / "state.ckpt", arrays,
                               meta={"step": opt_a.step_count})
        loaded, meta = load_checkpoint(path)

        model_b = self._model(seed=2)
        load_module_arrays(model_b, loaded, "params")
        opt_b = Adam(model_b.named_parameters(), lr=1e-2)
        opt_b.load_state_arrays(
            {k[len("opt/"):]: torch.from_numpy(v) for k, v in loaded.items()
             if k.startswith("opt/")},
            meta["step"],
        )

        # Continue both for two more steps with the same data: bitwise match.
        self._train(model_a, opt_a, 2, seed=20)
        self._train(model_b, opt_b, 2, seed=20)
        for (ka, ta), (kb, tb) in zip(
            sorted(model_a.state_dict().items()), sorted(model_b.state_dict().items())
        ):
            assert ka == kb
            assert torch.equal(ta, tb), ka


class TestCheckpointContainer:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {
            "a/weight": rng.standard_normal((3, 5)).astype(np.float32),
            "a/bias": rng.standard_normal(7),
            "b/count": np.arange(11, dtype=np.int64),
        }
        meta = {"step": 42, "config_hash": "abc", "nested": {"x": [1, 2]}}
        path = save_checkpoint(tmp_path / "c.ckpt", arrays, meta)
        loaded, loaded_meta = load_checkpoint(path)
        assert loaded_meta == meta
        assert set(loaded) == set(arrays)
        for name, arr in arrays.items():
            assert loaded[name].dtype == arr.dtype
            assert loaded[name].shape == arr.shape
            assert loaded[name].tobytes() == arr.tobytes()

    def test_module_round_trip(self, tmp_path):
        torch.manual_seed(3)
        src = torch.nn.Conv2d(3, 8, 3)
        path = save_checkpoint(tmp_path / "m.ckpt", module_arrays(src, "net"), {})
        loaded, _ = load_checkpoint(path)
        dst = torch.nn.Conv2d(3, 8, 3)
        load_module_arrays(dst, loaded, "net")
        for key in src.state_dict():
            assert torch.equal(src.state_dict()[key], dst.state_dict()[key])

    def test_missing_arrays_rejected(self, tmp_path):
        torch.manual_seed(4)
        src = torch.nn.Conv2d(3, 8, 3)
        arrays = module_arrays(src, "net")
        del arrays["net/bias"]
        path = save_checkpoint(tmp_path / "m.ckpt", arrays, {})
        loaded, _ = load_checkpoint(path)
        with pytest.raises(DataError, match="missing"):
            load_module_arrays(torch.nn.Conv2d(3, 8, 3), loaded, "net")

    def test_shape_mismatch_rejected(self, tmp_path):
        path = save_checkpoint(
            tmp_path / "m.ckpt", {"net/weight": np.zeros((2, 2)), "net/bias": np.zeros(2)}, {}
        )
        loaded, _ = load_checkpoint(path)
        with pytest.raises(DataError, match="shape"):
            load_module_arrays(torch.nn.Linear(3, 3), loaded, "net")

    def test_bad_files_rejected(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_checkpoint(tmp_path / "absent.ckpt")
        junk = tmp_path / "junk.ckpt"
        junk.write_bytes(b"NOTACKPT" + b"\x00" * 32)
        with pytest.raises(DataError, match="not a checkpoint"):
            load_checkpoint(junk)
        good = save_checkpoint(tmp_path / "good.ckpt", {"x": np.ones(100)}, {})
        truncated = tmp_path / "trunc.ckpt"
        truncated.write_bytes(good.read_bytes()[:-50])
        with pytest.raises(DataError, match="truncated"):
            load_checkpoint(truncated)

    def test_config_hash_canonical_and_sensitive(self):
        a = {"lr": 1e-4, "batch": 4}
        b = {"batch": 4, "lr": 1e-4}
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash({**a, "batch": 5})

    def test_config_hash_warning(self):
        config = {"lr": 1e-4}
        meta_ok = {"config_hash": config_hash(config)}
        assert check_config_hash(meta_ok, config)
        meta_bad = {"config_hash": "0" * 64}
        with pytest.warns(UserWarning, match="different config"):
            assert not check_config_hash(meta_bad, config)

    def test_module_byte_hash_tracks_params(self):
        torch.manual_seed(5)
        a = torch.nn.Linear(4, 4)
        b = torch.nn.Linear(4, 4)
        b.load_state_dict(a.state_dict())
        assert module_byte_hash(a) == module_byte_hash(b)
        with torch.no_grad():
            b.weight[0, 0] += 1e-7
        assert module_byte_hash(a) != module_byte_hash(b)
