import numpy as np
import pytest
import torch

from hoidiff.denoiser import (
    Denoiser,
    DenoiserConfig,
    Normalizer,
    load_checkpoint,
    load_model,
    save_checkpoint,
    save_model,
    sinusoidal_embedding,
)
from hoidiff.encoders import ConditionEmbedding

TINY = DenoiserConfig(joint_count=3, layers_primary=2, layers_intervention=1,
                      hidden=16, feedforward=32, heads=2, dropout=0.0,
                      cond_dim=8, intervention_hidden=4,
                      intervention_feedforward=8)


def make_cond(batch, dim, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return ConditionEmbedding(
        c_text=torch.randn(batch, dim, generator=g, dtype=dtype),
        c_shape=torch.randn(batch, dim, generator=g, dtype=dtype),
        masked=torch.zeros(batch, dtype=torch.bool),
    )


def directional_fd(loss_fn, params, direction, h=1e-3):
    """Central finite difference of loss along a parameter-space direction."""
    with torch.no_grad():
        for p, d in zip(params, direction):
            p.add_(h * d)
        up = loss_fn().item()
        for p, d in zip(params, direction):
            p.add_(-2 * h * d)
        down = loss_fn().item()
        for p, d in zip(params, direction):
            p.add_(h * d)
    return (up - down) / (2 * h)


# ---------------------------------------------------------------------------
# shapes and sensitivity
# ---------------------------------------------------------------------------

def test_output_shape_over_length_range():
    torch.manual_seed(0)
    model = Denoiser(TINY).eval()
    cond = make_cond(1, 8)
    for n in (60, 137, 300):
        x = torch.randn(1, n, TINY.frame_width)
        out = model.primitive_denoise(x, 5, cond)
        assert out.shape == (1, n, TINY.frame_width)


def test_condition_changes_output():
    torch.manual_seed(1)
    model = Denoiser(TINY).eval()
    x = torch.randn(1, 12, TINY.frame_width)
    a = model.primitive_denoise(x, 3, make_cond(1, 8, seed=1))
    b = model.primitive_denoise(x, 3, make_cond(1, 8, seed=2))
    assert (a - b).norm() > 0


def test_attention_is_global_prefix_differs():
    torch.manual_seed(2)
    model = Denoiser(TINY).eval()
    cond = make_cond(1, 8)
    x = torch.randn(1, 24, TINY.frame_width)
    full = model.primitive_denoise(x, 3, cond)
    prefix = model.primitive_denoise(x[:, :12], 3, cond)
    assert (full[:, :12] - prefix).norm() > 1e-6


def test_step_changes_output():
    torch.manual_seed(3)
    model = Denoiser(TINY).eval()
    cond = make_cond(1, 8)
    x = torch.randn(1, 10, TINY.frame_width)
    a = model.primitive_denoise(x, 1, cond)
    b = model.primitive_denoise(x, 7, cond)
    assert (a - b).norm() > 0


def test_bad_width_raises():
    model = Denoiser(TINY)
    with pytest.raises(ValueError):
        model.primitive_denoise(torch.randn(1, 10, 7), 0, make_cond(1, 8))


# ---------------------------------------------------------------------------
# intervention contracts
# ---------------------------------------------------------------------------

def test_human_channels_pass_through_exactly():
    torch.manual_seed(4)
    model = Denoiser(TINY).eval()
    # give the residual projections nonzero weights
    with torch.no_grad():
        model.rotation_encoder.out_proj.weight.normal_()
        model.position_encoder.out_proj.weight.normal_()
    x = torch.randn(2, 9, TINY.frame_width)
    out = model.intervene(x)
    J = TINY.joint_count
    assert torch.equal(out[..., : 6 * J], x[..., : 6 * J])
    assert (out[..., 6 * J:] - x[..., 6 * J:]).norm() > 0


def test_zero_init_intervention_is_exact_identity():
    torch.manual_seed(5)
    model = Denoiser(TINY).eval()
    x = torch.randn(2, 7, TINY.frame_width)
    assert torch.equal(model.intervene(x), x)


def test_no_intervention_config_has_no_intervention_parameters():
    cfg = DenoiserConfig(**{**TINY.__dict__, "intervention": False})
    model = Denoiser(cfg)
    names = [n for n, _ in model.named_parameters()]
    assert not any("rotation_encoder" in n or "position_encoder" in n for n in names)
    x = torch.randn(1, 6, cfg.frame_width)
    cond = make_cond(1, 8)
    model.eval()
    assert torch.equal(model.denoise(x, 2, cond), model.primitive_denoise(x, 2, cond))


def test_denoise_is_composition_when_normalizer_identity():
    torch.manual_seed(6)
    model = Denoiser(TINY).eval()
    with torch.no_grad():
        model.rotation_encoder.out_proj.weight.normal_(std=0.1)
    x = torch.randn(1, 8, TINY.frame_width)
    cond = make_cond(1, 8)
    expect = model.intervene(model.primitive_denoise(x, 4, cond), 4)
    out = model.denoise(x, 4, cond)
    assert torch.allclose(out, expect, atol=1e-6)


def test_intervention_depends_on_every_joint():
    """Zeroing the input-projection columns of joint k changes the residual:
    the encoders aggregate over all joints."""
    torch.manual_seed(7)
    model = Denoiser(TINY).eval()
    with torch.no_grad():
        model.position_encoder.out_proj.weight.normal_(std=0.5)
    x = torch.randn(1, 6, TINY.frame_width)
    base = model.intervene(x)
    J = TINY.joint_count
    for k in range(J):
        w_backup = model.position_encoder.in_proj.weight.detach().clone()
        with torch.no_grad():
            model.position_encoder.in_proj.weight[:, 3 * k: 3 * (k + 1)] = 0
        ablated = model.intervene(x)
        with torch.no_grad():
            model.position_encoder.in_proj.weight.copy_(w_backup)
        assert (ablated - base).norm() > 0, f"joint {k} ignored"


def test_intervention_parameter_budget():
    model = Denoiser(DenoiserConfig())  # paper-size config
    side = sum(p.numel() for n, p in model.named_parameters()
               if n.startswith(("rotation_encoder", "position_encoder")))
    primary = sum(p.numel() for n, p in model.named_parameters()
                  if not n.startswith(("rotation_encoder", "position_encoder")))
    assert side < 0.15 * primary


def test_eval_forward_deterministic():
    torch.manual_seed(8)
    model = Denoiser(DenoiserConfig(**{**TINY.__dict__, "dropout": 0.1})).eval()
    x = torch.randn(1, 11, TINY.frame_width)
    cond = make_cond(1, 8)
    assert torch.equal(model.denoise(x, 3, cond), model.denoise(x, 3, cond))


# ---------------------------------------------------------------------------
# gradients (finite differences, float64)
# ---------------------------------------------------------------------------

def test_gradient_matches_finite_differences():
    torch.manual_seed(9)
    model = Denoiser(TINY).double().eval()
    with torch.no_grad():  # nonzero intervention so its params matter
        model.rotation_encoder.out_proj.weight.normal_(std=0.05)
        model.position_encoder.out_proj.weight.normal_(std=0.05)
    g = torch.Generator().manual_seed(0)
    x_t = torch.randn(2, 8, TINY.frame_width, generator=g, dtype=torch.float64)
    target = torch.randn(2, 8, TINY.frame_width, generator=g, dtype=torch.float64)
    cond = make_cond(2, 8, dtype=torch.float64)

    def loss_fn():
        out = model.denoise(x_t, 3, cond)
        return ((out - target) ** 2).mean()

    params = [p for p in model.parameters() if p.requires_grad]
    model.zero_grad()
    loss_fn().backward()
    grads = [p.grad.detach().clone() for p in params]

    rng = np.random.default_rng(0)
    for trial in range(3):
        direction = [torch.tensor(rng.normal(size=p.shape)) for p in params]
        norm = torch.sqrt(sum((d ** 2).sum() for d in direction))
        direction = [d / norm for d in direction]
        analytic = sum((g_ * d).sum().item() for g_, d in zip(grads, direction))
        numeric = directional_fd(loss_fn, params, direction, h=1e-3)
        assert abs(analytic - numeric) <= 1e-4 * max(1.0, abs(numeric)), \
            f"trial {trial}: {analytic} vs {numeric}"


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

def test_sinusoidal_embedding_shapes_and_range():
    emb = sinusoidal_embedding(torch.tensor([0, 1, 500]), 16)
    assert emb.shape == (3, 16)
    assert emb.abs().max() <= 1.0 + 1e-6
    odd = sinusoidal_embedding(torch.tensor([2.0]), 15)
    assert odd.shape == (1, 15)


def test_normalizer_round_trip_and_floor():
    n = Normalizer(4)
    data = torch.tensor([[1.0, 2.0, 3.0, 5.0], [1.0, 4.0, 3.0, 9.0]])
    n.fit(data)
    assert n.std[0] == 1e-3 and n.std[2] == 1e-3  # constant channels floored
    z = n.norm(data)
    assert torch.allclose(n.denorm(z), data, atol=1e-5)


# ---------------------------------------------------------------------------
# checkpoint archive
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    path = tmp_path / "ck.bin"
    tensors = {"a.b": np.arange(6, dtype=np.float32).reshape(2, 3),
               "c": np.float32(4.5)}
    save_checkpoint(path, tensors, config={"hidden": 16}, extra={"epoch": 3})
    back, config, extra = load_checkpoint(path)
    np.testing.assert_array_equal(back["a.b"], tensors["a.b"])
    assert back["c"] == 4.5
    assert config == {"hidden": 16}
    assert extra == {"epoch": 3}


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"XXXX" + b"\0" * 32)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)


def test_model_save_load_identical_outputs(tmp_path):
    torch.manual_seed(10)
    model = Denoiser(TINY).eval()
    with torch.no_grad():
        model.rotation_encoder.out_proj.weight.normal_(std=0.1)
        model.normalizer.mean.normal_()
        model.normalizer.std.uniform_(0.5, 2.0)
    path = tmp_path / "model.ckpt"
    save_model(path, model, extra={"note": "t"})
    loaded, extra, _ = load_model(path)
    loaded.eval()
    assert extra == {"note": "t"}
    x = torch.randn(1, 9, TINY.frame_width)
    cond = make_cond(1, 8)
    assert torch.allclose(model.denoise(x, 2, cond), loaded.denoise(x, 2, cond),
                          atol=1e-6)
