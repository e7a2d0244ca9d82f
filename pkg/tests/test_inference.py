import numpy as np
import pytest
import torch

from ctsr.inference import (
    MemoryEstimate,
    TileSpec,
    embed_2d_as_25d,
    estimate_activation_memory,
    pad_volume_z,
    super_resolve_volume,
)
from ctsr.models import NetworkSpec, build_network, count_parameters
from ctsr.volume import Volume

VS = (17.28, 69.12, 69.12)


def rand_volume(shape, seed=0, voxel_size=VS):
    rng = np.random.default_rng(seed)
    return Volume(rng.random(shape, dtype=np.float32), voxel_size)


class TestPadVolumeZ:
    def test_zero_is_identity(self):
        v = rand_volume((4, 8, 8))
        out = pad_volume_z(v, 0)
        assert np.array_equal(out.data, v.data)

    def test_replication(self):
        v = rand_volume((5, 4, 4), seed=1)
        out = pad_volume_z(v, 3)
        assert out.shape == (11, 4, 4)
        for i in range(4):
            assert np.array_equal(out.data[i], v.data[0])
        for i in range(7, 11):
            assert np.array_equal(out.data[i], v.data[-1])

    def test_pad_then_crop_is_inverse(self):
        v = rand_volume((6, 4, 4), seed=2)
        out = pad_volume_z(v, 2)
        assert np.array_equal(out.data[2:-2], v.data)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            pad_volume_z(rand_volume((2, 2, 2)), -1)


class TestTileSpec:
    def test_tile_must_exceed_twice_overlap(self):
        with pytest.raises(ValueError, match="overlap"):
            TileSpec(tile_yx=(16, 16), overlap_yx=(8, 8))

    def test_negative_overlap_rejected(self):
        with pytest.raises(ValueError):
            TileSpec(tile_yx=(16, 16), overlap_yx=(-1, 0))

    def test_unknown_blend_rejected(self):
        with pytest.raises(ValueError, match="blend"):
            TileSpec(blend="cosine")


class TestSuperResolve:
    def test_25d_shape_contract(self):
        spec = NetworkSpec("edsr", "2.5d", edsr_blocks=2)
        net = build_network(spec).eval()
        lr = rand_volume((20, 32, 32))
        out = super_resolve_volume(net, spec, lr, TileSpec(tile_yx=(32, 32), overlap_yx=(0, 0)))
        assert out.shape == (20, 128, 128)
        assert out.voxel_size == (VS[0], VS[1] / 4, VS[2] / 4)

    def test_pre_upsampled_keeps_dims(self):
        spec = NetworkSpec("srcnn", "2.5d")
        net = build_network(spec).eval()
        lr = rand_volume((6, 40, 40), voxel_size=(17.28,) * 3)
        out = super_resolve_volume(net, spec, lr, TileSpec(tile_yx=(40, 40), overlap_yx=(0, 0)))
        assert out.shape == (6, 40, 40)

    def test_output_slice_count_matches_input_at_boundaries(self):
        # first/last slices come from replicate-padded windows
        spec = NetworkSpec("srcnn", "2.5d")
        net = build_network(spec).eval()
        lr = rand_volume((4, 24, 24), voxel_size=(17.28,) * 3)
        out = super_resolve_volume(net, spec, lr, TileSpec(tile_yx=(24, 24), overlap_yx=(0, 0)))
        assert out.shape[0] == 4

    def test_deterministic(self):
        spec = NetworkSpec("srcnn", "2d")
        net = build_network(spec).eval()
        lr = rand_volume((3, 32, 32), voxel_size=(17.28,) * 3)
        tiles = TileSpec(tile_yx=(20, 20), overlap_yx=(4, 4))
        a = super_resolve_volume(net, spec, lr, tiles)
        b = super_resolve_volume(net, spec, lr, tiles)
        assert np.array_equal(a.data, b.data)

    def test_tiling_consistency_center_crop(self):
        # SRCNN receptive radius is 8, so overlap >= 9 reproduces untiled output
        spec = NetworkSpec("srcnn", "2d")
        net = build_network(spec, init_seed=3).eval()
        lr = rand_volume((3, 80, 80), seed=5, voxel_size=(17.28,) * 3)
        untiled = super_resolve_volume(net, spec, lr, TileSpec(tile_yx=(80, 80), overlap_yx=(0, 0)))
        tiled = super_resolve_volume(net, spec, lr, TileSpec(tile_yx=(40, 40), overlap_yx=(9, 9)))
        assert np.abs(untiled.data - tiled.data).max() <= 1e-5

    def test_linear_feather_normalizes(self):
        spec = NetworkSpec("srcnn", "2d")
        net = build_network(spec).eval()
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
            net.conv3.bias.fill_(0.5)
        lr = rand_volume((2, 40, 40), voxel_size=(17.28,) * 3)
        out = super_resolve_volume(net, spec, lr,
                                   TileSpec(tile_yx=(24, 24), overlap_yx=(6, 6), blend="linear_feather"))
        assert np.allclose(out.data, 0.5, atol=1e-6)

    def test_oversized_tile_clamps_with_warning(self):
        spec = NetworkSpec("srcnn", "2d")
        net = build_network(spec).eval()
        lr = rand_volume((2, 20, 20), voxel_size=(17.28,) * 3)
        with pytest.warns(UserWarning, match="clamping"):
            out = super_resolve_volume(net, spec, lr, TileSpec(tile_yx=(64, 64), overlap_yx=(4, 4)))
        assert out.shape == (2, 20, 20)

    def test_non_finite_output_aborts_naming_tile(self):
        spec = NetworkSpec("srcnn", "2d")
        net = build_network(spec).eval()
        with torch.no_grad():
            net.conv3.bias.fill_(float("nan"))
        lr = rand_volume((2, 16, 16), voxel_size=(17.28,) * 3)
        with pytest.raises(RuntimeError, match=r"tile \(y=0, x=0\)"):
            super_resolve_volume(net, spec, lr, TileSpec(tile_yx=(16, 16), overlap_yx=(0, 0)))

    def test_3d_mode_chunks(self):
        spec = NetworkSpec("edsr", "3d", edsr_blocks=1)
        net = build_network(spec).eval()
        lr = rand_volume((8, 12, 12))
        tiles = TileSpec(tile_yx=(8, 8), overlap_yx=(2, 2), z_chunk=6)
        out = super_resolve_volume(net, spec, lr, tiles)
        assert out.shape == (32, 48, 48)


class TestEmbedding:
    @pytest.mark.parametrize("family,kwargs", [
        ("srcnn", {}),
        ("edsr", {"edsr_blocks": 3}),
        ("esrgan", {"esrgan_rrdb_blocks": 2}),
    ])
    def test_forward_equivalence(self, family, kwargs):
        net2 = build_network(NetworkSpec(family, "2d", **kwargs), init_seed=4).eval()
        net25 = embed_2d_as_25d(net2)
        x = torch.rand(2, 7, 16, 16)
        with torch.no_grad():
            a = net25(x)
            b = net2(x[:, 3:4])
        assert (a - b).abs().max() <= 1e-6

    def test_neighbor_noise_ignored(self):
        net2 = build_network(NetworkSpec("srcnn", "2d"), init_seed=1).eval()
        net25 = embed_2d_as_25d(net2)
        x = torch.rand(1, 7, 20, 20)
        noisy = x.clone()
        noisy[:, [0, 1, 2, 4, 5, 6]] = torch.randn(1, 6, 20, 20) * 100
        with torch.no_grad():
            assert (net25(x) - net25(noisy)).abs().max() <= 1e-6

    def test_parameter_delta_is_6mnk(self):
        for family, mnk in (("srcnn", 9 * 9 * 64), ("edsr", 3 * 3 * 64), ("esrgan", 3 * 3 * 64)):
            net2 = build_network(NetworkSpec(family, "2d"))
            net25 = embed_2d_as_25d(net2)
            delta = count_parameters(net25).total - count_parameters(net2).total
            assert delta == 6 * mnk

    def test_rejects_non_2d_network(self):
        net = build_network(NetworkSpec("srcnn", "2.5d"))
        with pytest.raises(ValueError, match="2d"):
            embed_2d_as_25d(net)


class TestMemoryEstimate:
    def test_batch_linearity(self):
        spec = NetworkSpec("srcnn", "2d")
        e1 = estimate_activation_memory(spec, (1, 64, 64), batch=1)
        e2 = estimate_activation_memory(spec, (1, 64, 64), batch=2)
        assert e2.total_activation_bytes == 2 * e1.total_activation_bytes
        assert [b for _, b in e2.per_layer] == [2 * b for _, b in e1.per_layer]

    def test_25d_increase_confined_to_first_layer_input(self):
        e2 = estimate_activation_memory(NetworkSpec("srcnn", "2d"), (1, 128, 128))
        e25 = estimate_activation_memory(NetworkSpec("srcnn", "2.5d"), (7, 128, 128))
        # layer outputs identical; only the input tensor and first-layer params grow
        assert [b for _, b in e2.per_layer] == [b for _, b in e25.per_layer]
        assert e25.assumptions["input_bytes"] == 7 * e2.assumptions["input_bytes"]
        assert e25.total_bytes / e2.total_bytes < 1.05

    @pytest.mark.parametrize("family,shape2,shape3", [
        ("srcnn", (1, 128, 128), (128, 128, 128)),
        ("edsr", (1, 32, 32), (32, 32, 32)),
        ("esrgan", (1, 32, 32), (32, 32, 32)),
    ])
    def test_3d_dwarfs_2d(self, family, shape2, shape3):
        e2 = estimate_activation_memory(NetworkSpec(family, "2d"), shape2)
        e3 = estimate_activation_memory(NetworkSpec(family, "3d"), shape3)
        assert e3.total_bytes > 10 * e2.total_bytes

    def test_peak_at_least_max_layer(self):
        for family in ("srcnn", "edsr", "esrgan"):
            e = estimate_activation_memory(NetworkSpec(family, "2d"), (1, 32, 32))
            assert e.peak_activation_bytes >= max(b for _, b in e.per_layer)

    def test_parameter_bytes_match_exact_count(self):
        spec = NetworkSpec("srcnn", "2.5d")
        e = estimate_activation_memory(spec, (7, 32, 32))
        assert e.parameters_bytes == 88_385 * 4

    def test_input_shape_validation(self):
        with pytest.raises(ValueError, match="in_slices"):
            estimate_activation_memory(NetworkSpec("srcnn", "2.5d"), (5, 32, 32))
