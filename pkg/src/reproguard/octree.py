"""Octree occupancy codec with safeguarded context probabilities.

Geometry is stored as Morton codes.  Coding walks the tree one level at a
time with exactly eight octant passes per level; within a pass the context
of a child depends only on data coded in earlier passes or levels, so both
sides can evaluate the predictor on whole batches.  Every predicted
occupancy probability is a coder-critical value: it is safeguarded, and the
entropy coder only ever sees the protected copy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import (
    GuardedStream,
    OctreeHeader,
    PayloadKind,
    UniformDesc,
)
from .entropy import (
    FlagReader,
    RangeDecoder,
    RangeEncoder,
    encode_flags,
    prob_to_p16_array,
)
from .errors import (
    ConfigError,
    FieldValueError,
    InvalidInputError,
    MalformedStreamError,
    PlyParseError,
)
from .platform_sim import Perturbation, splitmix64, splitmix64_array, unit_from_u64
from .quantizer import QuantGrid
from .safeguard import (
    FlagStream,
    GuardConfig,
    GuardMode,
    guard_decode_array,
    guard_encode_array,
)

__all__ = [
    "VoxelCloud",
    "voxelize",
    "synth_cloud",
    "OctreeContext",
    "predict",
    "make_pc_config",
    "encode",
    "decode",
    "read_ply",
    "write_ply",
    "morton_encode",
    "morton_decode",
]

_U = np.uint64


# ---------------------------------------------------------------------------
# Morton codes (x-major interleave, 21 bits per axis)


def _split_by_3(a: np.ndarray) -> np.ndarray:
    x = a.astype(np.uint64) & _U(0x1FFFFF)
    x = (x | (x << _U(32))) & _U(0x1F00000000FFFF)
    x = (x | (x << _U(16))) & _U(0x1F0000FF0000FF)
    x = (x | (x << _U(8))) & _U(0x100F00F00F00F00F)
    x = (x | (x << _U(4))) & _U(0x10C30C30C30C30C3)
    x = (x | (x << _U(2))) & _U(0x1249249249249249)
    return x


def _compact_by_3(x: np.ndarray) -> np.ndarray:
    x = x & _U(0x1249249249249249)
    x = (x | (x >> _U(2))) & _U(0x10C30C30C30C30C3)
    x = (x | (x >> _U(4))) & _U(0x100F00F00F00F00F)
    x = (x | (x >> _U(8))) & _U(0x1F0000FF0000FF)
    x = (x | (x >> _U(16))) & _U(0x1F00000000FFFF)
    x = (x | (x >> _U(32))) & _U(0x1FFFFF)
    return x


def morton_encode(xyz: np.ndarray) -> np.ndarray:
    """(N, 3) integer coordinates -> uint64 Morton codes."""
    xyz = np.asarray(xyz)
    return (
        (_split_by_3(xyz[:, 0]) << _U(2))
        | (_split_by_3(xyz[:, 1]) << _U(1))
        | _split_by_3(xyz[:, 2])
    )


def morton_decode(codes: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.uint64)
    out = np.empty((codes.shape[0], 3), dtype=np.int64)
    out[:, 0] = _compact_by_3(codes >> _U(2)).astype(np.int64)
    out[:, 1] = _compact_by_3(codes >> _U(1)).astype(np.int64)
    out[:, 2] = _compact_by_3(codes).astype(np.int64)
    return out


# ---------------------------------------------------------------------------
# voxel clouds


@dataclass(frozen=True)
class VoxelCloud:
    """Deduplicated voxels of a point cloud, Morton-sorted."""

    bit_depth: int
    codes: np.ndarray  # sorted unique uint64

    def __post_init__(self) -> None:
        if not 1 <= self.bit_depth <= 21:
            raise ConfigError(f"bit depth {self.bit_depth} outside [1, 21]")

    def __len__(self) -> int:
        return int(self.codes.shape[0])

    def points(self) -> np.ndarray:
        return morton_decode(self.codes)

    @classmethod
    def from_voxels(cls, voxels: np.ndarray, bit_depth: int) -> "VoxelCloud":
        v = np.asarray(voxels, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 1:
            raise InvalidInputError("voxels must be a non-empty (N, 3) array")
        if np.any(v < 0) or np.any(v >= (1 << bit_depth)):
            raise InvalidInputError("voxel coordinates outside the grid")
        codes = np.unique(morton_encode(v))
        return cls(bit_depth=bit_depth, codes=codes)


def voxelize(points: np.ndarray, bit_depth: int) -> VoxelCloud:
    """Min-max normalize raw points onto the integer grid, then dedupe."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise InvalidInputError("points must be a non-empty (N, 3) array")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("points must be finite")
    top = float((1 << bit_depth) - 1)
    mn = pts.min(axis=0)
    span = pts.max(axis=0) - mn
    span[span == 0.0] = 1.0
    scaled = (pts - mn) / span * top
    vox = np.floor(scaled + 0.5).astype(np.int64)
    np.clip(vox, 0, int(top), out=vox)
    return VoxelCloud.from_voxels(vox, bit_depth)


def synth_cloud(kind: str, bit_depth: int, count: int, seed: int) -> VoxelCloud:
    """Seeded synthetic clouds: a contiguous deformed-sphere shell (dense)
    or uniform random voxels (sparse)."""
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    rng = np.random.default_rng(seed)
    side = 1 << bit_depth
    if kind == "sparse":
        vox = rng.integers(0, side, size=(count, 3), dtype=np.int64)
        return VoxelCloud.from_voxels(vox, bit_depth)
    if kind != "dense":
        raise ConfigError(f"unknown cloud kind {kind!r}")
    dirs = rng.normal(size=(count, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    bump = (
        1.0
        + 0.22 * np.sin(3.0 * dirs[:, 0] + 1.3)
        + 0.17 * np.cos(2.0 * dirs[:, 1] - 0.7)
        + 0.13 * np.sin(2.0 * dirs[:, 2])
    )
    # radius chosen so the shell area is on the order of the sample count,
    # which keeps neighboring samples in adjacent voxels (a dense surface)
    radius = min(np.sqrt(count / (4.0 * np.pi)) * 1.15, 0.45 * (side - 1))
    center = (side - 1) / 2.0
    pts = center + dirs * (radius * bump)[:, None]
    vox = np.floor(pts + 0.5).astype(np.int64)
    np.clip(vox, 0, side - 1, out=vox)
    return VoxelCloud.from_voxels(vox, bit_depth)


# ---------------------------------------------------------------------------
# context model
#
# A stand-in for a learned occupancy predictor: logistic regression over
# level phase, octant, already-coded sibling occupancy, the parent's
# sibling occupancy, grandparent presence, and a hashed ancestral identity
# that varies smoothly per node.

_WEIGHT_SEED = 0xC0DEC0DE
_N_FEATURES = 6


def _draw_weights() -> tuple[np.ndarray, float]:
    vals = [
        unit_from_u64(splitmix64((_WEIGHT_SEED + i * 0x9E3779B97F4A7C15) & (2**64 - 1)))
        * 4.0
        - 2.0
        for i in range(_N_FEATURES + 1)
    ]
    return np.array(vals[:_N_FEATURES], dtype=np.float64), float(vals[_N_FEATURES])


_W, _BIAS = _draw_weights()

_HASH_C1 = 0xD6E8FEB86659FD93
_HASH_C2 = 0xA5A5A5A5A5A5A5A5


def _ancestral_unit(parent_codes: np.ndarray, depth: int, octant: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = (
            parent_codes.astype(np.uint64) * _U(_HASH_C1)
            + _U(depth) * _U(_HASH_C2)
            + _U(octant)
        )
    return unit_from_u64(splitmix64_array(x))


@dataclass(frozen=True)
class OctreeContext:
    """Causal context of one child node."""

    depth: int
    octant: int
    coded_siblings: int
    parent_siblings: int
    grandparent: int
    parent_code: int
    bit_depth: int


def _features(
    depth: int,
    bit_depth: int,
    octant: int,
    coded_siblings: np.ndarray,
    parent_siblings: np.ndarray,
    parent_codes: np.ndarray,
) -> np.ndarray:
    n = parent_codes.shape[0]
    f = np.empty((n, _N_FEATURES), dtype=np.float64)
    f[:, 0] = depth / bit_depth
    f[:, 1] = octant / 7.0
    f[:, 2] = coded_siblings / 7.0
    f[:, 3] = parent_siblings / 8.0
    f[:, 4] = 1.0 if depth >= 3 else 0.0
    f[:, 5] = _ancestral_unit(parent_codes, depth, octant)
    return f


def _predict_batch(f: np.ndarray) -> np.ndarray:
    # fixed evaluation order keeps both sides bit-identical
    t = np.full(f.shape[0], _BIAS, dtype=np.float64)
    for j in range(_N_FEATURES):
        t += _W[j] * f[:, j]
    return 1.0 / (1.0 + np.exp(-t))


def predict(ctx: OctreeContext) -> float:
    """Occupancy probability of one child; strictly inside (0, 1)."""
    if not 0 <= ctx.octant <= 7:
        raise InvalidInputError("octant outside [0, 7]")
    if not 0 <= ctx.coded_siblings <= 7:
        raise InvalidInputError("coded sibling count outside [0, 7]")
    if not 0 <= ctx.parent_siblings <= 8:
        raise InvalidInputError("parent sibling count outside [0, 8]")
    if ctx.grandparent not in (0, 1):
        raise InvalidInputError("grandparent flag must be a bit")
    f = _features(
        ctx.depth,
        ctx.bit_depth,
        ctx.octant,
        np.array([ctx.coded_siblings], dtype=np.float64),
        np.array([ctx.parent_siblings], dtype=np.float64),
        np.array([ctx.parent_code], dtype=np.uint64),
    )
    f[:, 4] = float(ctx.grandparent)
    return float(_predict_batch(f)[0])


# ---------------------------------------------------------------------------
# codec


def make_pc_config(
    epsilon: float, k: int = 250, mode: GuardMode | str = GuardMode.CENTER
) -> GuardConfig:
    """Probability grid q = 1/k on [0, 1] with both edges clipped."""
    if k < 1:
        raise ConfigError("k must be a positive integer")
    grid = QuantGrid.uniform(1.0 / k, 0.0, domain=(0.0, 1.0))
    return GuardConfig(grid=grid, epsilon=epsilon, mode=mode, edge_clip=(0.0, 1.0))


def _check_pc_config(cfg: GuardConfig) -> None:
    g = cfg.grid
    if not g.is_uniform or g.s != 0.0 or g.domain != (0.0, 1.0):
        raise ConfigError("octree coding needs a uniform grid with s=0 on [0, 1]")
    if cfg.edge_clip != (0.0, 1.0):
        raise ConfigError("octree coding clips probabilities to [0, 1]")


def _level_codes(cloud: VoxelCloud) -> list[np.ndarray]:
    levels = [None] * (cloud.bit_depth + 1)
    levels[cloud.bit_depth] = cloud.codes
    for lvl in range(cloud.bit_depth - 1, -1, -1):
        levels[lvl] = np.unique(levels[lvl + 1] >> _U(3))
    return levels


def _sibling_counts(codes: np.ndarray) -> np.ndarray:
    """For each node, how many nodes (itself included) share its parent."""
    parents = codes >> _U(3)
    uniq, counts = np.unique(parents, return_counts=True)
    return counts[np.searchsorted(uniq, parents)].astype(np.int64)


def _membership(sorted_codes: np.ndarray, queries: np.ndarray) -> np.ndarray:
    if sorted_codes.shape[0] == 0:
        return np.zeros(queries.shape[0], dtype=np.uint8)
    pos = np.searchsorted(sorted_codes, queries)
    pos = np.minimum(pos, sorted_codes.shape[0] - 1)
    return (sorted_codes[pos] == queries).astype(np.uint8)


def encode(
    cloud: VoxelCloud,
    cfg: GuardConfig,
    protect: bool = True,
    trace: list | None = None,
) -> GuardedStream:
    """Code a voxel cloud; returns the container object."""
    _check_pc_config(cfg)
    levels = _level_codes(cloud)
    n = cloud.bit_depth
    enc = RangeEncoder()
    fr_parts: list[np.ndarray] = []
    fd_parts: list[np.ndarray] = []

    for lvl in range(n):
        parents = levels[lvl]
        children = levels[lvl + 1]
        depth = lvl + 1
        if lvl == 0:
            n_par = np.ones(parents.shape[0], dtype=np.int64)
        else:
            n_par = _sibling_counts(parents)
        occ = np.zeros(parents.shape[0], dtype=np.int64)
        for octant in range(8):
            child_codes = (parents << _U(3)) | _U(octant)
            bits = _membership(children, child_codes)
            feats = _features(
                depth, n, octant, occ.astype(np.float64), n_par.astype(np.float64),
                parents,
            )
            p = np.clip(_predict_batch(feats), 0.0, 1.0)
            if protect:
                v_out, fr, fd = guard_encode_array(cfg, p)
                fr_parts.append(fr)
                fd_parts.append(fd)
                p16 = prob_to_p16_array(v_out)
            else:
                p16 = prob_to_p16_array(p)
            enc.encode_bits(bits, p16)
            if trace is not None:
                trace.append((depth, octant, parents.shape[0], feats))
            occ += bits

    if protect:
        flags = FlagStream.from_arrays(
            np.concatenate(fr_parts) if fr_parts else np.empty(0, dtype=np.uint8),
            np.concatenate(fd_parts) if fd_parts else np.empty(0, dtype=np.int8),
        )
        guard_bytes = encode_flags(flags, cfg.mode)
        p0_q16 = flags.p0_q16
        flag_count = len(flags)
    else:
        guard_bytes = b""
        p0_q16 = 32768
        flag_count = 0

    return GuardedStream(
        mode=cfg.mode,
        payload_kind=PayloadKind.OCTREE,
        epsilon=cfg.epsilon,
        grid_desc=UniformDesc(q=cfg.grid.q, s=cfg.grid.s),
        p0_q16=p0_q16,
        flag_count=flag_count,
        payload=OctreeHeader(bit_depth=n, point_count=len(cloud)),
        safeguard=guard_bytes,
        main=enc.finish(),
    )


def decode(
    stream: GuardedStream,
    perturb: Perturbation | None = None,
    trace: list | None = None,
) -> VoxelCloud:
    """Decode a voxel cloud, optionally recomputing probabilities through a
    simulated platform.  flag_count == 0 means the stream was unprotected."""
    if stream.payload_kind != PayloadKind.OCTREE:
        raise FieldValueError("not an octree stream")
    if not isinstance(stream.grid_desc, UniformDesc):
        raise FieldValueError("octree streams carry a uniform grid")
    try:
        cfg = GuardConfig(
            grid=QuantGrid.uniform(
                stream.grid_desc.q, stream.grid_desc.s, domain=(0.0, 1.0)
            ),
            epsilon=stream.epsilon,
            mode=stream.mode,
            edge_clip=(0.0, 1.0),
        )
        _check_pc_config(cfg)
    except ConfigError as exc:
        raise FieldValueError(f"stream grid unusable for octree payload: {exc}") from None

    header: OctreeHeader = stream.payload
    n = header.bit_depth
    protected = stream.flag_count > 0
    flags = FlagReader(stream.safeguard, stream.flag_count, stream.p0_q16, stream.mode)
    dec = RangeDecoder(stream.main)

    current = np.zeros(1, dtype=np.uint64)  # the root
    for lvl in range(n):
        parents = current
        depth = lvl + 1
        if lvl == 0:
            n_par = np.ones(parents.shape[0], dtype=np.int64)
        else:
            n_par = _sibling_counts(parents)
        occ = np.zeros(parents.shape[0], dtype=np.int64)
        next_parts: list[np.ndarray] = []
        for octant in range(8):
            child_codes = (parents << _U(3)) | _U(octant)
            feats = _features(
                depth, n, octant, occ.astype(np.float64), n_par.astype(np.float64),
                parents,
            )
            p = np.clip(_predict_batch(feats), 0.0, 1.0)
            if perturb is not None:
                p = np.clip(perturb.perturb_array(p, cfg.grid), 0.0, 1.0)
            if protected:
                fr, fd = flags.take(p.shape[0])
                v_out = guard_decode_array(cfg, p, fr, fd)
                p16 = prob_to_p16_array(v_out)
            else:
                p16 = prob_to_p16_array(p)
            bits = dec.decode_bits(p16)
            if trace is not None:
                trace.append((depth, octant, parents.shape[0], feats))
            occ += bits
            next_parts.append(child_codes[bits == 1])
        current = np.sort(np.concatenate(next_parts))
        if current.shape[0] > header.point_count:
            raise MalformedStreamError(
                "decoded occupancy exceeds the declared point count"
            )

    if protected and not flags.exhausted:
        raise MalformedStreamError("flag count does not match the decoded tree")
    return VoxelCloud(bit_depth=n, codes=current)


# ---------------------------------------------------------------------------
# ASCII PLY I/O

_INT_PLY_TYPES = {
    "char", "uchar", "short", "ushort", "int", "uint",
    "int8", "uint8", "int16", "uint16", "int32", "uint32",
}
_FLOAT_PLY_TYPES = {"float", "double", "float32", "float64"}


def write_ply(path, cloud: VoxelCloud) -> None:
    pts = cloud.points()
    lines = [
        "ply",
        "format ascii 1.0",
        f"comment bit_depth {cloud.bit_depth}",
        f"element vertex {len(cloud)}",
        "property int x",
        "property int y",
        "property int z",
        "end_header",
    ]
    body = "\n".join(f"{x} {y} {z}" for x, y, z in pts.tolist())
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n" + body + "\n")


def read_ply(path, bit_depth: int | None = None) -> VoxelCloud:
    """Parse an ASCII PLY.  Integer in-range coordinates are taken verbatim;
    anything else is voxelized.  Bit depth comes from the argument or a
    ``comment bit_depth N`` header line."""
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        first = fh.readline().strip()
        if first != "ply":
            raise PlyParseError("missing ply magic line")
        fmt_seen = False
        vertex_count = None
        props: list[tuple[str, str]] = []
        in_vertex = False
        header_depth = None
        while True:
            line = fh.readline()
            if not line:
                raise PlyParseError("header ended without end_header")
            line = line.strip()
            if not line:
                continue
            if line == "end_header":
                break
            parts = line.split()
            if parts[0] == "format":
                if parts[1:] != ["ascii", "1.0"]:
                    raise PlyParseError(f"unsupported format {line!r}")
                fmt_seen = True
            elif parts[0] == "comment":
                if len(parts) == 3 and parts[1] == "bit_depth":
                    try:
                        header_depth = int(parts[2])
                    except ValueError:
                        raise PlyParseError("bad bit_depth comment") from None
            elif parts[0] == "element":
                if len(parts) != 3:
                    raise PlyParseError(f"bad element line {line!r}")
                in_vertex = parts[1] == "vertex"
                if in_vertex:
                    try:
                        vertex_count = int(parts[2])
                    except ValueError:
                        raise PlyParseError("bad vertex count") from None
            elif parts[0] == "property":
                if in_vertex:
                    if len(parts) != 3:
                        raise PlyParseError(f"bad property line {line!r}")
                    ptype, pname = parts[1], parts[2]
                    if ptype not in _INT_PLY_TYPES | _FLOAT_PLY_TYPES:
                        raise PlyParseError(f"unsupported property type {ptype!r}")
                    props.append((ptype, pname))
        if not fmt_seen:
            raise PlyParseError("missing format line")
        if vertex_count is None:
            raise PlyParseError("missing vertex element")
        names = [p[1] for p in props]
        try:
            cols = [names.index(axis) for axis in ("x", "y", "z")]
        except ValueError:
            raise PlyParseError("vertex element lacks x, y, z") from None

        depth = bit_depth if bit_depth is not None else header_depth
        if depth is None:
            raise PlyParseError("bit depth unknown: pass one or add the comment")

        pts = np.empty((vertex_count, 3), dtype=np.float64)
        for i in range(vertex_count):
            line = fh.readline()
            if not line:
                raise PlyParseError(
                    f"vertex data truncated at row {i} of {vertex_count}"
                )
            fields = line.split()
            if len(fields) < len(props):
                raise PlyParseError(f"short vertex row {i}")
            try:
                for j, c in enumerate(cols):
                    pts[i, j] = float(fields[c])
            except ValueError:
                raise PlyParseError(f"non-numeric vertex row {i}") from None

    if not np.all(np.isfinite(pts)):
        raise PlyParseError("non-finite vertex coordinates")
    side = 1 << depth
    integral = np.all(pts == np.floor(pts))
    if integral and np.all(pts >= 0) and np.all(pts < side):
        return VoxelCloud.from_voxels(pts.astype(np.int64), depth)
    return voxelize(pts, depth)
