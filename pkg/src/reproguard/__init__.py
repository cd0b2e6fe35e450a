"""Bit-exact reproducibility safeguarding for learned compression codecs."""

from .errors import (
    BadMagicError,
    ConfigError,
    FieldValueError,
    GuardError,
    InvalidInputError,
    LengthOverflowError,
    MalformedStreamError,
    PlyParseError,
    ReproGuardError,
    TrailingDataError,
    TruncatedStreamError,
    UnsupportedVersionError,
)
from .quantizer import (
    QuantGrid,
    dequantize,
    dequantize_array,
    get_table,
    quantize,
    quantize_array,
    register_table,
    validate,
)
from .safeguard import (
    FlagStream,
    GuardConfig,
    GuardedValue,
    GuardMode,
    finalize_flags,
    guard_decode,
    guard_decode_array,
    guard_encode,
    guard_encode_array,
)
from .entropy import (
    CdfTable,
    FlagReader,
    RangeDecoder,
    RangeEncoder,
    decode_flags,
    encode_flags,
    gaussian_cdf_table,
    prob_to_p16,
)
from .container import (
    GuardedStream,
    HyperpriorHeader,
    OctreeHeader,
    PayloadKind,
    RawHeader,
    TableDesc,
    UniformDesc,
    read,
    read_file,
    write,
    write_file,
)
from .platform_sim import PRESETS, Perturbation, preset
from . import hyperprior, octree, raw_values

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ReproGuardError",
    "ConfigError",
    "InvalidInputError",
    "GuardError",
    "MalformedStreamError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedStreamError",
    "LengthOverflowError",
    "FieldValueError",
    "TrailingDataError",
    "PlyParseError",
    "QuantGrid",
    "validate",
    "quantize",
    "quantize_array",
    "dequantize",
    "dequantize_array",
    "register_table",
    "get_table",
    "GuardMode",
    "GuardConfig",
    "GuardedValue",
    "FlagStream",
    "guard_encode",
    "guard_decode",
    "guard_encode_array",
    "guard_decode_array",
    "finalize_flags",
    "RangeEncoder",
    "RangeDecoder",
    "FlagReader",
    "encode_flags",
    "decode_flags",
    "prob_to_p16",
    "CdfTable",
    "gaussian_cdf_table",
    "GuardedStream",
    "PayloadKind",
    "UniformDesc",
    "TableDesc",
    "OctreeHeader",
    "HyperpriorHeader",
    "RawHeader",
    "read",
    "write",
    "read_file",
    "write_file",
    "Perturbation",
    "preset",
    "PRESETS",
    "octree",
    "hyperprior",
    "raw_values",
]
