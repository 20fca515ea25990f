"""Spherical rotary position encoding for geotokens."""

from .attention import (
    AnchorCrossEntropy,
    AttentionLayer,
    Batch,
    EncoderKind,
    GeoTransformer,
    ModelConfig,
    MSELoss,
    attention_forward,
    backward,
    encode_qk,
    gradient_check,
    project_qkv,
)
from .baselines import RopeSchedule, RopeVariant, rope_rotate, rope_schedule, rope_theta, sinusoidal_encoding
from .geo import EARTH, UNIT_SPHERE, GeoPosition, Geotoken, SphereModel, great_circle_distance, make_position, sample_uniform_sphere
from .spherical import (
    EncodingConfig,
    Mode,
    PadPolicy,
    SphericalEncoding,
    apply_blockwise,
    apply_dense,
    as_printed_block,
    build_encoding,
    euler_rotation,
    frequency_schedule,
    relative_rotation,
    spherical_block,
)

__version__ = "0.1.0"
