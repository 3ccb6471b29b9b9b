"""lockmark: lock image datasets behind optimized visible adversarial
watermarks, verify per-user keys, and reverse the watermark exactly."""

from .errors import (
    AuthorizationError,
    ConfigurationError,
    DecodeError,
    GeometryError,
    InfeasibleConstraintError,
    LockmarkError,
    OracleIOError,
    ParameterError,
    SingularInverseError,
    UndefinedMetricError,
)
from .evolve import AttackResult, EsConfig, Individual, attack_image
from .harness import LabeledDataset, accuracy, asr, compare_mutation, transfer_matrix
from .keystore import KeyEntry, KeyFile, lock_dataset, unlock_dataset, verify_key
from .lesion_mask import (
    BBox,
    BinaryMask,
    ConstraintMode,
    ConstraintRegion,
    MaskConfig,
    build_constraint,
)
from .oracle import (
    EnsembleOracle,
    Oracle,
    ProcOracle,
    ScoreVector,
    TcpOracle,
    ToyBrightnessOracle,
    ToyTemplateOracle,
    ToyTiledHistogramOracle,
    predicted_class,
    resolve_oracle,
)
from .raster import (
    Placement,
    RgbaImage,
    WatermarkLogo,
    blend,
    load_png,
    save_png,
    scale_logo,
    unblend,
)

__version__ = "0.1.0"
