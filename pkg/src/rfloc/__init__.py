"""Indoor localization from RF fingerprints.

A two-stage k-NN cascade: classify the surrounding environment first, then
estimate position with that environment's best feature combination. Includes
a synthetic multipath channel simulator so the whole pipeline is verifiable
without a measurement campaign.
"""

from .channel import (
    ChannelRealization,
    CtfSweep,
    EnvironmentProfile,
    FcfSweep,
    FrequencyGrid,
    MultipathComponent,
    compute_fcf,
    compute_rss,
    default_profiles,
    draw_realization,
    synth_ctf,
)
from .cascade import (
    CascadeModel,
    LocalizationResult,
    Policy,
    carve_validation,
    fit,
    fit_policy,
    load_model,
    localize,
    save_model,
)
from .dataset import (
    GridGeometry,
    Measurement,
    MeasurementSet,
    SplitSpec,
    generate_synthetic,
    load_measurements,
    save_measurement_set,
    split,
)
from .errors import DataFileError, RflocError, ValidationError
from .evaluation import (
    ConfusionMatrix,
    EvalReport,
    FeatureTable,
    LatencyStats,
    alpha,
    cascade_rmse,
    confusion,
    feature_table,
    rmse,
    sweep_k,
    time_queries,
)
from .features import (
    ALL_KINDS,
    FeatureKind,
    FeatureRepr,
    FeatureVector,
    build_feature,
    build_matrix,
)
from .knn import (
    FingerprintModel,
    KnnConfig,
    build_fingerprint_model,
    classify,
    distance,
    locate,
    nearest,
)

__version__ = "0.1.0"
