"""Privacy-preserving collaborative QoS prediction for Web services.

Users obfuscate their observed QoS values (z-score normalization plus
random noise) before submission; the server predicts missing values on
the obfuscated matrix with neighborhood CF (P-UIPCC) or biased matrix
factorization (P-PMF); users recover real-scale predictions locally.
Plain counterparts (UMEAN, IMEAN, UIPCC, PMF) and an MAE evaluation
harness round out the library.
"""

from .baselines import predict_imean, predict_umean
from .dataset import (
    DatasetStats,
    LoadError,
    QosMatrix,
    SplitConfig,
    load_dense_matrix,
    load_triples,
    save_triples,
    split_by_density,
    stats,
    synth_lowrank,
)
from .evaluation import (
    APPROACHES,
    EvalRecord,
    EvalReport,
    ExperimentConfig,
    compare_noise_distributions,
    export_csv,
    mae,
    run_experiment,
)
from .factorization import (
    FactorModel,
    TrainConfig,
    TrainingError,
    grad_pmf,
    grad_ppmf,
    init_model,
    load_model,
    loss_pmf,
    loss_ppmf,
    predict_pmf,
    predict_ppmf,
    save_model,
    train_pmf,
    train_ppmf,
)
from .neighborhood import (
    NeighborConfig,
    SimilarityTable,
    approx_user_similarity,
    combine,
    cosine_service_similarity,
    pcc_user_similarity,
    predict_all_puipcc,
    predict_all_uipcc,
    predict_service_based,
    predict_user_based,
    top_k_neighbors,
)
from .obfuscation import (
    ObfuscatedMatrix,
    ObfuscationConfig,
    UserSecret,
    normalize_row,
    obfuscate_matrix,
    perturb_row,
    recover,
    recover_matrix,
    scalar_product_error,
)

__version__ = "0.1.0"
