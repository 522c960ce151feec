from .config import (
    BaselineConfig,
    ConfigError,
    DataConfig,
    DownstreamConfig,
    ModelConfig,
    PretrainConfig,
    RunConfig,
    config_from_dict,
    load_config,
)
from .diagnostic import embed, invariance_from_embeddings, view_invariance_diagnostic
from .loops import (
    DivergenceError,
    LabelSubsetError,
    TrainingError,
    build_datasets,
    deterministic_threads,
    downstream_train,
    load_network,
    predict_dataset,
    prepare_labeled,
    pretrain,
    save_training_checkpoint,
    stratified_label_subset,
    supervised_baseline,
)
from .report import TrainReport
