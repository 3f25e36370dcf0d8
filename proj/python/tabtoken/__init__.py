"""Feature-token tabular learner with cross-feature-set transfer."""

from tabtoken._core import (
    ConfigError,
    DataError,
    combine_average,
    ctr_loss,
    default_config_json,
    export_tokens,
    finetune,
    generate_synthetic_csv,
    make_split_manifest,
    metric_accuracy,
    metric_rmse,
    pretrain,
    pseudo_labels_regression,
    run_protocol,
    token_report,
    __version__,
)

__all__ = [
    "ConfigError",
    "DataError",
    "combine_average",
    "ctr_loss",
    "default_config_json",
    "export_tokens",
    "finetune",
    "generate_synthetic_csv",
    "make_split_manifest",
    "metric_accuracy",
    "metric_rmse",
    "pretrain",
    "pseudo_labels_regression",
    "run_protocol",
    "token_report",
    "__version__",
]
