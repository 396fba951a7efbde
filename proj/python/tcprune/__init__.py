"""Transfer channel pruning for unsupervised domain adaptation models.

Thin package wrapper around the compiled ``_core`` module: graph builders,
forward/masked forward, the UDA losses, the transfer criterion, the prune
driver, and the binary tensor/checkpoint formats.
"""

from ._core import (  # noqa: F401
    ConfigError,
    DataError,
    FormatError,
    ModelGraph,
    NumericError,
    ParameterStore,
    StructuralError,
    __version__,
    beta_schedule,
    build_graph,
    count_flops,
    count_params,
    cross_entropy,
    evaluate_accuracy,
    forward,
    generate_domains,
    init_params,
    load_checkpoint,
    load_tcpt,
    masked_forward,
    mmd,
    run_prune,
    save_checkpoint,
    save_tcpt,
    train_base,
    transfer_scores,
)
