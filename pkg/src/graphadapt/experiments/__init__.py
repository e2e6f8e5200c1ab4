"""Experiment protocols, data generation, and the command-line interface."""

from .datasets import (
    RatingsMatrix,
    add_noise_snr,
    gen_consensus,
    gen_smooth_signals,
    gen_source_localization,
    load_molene,
    load_movielens,
    make_dataset,
    movie_graph,
    random_coords,
    recsys_samples,
    split_indices,
    synthetic_ratings,
)
from .runners import (
    SpecError,
    config_hash,
    default_spec,
    resolve_spec,
    run_consensus,
    run_experiment,
    run_recsys,
    run_regression,
    run_source_localization,
    run_sweep,
)
