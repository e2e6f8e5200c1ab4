"""Graph-adaptive activation functions for distributable graph networks."""

from .graph import (
    Graph,
    PermutationMap,
    GenerationError,
    PowerIterationError,
    SHIFT_COUNTER,
    graph_from_edges,
    sbm_generate,
    knn_geometric,
    normalize_gso,
    spectral_radius,
    shift,
    shift_stack,
    permute,
    permute_signal,
    sample_link_loss,
    inf_norm_max_power,
    is_connected,
    save_edge_list,
    load_edge_list,
    load_coords,
)
from .filters import FilterTaps, FilterBank, graph_convolution, filter_bank_apply
from .activations import (
    ACTIVATION_KINDS,
    ActivationParams,
    KHopNeighborhoods,
    relu,
    khop_sets,
    localized_activation,
    shifted_localized_operator,
    shifted_localized_graph_filter,
    ga_localized_activation,
    gaussian_kernel,
    kernel_operator,
    kernel_graph_filter,
    ga_kernel_activation,
    lipschitz_bound,
)
from .autograd import (
    Param,
    ParamStore,
    Tape,
    adam_step,
    loss_cross_entropy,
    loss_mse,
    loss_smooth_l1,
    finite_difference_check,
)
from .model import (
    GcnnConfig,
    GcnnModel,
    Dataset,
    TrainResult,
    CheckpointError,
    forward,
    predict,
    train,
    evaluate,
    checkpoint_save,
    checkpoint_load,
    checkpoint_header,
    equivariance_test,
    gradient_check,
)
from .distsim import (
    MessageLog,
    NodeState,
    NotDistributableError,
    run_distributed_forward,
    round_count,
    message_count,
)

__version__ = "0.1.0"
