"""Unsupervised domain adaptation for tensor-valued data.

Submodules are imported lazily so the command-line entry point can configure
numerical-thread environment variables before numpy loads.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "NTSL": "adapt",
    "TAISL": "adapt",
    "ConvergenceWarning": "adapt",
    "precompute_mstep": "adapt",
    "total_loss": "adapt",
    "default_ranks": "adapt",
    "TensorSubspace": "tucker",
    "TuckerModel": "tucker",
    "hosvd": "tucker",
    "hooi": "tucker",
    "QuadraticStiefelProblem": "stiefel",
    "StiefelSolverOptions": "stiefel",
    "StiefelResult": "stiefel",
    "minimize_on_stiefel": "stiefel",
    "reorthonormalize": "stiefel",
    "unfold": "tensor_ops",
    "fold": "tensor_ops",
    "mode_product": "tensor_ops",
    "multi_mode_product": "tensor_ops",
    "kronecker": "tensor_ops",
    "frobenius_norm": "tensor_ops",
    "LinearClassifier": "evaluate",
    "DiscrepancyReport": "evaluate",
    "train_classifier": "evaluate",
    "accuracy": "evaluate",
    "a_distance": "evaluate",
    "class_divergence": "evaluate",
    "TensorSet": "data_io",
    "ShiftSpec": "data_io",
    "generate_shift": "data_io",
    "spatial_pool": "data_io",
    "read_set": "data_io",
    "write_set": "data_io",
    "read_tensor": "data_io",
    "write_tensor": "data_io",
    "read_model": "data_io",
    "write_model": "data_io",
    "DataFormatError": "data_io",
    "TensorFormatError": "data_io",
    "TensorTruncationError": "data_io",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    import importlib

    return getattr(importlib.import_module(f".{module}", __name__), name)


def __dir__():
    return __all__
