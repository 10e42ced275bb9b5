"""Multimodal trajectory forecasting on a self-contained tensor core.

Axis-factored transformer encoder/decoder over agent/time/map/mode axes,
temporal-flow consistency head, hard-example mining, and K-means trajectory
ensembling, trained end to end with a tape-based reverse-mode autodiff
engine (compiled kernels when available, pure numpy otherwise).
"""

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]


def __getattr__(name):
    # resolved lazily so that `import trajflow` stays numpy-free; the CLI
    # must pin thread environment variables before BLAS loads
    if name == "kernel_backend":
        from ._kernels import NAME

        return NAME
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
