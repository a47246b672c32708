"""Kernelized MMD between bags of patch features, dataset-level Mercer kernels,
and kernel clustering, classification and survival analysis."""

__version__ = "0.1.0"

from ._backend import DEFAULT_BACKEND  # noqa: E402
from .dataio import (  # noqa: E402
    FeatureSet, SynthSpec, generate_synthetic, load_manifest, read_featureset,
    write_featureset,
)
from .mmd import (  # noqa: E402
    DistanceMatrix, KernelMatrix, PatchKernelConfig, distance_matrix,
    kernel_from_distance, median_inverse_gamma, mmd_sq, patch_kernel,
)

__all__ = [
    "DEFAULT_BACKEND", "FeatureSet", "SynthSpec", "generate_synthetic", "load_manifest",
    "read_featureset", "write_featureset", "DistanceMatrix", "KernelMatrix",
    "PatchKernelConfig", "distance_matrix", "kernel_from_distance", "median_inverse_gamma",
    "mmd_sq", "patch_kernel",
]
