"""flowdet: streaming small-object video detection with flow-guided temporal
feature fusion, size-bucketed evaluation, and video annotation tooling."""

__version__ = "0.1.0"
FORMAT_VERSION = 1
