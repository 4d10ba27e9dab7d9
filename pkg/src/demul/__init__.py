"""demul: a self-contained laboratory for deep-learning seismic demultiple.

Submodules are imported lazily so the CLI can pin BLAS thread counts before
numpy loads.
"""

__version__ = "0.1.0"

_SUBMODULES = ("tensor", "nn", "unet", "synthgen", "radon", "metrics",
               "introspect", "io", "config", "harness", "cli")


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module 'demul' has no attribute {name!r}")
