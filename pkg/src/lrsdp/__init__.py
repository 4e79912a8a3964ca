"""Memory-frugal low-rank SDP solver.

Exports are resolved lazily so that the CLI can configure BLAS threading
before numpy is imported.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "SymmetricSparse": "problem",
    "SdpProblem": "problem",
    "GraphEdgeList": "problem",
    "ObservationSet": "problem",
    "parse_sdpa": "problem",
    "serialize_sdpa": "problem",
    "build_maxcut": "problem",
    "build_matrix_completion": "problem",
    "read_edge_list": "problem",
    "read_observations": "problem",
    "validate": "problem",
    "compress": "linops",
    "build_operators": "linops",
    "OperatorBundle": "linops",
    "spmm": "linops",
    "FactorPair": "alm",
    "DualVector": "alm",
    "smallest_eigenvalue": "spectral",
    "dual_infeasibility": "spectral",
    "SolverConfig": "driver",
    "SolveReport": "driver",
    "solve": "driver",
    "compute_errors": "driver",
    "stop_check": "driver",
    "update_rank": "driver",
    "initial_rank": "driver",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    if name in _EXPORTS:
        import importlib
        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        value = getattr(module, name)
        globals()[name] = value
        return value
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
