"""Incremental MapReduce runtime.

Thin Python surface over the C++ core: workload generation, the four run
modes (plain, incremental, iterative, incremental-iterative), run-file IO
and output comparison. Workdirs are interchangeable with the `imr` CLI.
"""

try:
    from ._imr import (
        Error,
        app_names,
        compare,
        generate_delta,
        generate_input,
        read_delta_run,
        read_output,
        read_run,
        run_incr_iterative,
        run_incremental,
        run_iterative,
        run_plain,
        write_run,
    )
except ImportError:  # extension on sys.path rather than in the package
    from _imr import (
        Error,
        app_names,
        compare,
        generate_delta,
        generate_input,
        read_delta_run,
        read_output,
        read_run,
        run_incr_iterative,
        run_incremental,
        run_iterative,
        run_plain,
        write_run,
    )

__all__ = [
    "Error",
    "app_names",
    "compare",
    "generate_delta",
    "generate_input",
    "read_delta_run",
    "read_output",
    "read_run",
    "run_incr_iterative",
    "run_incremental",
    "run_iterative",
    "run_plain",
    "write_run",
]
