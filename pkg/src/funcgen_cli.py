"""Console entry point.

``--threads`` must take effect before numpy is imported, because BLAS
libraries read their thread-count environment variables at load time.  This
shim scans argv, sets the variables, and only then imports the real CLI.
"""

import sys


def _requested_threads(argv):
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            return argv[i + 1]
        if arg.startswith("--threads="):
            return arg.partition("=")[2]
    return None


def main() -> None:
    threads = _requested_threads(sys.argv[1:])
    if threads is not None and threads.isdigit() and int(threads) > 0:
        import os

        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    from funcgen.cli import main as cli_main

    cli_main()


if __name__ == "__main__":
    main()
