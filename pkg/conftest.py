import ctypes
import glob
import os

# Keep BLAS kernels single-threaded for the test suite. The per-batch matmuls
# are tiny, so BLAS-internal threads only add synchronization churn (the
# engine parallelizes across folds instead), and that churn distorts the
# runtime-scaling acceptance measurements.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")


def _pin_openblas_threads() -> None:
    # Pytest plugins may import numpy before this file runs, in which case
    # the env vars above arrive too late; call the runtime setter as well.
    try:
        import numpy
    except ImportError:
        return
    pattern = os.path.join(os.path.dirname(numpy.__file__) + ".libs", "*openblas*.so*")
    for path in glob.glob(pattern):
        try:
            lib = ctypes.CDLL(path)
        except OSError:
            continue
        for symbol in (
            "scipy_openblas_set_num_threads64_",
            "scipy_openblas_set_num_threads_64_",
            "openblas_set_num_threads64_",
            "openblas_set_num_threads",
        ):
            setter = getattr(lib, symbol, None)
            if setter is not None:
                setter(ctypes.c_int(1))
                break


_pin_openblas_threads()
