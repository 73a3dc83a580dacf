import os

# Pin BLAS to one thread before numpy loads anywhere: single-threaded execution
# is the reference mode for all determinism and acceptance checks.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
