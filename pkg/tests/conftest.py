import os

# Pin BLAS threading before numpy's first import so in-process results are
# bit-identical to CLI runs (the CLI entry point applies the same pinning).
for _var in (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
):
    os.environ.setdefault(_var, "1")
