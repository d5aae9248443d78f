import threadpoolctl

# Single BLAS thread: bitwise-reproducible runs, and faster than threaded
# kernels at these matrix sizes.
threadpoolctl.threadpool_limits(limits=1)
