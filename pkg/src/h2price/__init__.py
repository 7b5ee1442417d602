"""Price decomposition for a stochastic hydrogen production plant."""
import numba

# prefer layers that do not depend on the system TBB version
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__version__ = "0.1.0"
