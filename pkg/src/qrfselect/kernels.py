"""Active kernel backend, selected once at import (see ``_backend``)."""

from ._backend import BACKEND, HAVE_NUMBA

if HAVE_NUMBA:
    from ._kernels_nb import (
        grow_mean_tree,
        grow_quantile_tree,
        oob_crps_per_obs,
        route_rows,
        route_rows_override,
        tree_oob_mse_override,
    )
else:
    from ._kernels_np import (
        grow_mean_tree,
        grow_quantile_tree,
        oob_crps_per_obs,
        route_rows,
        route_rows_override,
        tree_oob_mse_override,
    )

__all__ = [
    "BACKEND",
    "grow_quantile_tree",
    "grow_mean_tree",
    "route_rows",
    "route_rows_override",
    "tree_oob_mse_override",
    "oob_crps_per_obs",
]
