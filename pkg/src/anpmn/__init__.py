"""Neural-assisted adaptive unscented Kalman filtering for INS/GNSS fusion.

The package bundles a scaled-unscented-transform Kalman filter, a 15-state
error-state strapdown INS mechanization, innovation-based and network-based
noise covariance adaptation, a trajectory/noise simulator for generating
labeled training data, and a benchmark pipeline comparing the four filter
variants (ukf, mb-aukf, anpn-ukf, anpmn-ukf) by position RMSE.
"""

__version__ = "0.1.0"
