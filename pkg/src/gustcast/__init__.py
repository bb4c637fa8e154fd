"""Day-ahead wind-power forecasting: CNN-RNN, Conv2D+GBM hybrid, tree baselines and evaluation."""

__version__ = "0.1.0"
