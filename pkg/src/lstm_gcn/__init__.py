"""Recurrent graph-convolutional return forecasting on supplier-customer networks."""

__version__ = "0.1.0"
