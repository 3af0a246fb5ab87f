"""Response-time forecasting for microservice call graphs with a GCN + GRU model."""

__version__ = "0.1.0"
