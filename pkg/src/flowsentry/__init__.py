"""Scan-detection pipeline: traffic synthesis, pcap flow extraction, features, LSTM/MLP and baselines."""

__version__ = "0.1.0"
