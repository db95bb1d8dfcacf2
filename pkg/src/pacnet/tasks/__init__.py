"""Benchmark task definitions: Friedman regression, Duffing ODEs, 2-D diffusion."""
