"""Sparsity-based super-resolution of multi-perspective scanned images."""
