"""Shared exception types, mapped to CLI exit codes by the harness."""


class DataError(ValueError):
    """Malformed or inconsistent input data (manifests, graphs, vocab mismatches)."""


class NumericError(RuntimeError):
    """Non-finite losses or other numeric failures during training/evaluation."""
