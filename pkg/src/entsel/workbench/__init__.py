"""CLI, file formats, synthetic tasks, and experiment reports."""
