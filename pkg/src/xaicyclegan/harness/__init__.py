"""CLI, run directories, checkpoints, plots and the mode comparison."""
