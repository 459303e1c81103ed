"""Experiment configuration, statistics, runner and CLI."""
