"""Dynamic local average treatment effects under one-sided noncompliance."""

__version__ = "0.1.0"
