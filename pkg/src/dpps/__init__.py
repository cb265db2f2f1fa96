"""Differentially private distributed SOC optimal power flow."""

__version__ = "0.1.0"
