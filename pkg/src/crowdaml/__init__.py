"""Multi-task graph learning for crowdsourcing laundering detection."""

__version__ = "0.1.0"
