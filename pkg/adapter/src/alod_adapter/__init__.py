"""Reference backend adapter for the alod wire protocol.

Bridges the orchestrator's file-based requests to a real training stack:
dataset conversion, trainer invocation, prediction export and dropout-pass
stacking. The adapter talks to the orchestrator only through request/response
files, so it stays independent of the orchestrator's implementation.
"""

__version__ = "0.1.0"
