"""Non-autoregressive contextual spelling correction for ASR hypotheses.

The correction network tags every hypothesis token with a BILO class and a
bias-list index, optionally attending to (pseudo) acoustic frames.  See
README.md for the pipeline layout.
"""

__version__ = "0.1.0"
