"""Frame-wise language-audio event detection toolkit.

Synthetic soundscape generation, dual-encoder contrastive training with
frame-level supervision, ring-chunked loss simulation, calibrated inference,
and the evaluation metrics that go with them.
"""

__version__ = "0.1.0"
