"""Emotion-aware medical dialogue alignment at desk scale.

Pipeline: rewrite dialogues into emotional questions and soothing responses,
fine-tune a small byte-level language model with SFT / DPO / KTO, and score
the results with n-gram metrics and judge-based emotion intensity.
"""

__version__ = "0.1.0"
