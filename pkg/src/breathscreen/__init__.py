"""Acoustic screening toolkit for nasal-breath recordings.

Pipeline: WAV -> per-frame acoustic tracks -> statistical feature vector ->
RF / PCA / correlation selection -> small DNN or 1x1-conv CNN, evaluated with
patient-grouped k-fold cross-validation.
"""

__version__ = "0.1.0"
