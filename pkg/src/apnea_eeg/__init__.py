"""Sleep-apnea detection from single-channel EEG.

Pipeline stages: EDF ingestion, Butterworth band decomposition and
z-normalization, 210 s context windowing, SMOTE-Tomek balancing, a
from-scratch 1-D CNN trained with Adam, and imbalance-aware metrics.
"""

__version__ = "0.1.0"
