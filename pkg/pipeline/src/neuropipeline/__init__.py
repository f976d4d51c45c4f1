"""Analysis pipeline for ledger-stored wearable EEG data.

Synthesizes labeled epochs, converts them to time-frequency images,
augments small training sets with a generative adversarial pair, trains
baseline and transfer classifiers, and submits encrypted analysis reports
to a ledger node over its HTTP interface.
"""

__version__ = "0.1.0"
