"""Kinship verification from facial pulse signals.

Pipeline: raw RGB traces -> classical pulse recovery (GREEN, OMIT, CHROM,
LGI, POS) -> siamese 1D-CNN with channel attention trained with a
contrastive loss -> leave-one-subject-out ROC/AUC evaluation. A synthetic
family generator provides desk-scale data and ground-truth oracles.
"""

__version__ = "0.1.0"
