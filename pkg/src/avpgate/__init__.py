"""Antiviral peptide prediction: descriptors, augmentation, a gated
CNN/BiLSTM classifier trained with a queue-based contrastive objective,
transfer fine-tuning and evaluation."""

__version__ = "0.1.0"
