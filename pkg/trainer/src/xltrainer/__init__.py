"""xltrainer: sequential adapter fine-tuning over curriculum stage
datasets emitted by the xlrepair pipeline."""

__version__ = "0.1.0"
