"""xlrepair: synthesize verified cross-lingual buggy-fixed program pairs
from a high-resource source corpus, emit curriculum training datasets,
and evaluate program-repair experiments."""

__version__ = "0.1.0"
