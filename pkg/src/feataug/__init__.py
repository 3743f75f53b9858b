"""Feature-space data augmentation toolkit and few-shot benchmark harness.

Generates synthetic training vectors for data-starved classes directly in
embedding space (duplication, noising, delta transplants, CVAE, delta-encoder)
and measures their effect with a reproducible few-shot-integration protocol
over a softmax probe.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, FeataugError, NumericError

__all__ = ["ConfigError", "DataError", "FeataugError", "NumericError",
           "__version__"]
