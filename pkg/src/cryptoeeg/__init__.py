"""Classification of Paillier-encrypted EEG feature vectors with a small neural network."""

from .fixedpoint import FixedPointCodec
from .paillier import Ciphertext, PrivateKey, PublicKey, keygen

__all__ = ["Ciphertext", "FixedPointCodec", "PrivateKey", "PublicKey", "keygen"]
__version__ = "0.1.0"
