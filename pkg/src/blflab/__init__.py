"""blflab: bounded-logit-function defenses, their competitors, and the
attack/diagnostic machinery to check the underlying theory numerically.
"""

__version__ = "0.1.0"
