"""Small-horizon utility maximization with a random endowment: dual values, facelift
envelopes, germ prices and finite-difference cross-checks."""

__version__ = "0.1.0"
