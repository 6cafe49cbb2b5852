"""Track finding as a QUBO over hit triplets.

Hits are paired into doublets, doublets chained into triplets, and triplets
become binary variables of a quadratic objective that rewards compatible
triplet pairs (quadruplets) and penalises hit-sharing conflicts. The
minimiser is turned back into doublets, track candidates and metrics.
"""
__version__ = "0.1.0"
