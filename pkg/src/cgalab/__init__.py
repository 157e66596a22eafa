"""Learned ad auctions with permutation-level externalities.

Subpackages: ``core`` (auction types), ``valuation`` (value distributions
and virtual values), ``worldsim`` (synthetic click world), ``oracle``
(enumeration mechanisms), ``neural`` (numpy autodiff), ``cga`` (the
learned mechanism) and ``harness`` (experiments and CLI).
"""
__version__ = "0.1.0"
