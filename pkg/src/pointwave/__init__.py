"""
pointwave: point-scatterer approximation for small high-contrast inclusions
Newton spectrum → forcing h(t) → modulation q(t) → u_eff, checked against FDTD
"""

__version__ = "0.3.0"
