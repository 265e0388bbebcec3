"""
oec_sim

Deterministic discrete-event simulator of roadside identification over
Bluetooth 5 and Wize, with an opportunistic edge-gateway layer.
"""

__version__ = "0.1.0"
