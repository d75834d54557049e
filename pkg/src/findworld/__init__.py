"""Fairness-aware prediction via warping to a world without protected-attribute effects.

Submodules: :mod:`data`, :mod:`dag`, :mod:`glm`, :mod:`warp`, :mod:`treatment`,
:mod:`audit`, :mod:`synth`, :mod:`pipeline` and :mod:`cli`.
"""

__version__ = "0.1.0"
