"""
Utilities package for nuquant.
Contains path, seed and JSON helper functions.
"""

from .helpers import *
