"""Frequency-filtered gradient attributions for small image classifiers."""

from ._core import *  # noqa: F401,F403
from ._core import ForgradError, __doc__  # noqa: F401
