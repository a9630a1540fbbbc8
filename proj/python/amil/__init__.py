"""Python bindings for the amil library."""

from ._amil import *  # noqa: F401,F403
from ._amil import __doc__  # noqa: F401
