import logging
import os
import sys

_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def get_logger(name: str) -> logging.Logger:
    """
    Return a module logger writing to stderr.

    The level comes from the LOG_LEVEL environment variable (default INFO).
    Handlers are attached once to the package root logger so repeated calls
    do not duplicate output.
    """
    root = logging.getLogger("perfhom")
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(_FORMAT))
        root.addHandler(handler)
        root.setLevel(os.environ.get("LOG_LEVEL", "INFO").upper())
        root.propagate = False
    return root.getChild(name)
