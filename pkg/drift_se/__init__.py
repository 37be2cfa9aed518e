# flake8: noqa

import importlib.metadata

try:
    __version__ = importlib.metadata.version('drift-se')
except importlib.metadata.PackageNotFoundError:
    __version__ = '999'
