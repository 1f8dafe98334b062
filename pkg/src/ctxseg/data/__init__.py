from . import cifar, synthseg

__all__ = ["cifar", "synthseg"]
