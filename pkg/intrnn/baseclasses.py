"""This module contains the base classes used by modules
throughout the intrnn package."""
from abc import ABCMeta
from collections import OrderedDict


class MetaLayer(ABCMeta):
    """Stores layer classes in an OrderedDict keyed by their kind.

    all_layers starts as None, and becomes an OrderedDict mapping
    the manifest kind string to the class once the base class exists.
    Classes without a kind of their own (abstract helpers) are not stored.
    """
    all_layers = None

    def __init__(cls, name, bases, dct):
        super(MetaLayer, cls).__init__(name, bases, dct)
        if MetaLayer.all_layers is None:
            MetaLayer.all_layers = OrderedDict()
            return
        kind = dct.get("kind")
        if kind is None:
            return
        if kind in MetaLayer.all_layers:
            first_name = MetaLayer.all_layers[kind].__name__
            raise TypeError("Only one layer class can register a kind. "
                            "Issue with {} and {} for {!r}."
                            "".format(first_name, cls.__name__, kind))
        MetaLayer.all_layers[kind] = cls

    @classmethod
    def lookup(mcs, kind):
        """Returns the layer class registered for kind.

        Raises:
            KeyError: if no class registered the kind.
        """
        return mcs.all_layers[kind]
