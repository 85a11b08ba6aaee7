"""This module contains the LayerStack, the ordered container of a model's layers."""
from collections.abc import MutableSequence

from intrnn.errors import ConversionError


class LayerStack(MutableSequence):
    """A python list like container of uniquely named layers.

    Layers may refer to the outputs of earlier layers by name (a decoder's
    memory, a residual's skip input); ``validate`` checks those references.

    Keyword Args:
        layers (Optional[list]): starting layers. A copy of the list is kept.
    """

    def __init__(self, layers=None):
        self._container = []
        for layer in layers or []:
            self.append(layer)

    def _check_name(self, layer, replacing=None):
        for existing in self._container:
            if existing is not replacing and existing.name == layer.name:
                raise ConversionError("duplicate layer name {!r}".format(layer.name))

    # MutableSequence abstract methods
    def __getitem__(self, idx):
        return self._container[idx]

    def __setitem__(self, idx, layer):
        self._check_name(layer, replacing=self._container[idx])
        self._container[idx] = layer

    def __delitem__(self, idx):
        del self._container[idx]

    def __len__(self):
        return len(self._container)

    def insert(self, idx, layer):
        self._check_name(layer)
        self._container.insert(idx, layer)

    def index_of(self, name):
        """Position of the layer called name."""
        for idx, layer in enumerate(self._container):
            if layer.name == name:
                return idx
        raise ConversionError("no layer named {!r}".format(name))

    def by_name(self, name):
        return self._container[self.index_of(name)]

    def validate(self):
        """Checks that every referenced layer comes earlier in the stack.

        Raises:
            ConversionError: on a reference to a missing or later layer.
        """
        seen = set()
        for layer in self._container:
            for reference in layer.references():
                if reference not in seen:
                    raise ConversionError("layer {!r} refers to {!r}, which does not precede it"
                                          "".format(layer.name, reference))
            seen.add(layer.name)

    def __repr__(self):
        class_name = self.__class__.__name__
        return "{}([{}])".format(class_name, ", ".join(
            "{}:{}".format(layer.name, layer.kind) for layer in self._container))

    def __eq__(self, other):
        return list(self) == list(other)

    def __ne__(self, other):
        return not self == other
