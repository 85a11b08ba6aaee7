"""Model serialization: a JSON manifest plus one little-endian tensor blob.

The manifest for ``model.json`` names its blob ``model.bin`` in the same
directory. Top-level keys:

    version      format version, always 1
    endianness   "little"
    model        "float" or "integer"
    blob         blob file name, relative to the manifest
    input        {"kind": "tokens" | "features", "dim": int, "qparams": key}
    config       ConvertConfig fields (integer models)
    qparams      key -> {"min", "max", "bitwidth", "scale", "zero_point"}
    tensors      key -> {"dtype", "shape", "offset", "length", "crc32"}
    layers       ordered layer entries, each with "name" and "kind"

Layer entries refer to tensors and qparams by key. Integer layer entries
also name the qparams of their input, their output and every referenced
layer's output; loading checks that these chain.
"""
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from intrnn.baseclasses import MetaLayer
from intrnn.errors import (ConversionError, IntRnnError, ManifestError, PwlError,
                           QuantizationError, ShapeError)
from intrnn.fileio import blob_open, dtype_code, read_json, write_json
from intrnn.pwl import PwlTable
from intrnn.quant_core import QuantParams, QuantTensor
from intrnn.runtime.config import ConvertConfig
from intrnn.runtime.model import INPUT_STAGE, FloatModel, IntegerModel

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
ENDIANNESS = "little"
MODEL_TYPES = ("float", "integer")


class ManifestWriter(object):
    """Collects tensor entries and qparams while layers describe themselves."""

    def __init__(self, blob):
        self.blob = blob
        self.tensors = {}
        self.qparams_table = {}

    def tensor(self, key, array, code):
        if key in self.tensors:
            raise ManifestError("tensor {!r} written twice".format(key))
        self.tensors[key] = self.blob.write_tensor(array, code)
        return key

    def qparams(self, key, qp):
        data = qp.to_dict()
        if self.qparams_table.get(key, data) != data:
            raise ManifestError("conflicting quantization parameters for {!r}".format(key))
        self.qparams_table[key] = data
        return key

    def table(self, key, table):
        """Stores a PWL table by its knots; slopes and intercepts are rebuilt on load."""
        return {"function": table.function,
                "pieces": table.n_pieces,
                "knots": self.tensor(key + ".knots", table.knots_q, dtype_code(table.in_qp)),
                "in_qparams": self.qparams(key + ".in", table.in_qp),
                "out_qparams": self.qparams(key + ".out", table.out_qp)}


class ManifestReader(object):
    """Resolves the keys of a manifest against its blob."""

    def __init__(self, manifest, blob):
        self.manifest = manifest
        self.blob = blob
        self._qparams = {}
        try:
            self.config = ConvertConfig.from_dict(manifest.config)
        except (IntRnnError, TypeError, ValueError) as e:
            raise ManifestError("invalid conversion config: {}".format(e))

    def tensor(self, key):
        try:
            entry = self.manifest.tensors[key]
        except (KeyError, TypeError):
            raise ManifestError("unresolved tensor reference {!r}".format(key))
        return self.blob.read_tensor(entry)

    def qparams(self, key):
        if key not in self._qparams:
            try:
                self._qparams[key] = QuantParams.from_dict(self.manifest.qparams[key])
            except (KeyError, TypeError):
                raise ManifestError("unresolved qparams reference {!r}".format(key))
            except QuantizationError as e:
                raise ManifestError("invalid qparams {!r}: {}".format(key, e))
        return self._qparams[key]

    def quant_tensor(self, tensor_key, qparams_key):
        data = self.tensor(tensor_key)
        try:
            return QuantTensor(data.shape, data, self.qparams(qparams_key))
        except (QuantizationError, ShapeError) as e:
            raise ManifestError("tensor {!r}: {}".format(tensor_key, e))

    def table(self, desc):
        knots = self.tensor(desc["knots"]).astype(np.int64)
        try:
            table = PwlTable.from_knots(desc["function"], knots, self.qparams(desc["in_qparams"]),
                                        self.qparams(desc["out_qparams"]))
        except PwlError as e:
            raise ManifestError("table {!r}: {}".format(desc["knots"], e))
        if table.n_pieces != desc.get("pieces", table.n_pieces):
            raise ManifestError("table {!r} stores {} pieces, not {}".format(
                desc["knots"], table.n_pieces, desc["pieces"]))
        return table


@dataclass
class ModelManifest(object):
    """The parsed manifest document.

    Raises:
        ManifestError: on an unsupported version or endianness, or an
            unknown model type.
    """
    model: str
    blob: str
    input: dict
    layers: list
    tensors: dict = field(default_factory=dict)
    qparams: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION
    endianness: str = ENDIANNESS

    def __post_init__(self):
        if self.version != FORMAT_VERSION:
            raise ManifestError("unsupported manifest version {!r}, expected {}".format(
                self.version, FORMAT_VERSION))
        if self.endianness != ENDIANNESS:
            raise ManifestError("unsupported endianness {!r}".format(self.endianness))
        if self.model not in MODEL_TYPES:
            raise ManifestError("unknown model type {!r}".format(self.model))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ManifestError("a manifest is a JSON object")
        if data.get("version") != FORMAT_VERSION:
            raise ManifestError("unsupported manifest version {!r}, expected {}".format(
                data.get("version"), FORMAT_VERSION))
        try:
            return cls(**data)
        except TypeError as e:
            raise ManifestError("malformed manifest: {}".format(e))


def blob_path_for(path):
    """The blob file name a manifest at path writes, e.g. model.json -> model.bin."""
    return os.path.splitext(os.path.basename(path))[0] + ".bin"


def save(model, path):
    """Writes a FloatModel or IntegerModel as manifest plus blob.

    Args:
        model: the model to store.
        path (str): manifest path; the blob goes next to it.
    """
    path = str(path)
    blob_name = blob_path_for(path)
    integer = isinstance(model, IntegerModel)
    with blob_open(os.path.join(os.path.dirname(path), blob_name), 'w') as blob:
        writer = ManifestWriter(blob)
        input_block = {"kind": model.input_kind, "dim": model.input_dim, "qparams": None}
        if integer:
            layers = [layer.describe(writer) for layer in model.layers]
            if model.input_qparams is not None:
                input_block["qparams"] = writer.qparams(INPUT_STAGE, model.input_qparams)
        else:
            layers = [layer.describe_float(writer) for layer in model.layers]
    config = model.config.to_dict() if integer and model.config is not None else {}
    manifest = ModelManifest("integer" if integer else "float", blob_name, input_block, layers,
                             writer.tensors, writer.qparams_table, config)
    write_json(path, manifest.to_dict())
    logger.info("saved %s model to %s with %d tensors", manifest.model, path,
                len(writer.tensors))


def check_chain(manifest, reader):
    """Checks that every layer consumes its producers' output QuantParams.

    Raises:
        ManifestError: on the first broken edge.
    """
    key = manifest.input.get("qparams")
    previous = reader.qparams(key) if key else None
    produced = {}
    for desc in manifest.layers:
        key = desc.get("input_qparams")
        consumed = reader.qparams(key) if key else None
        if consumed != previous:
            raise ManifestError("layer {!r} does not consume its producer's grid".format(
                desc.get("name")))
        for reference, key in desc.get("references", {}).items():
            if reference not in produced or produced[reference] != reader.qparams(key):
                raise ManifestError("layer {!r} does not consume the grid of {!r}".format(
                    desc.get("name"), reference))
        key = desc.get("output_qparams")
        previous = reader.qparams(key) if key else None
        produced[desc.get("name")] = previous


def _layer_class(desc):
    try:
        return MetaLayer.lookup(desc["kind"])
    except (KeyError, TypeError):
        raise ManifestError("unknown layer kind in {!r}".format(desc))


def load(path):
    """Reads a model written by save.

    Returns:
        FloatModel or IntegerModel: whatever the manifest holds.

    Raises:
        ManifestError: on version mismatches, checksum failures, truncated
            blobs, unresolved references or a broken qparams chain.
        IOError: if the manifest or blob cannot be read.
    """
    path = str(path)
    manifest = ModelManifest.from_dict(read_json(path))
    integer = manifest.model == "integer"
    with blob_open(os.path.join(os.path.dirname(path), manifest.blob), 'r') as blob:
        reader = ManifestReader(manifest, blob)
        if integer:
            check_chain(manifest, reader)
            layers = [_layer_class(desc).from_description(desc, reader)
                      for desc in manifest.layers]
        else:
            layers = [_layer_class(desc).from_float_description(desc, reader)
                      for desc in manifest.layers]
        key = manifest.input.get("qparams")
        input_qparams = reader.qparams(key) if key else None
    try:
        if integer:
            model = IntegerModel(layers, manifest.input["kind"], manifest.input["dim"],
                                 input_qparams, reader.config)
        else:
            model = FloatModel(layers, manifest.input["kind"], manifest.input["dim"])
    except (KeyError, ConversionError, ShapeError) as e:
        raise ManifestError("inconsistent model in {}: {}".format(path, e))
    logger.info("loaded %s model from %s", manifest.model, path)
    return model
