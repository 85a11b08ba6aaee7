"""File and IO related classes and functions.

Models are stored as a UTF-8 JSON manifest next to one binary blob of
little-endian tensors. Each tensor entry in the manifest records its dtype
code, shape, byte offset, byte length and CRC32.
"""
import json
import zlib
from contextlib import closing

import numpy as np

from intrnn.errors import ManifestError

#: Manifest dtype codes and their little-endian numpy types.
DTYPES = {
    "u8": "<u1",
    "u16": "<u2",
    "i8": "<i1",
    "i16": "<i2",
    "i32": "<i4",
    "f32": "<f4",
}


def dtype_code(qp):
    """The dtype code storing tensors quantized with qp."""
    return "u8" if qp.bitwidth == 8 else "u16"


class BlobFile(object):
    """A tensor blob file with python open modes and closing support.

    Writing appends tensors and returns their manifest entries; reading
    checks every entry against the bytes actually present.
    """
    open_mode_dict = {
        'r': 'rb',
        'w': 'wb',
    }

    def __init__(self, file_path):
        self.file_path = file_path
        self._handle = None
        self._data = None
        self._offset = 0

    def open(self, mode='r'):
        """Opens the blob and returns closing(self) for "with" blocks."""
        mode = self.convert_file_mode(mode)
        self._handle = open(self.file_path, mode)
        if mode == 'rb':
            self._data = self._handle.read()
        self._offset = 0
        return closing(self)

    @staticmethod
    def convert_file_mode(mode):
        """Converts 'r'/'w' (with or without 'b') to a binary file mode."""
        while mode and mode[-1] in ['b', 't', 'U']:
            mode = mode[:-1]
        try:
            return BlobFile.open_mode_dict[mode]
        except KeyError:
            raise ValueError("unsupported blob mode {!r}".format(mode))

    def close(self):
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def write_tensor(self, array, code):
        """Appends array as dtype code and returns its manifest entry."""
        if code not in DTYPES:
            raise ManifestError("unknown dtype code {!r}".format(code))
        array = np.asarray(array)
        data = np.ascontiguousarray(array.astype(DTYPES[code])).tobytes()
        entry = {"dtype": code, "shape": list(array.shape), "offset": self._offset,
                 "length": len(data), "crc32": zlib.crc32(data) & 0xffffffff}
        self._handle.write(data)
        self._offset += len(data)
        return entry

    def read_tensor(self, entry):
        """Reads the tensor described by a manifest entry.

        Raises:
            ManifestError: on unknown dtypes, truncated data, size mismatches
                or checksum failures.
        """
        try:
            code, shape = entry["dtype"], tuple(entry["shape"])
            offset, length, crc = entry["offset"], entry["length"], entry["crc32"]
        except (KeyError, TypeError):
            raise ManifestError("malformed tensor entry {!r}".format(entry))
        if code not in DTYPES:
            raise ManifestError("unknown dtype code {!r}".format(code))
        if offset < 0 or offset + length > len(self._data):
            raise ManifestError("blob {} is truncated".format(self.file_path))
        data = self._data[offset:offset + length]
        if zlib.crc32(data) & 0xffffffff != crc:
            raise ManifestError("checksum mismatch in blob {}".format(self.file_path))
        dtype = np.dtype(DTYPES[code])
        if length != dtype.itemsize * int(np.prod(shape, dtype=np.int64)):
            raise ManifestError("tensor length {} does not fit shape {}".format(length, shape))
        return np.frombuffer(data, dtype=dtype).reshape(shape)


def blob_open(file_path, mode='r'):
    """Convenience function for "with x" block.
    with blob_open(file_path) as blob:
    is equivalent to writing.
    with BlobFile(file_path).open() as blob:"""
    blob = BlobFile(file_path)
    return blob.open(mode)


def read_json(file_path):
    """Loads a UTF-8 JSON document."""
    with open(file_path, 'r', encoding='utf-8') as f:
        try:
            return json.load(f)
        except ValueError as e:
            raise ManifestError("{} is not valid JSON: {}".format(file_path, e))


def write_json(file_path, document):
    with open(file_path, 'w', encoding='utf-8') as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")
