#!/usr/bin/env python3
"""Writes a weights file from a name/shape table, independently of the C++ encoder.

Usage: write_weights.py TABLE OUT

TABLE has one tensor per line: name followed by its dimensions. Tensor k
(0-based) is filled with 0.01*(k+1), except running variances, which get 1.
"""
import struct
import sys
import zlib

import numpy as np


def main(table_path, out_path):
    body = bytearray(b"SNRW")
    rows = [line.split() for line in open(table_path) if line.strip()]
    body += struct.pack("<II", 1, len(rows))
    for k, (name, *dims) in enumerate(rows):
        dims = [int(d) for d in dims]
        raw = name.encode("utf-8")
        body += struct.pack("<I", len(raw)) + raw
        body += struct.pack("<I", len(dims)) + struct.pack("<%dI" % len(dims), *dims)
        fill = 1.0 if "running_var" in name else 0.01 * (k + 1)
        body += np.full(int(np.prod(dims)), fill, dtype="<f4").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    with open(out_path, "wb") as f:
        f.write(body)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
