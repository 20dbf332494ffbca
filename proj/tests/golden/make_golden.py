"""Writes the golden fixtures with nothing but the Python standard library.

The C++ reader/writer is tested byte-for-byte against these files, so they
must come from an independent implementation of the layouts in
docs/FORMATS.md. Re-run only when a format version changes.
"""

import json
import math
import pathlib
import struct

HERE = pathlib.Path(__file__).resolve().parent


def unit(v):
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v]


def f32(x):
    return struct.unpack("<f", struct.pack("<f", x))[0]


def fvol(frames, tag=None):
    t, h, w, d = len(frames), len(frames[0]), len(frames[0][0]), len(frames[0][0][0])
    out = bytearray(b"FVOL")
    out += struct.pack("<HIIII", 1, t, h, w, d)
    for frame in frames:
        for row in frame:
            for vec in row:
                out += struct.pack("<%df" % d, *vec)
    if tag is not None:
        raw = tag.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
    return bytes(out)


def small_volume(off_norm=None):
    frames = []
    k = 0
    for t in range(2):
        frame = []
        for y in range(2):
            row = []
            for x in range(3):
                k += 1
                v = unit([math.cos(0.7 * k), math.sin(0.7 * k), 0.25 * (t - y + 1)])
                row.append([f32(c) for c in v])
            frame.append(row)
        frames.append(frame)
    if off_norm is not None:
        frames[1][0][2] = [f32(c * off_norm) for c in frames[1][0][2]]
    return frames


def pgm8(w, h, on):
    head = b"P5\n%d %d\n255\n" % (w, h)
    return head + bytes(255 if on(x, y) else 0 for y in range(h) for x in range(w))


def pgm16(w, h, value):
    head = b"P5\n%d %d\n65535\n" % (w, h)
    body = bytearray()
    for y in range(h):
        for x in range(w):
            body += struct.pack(">H", int(math.floor(value(x, y) * 65535 + 0.5)))
    return head + bytes(body)


def dump(doc):
    return (json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def main():
    (HERE / "tiny.fvol").write_bytes(fvol(small_volume(), "synthetic smooth_random"))
    (HERE / "tiny_untagged.fvol").write_bytes(fvol(small_volume()))
    (HERE / "off_norm.fvol").write_bytes(fvol(small_volume(off_norm=1.05)))
    (HERE / "mask.pgm").write_bytes(pgm8(7, 5, lambda x, y: (x - 3) ** 2 + (y - 2) ** 2 <= 4))
    (HERE / "prob.pgm").write_bytes(pgm16(4, 3, lambda x, y: (x + 4 * y) / 11.0))

    annotation = {
        "video_id": "echo_0001",
        "frame": 0,
        "canvas": {"width": 112, "height": 96},
        "points": [
            {"x": 10.5, "y": 20.25, "label": "apex"},
            {"x": 55.0, "y": 40.0, "label": "mitral_left", "confidence": "high"},
            {"x": 0.0, "y": 95.5, "label": ""},
        ],
        "mask_ref": "masks/echo_0001_f0.pgm",
        "annotator": {"name": "rk", "session": 3},
    }
    (HERE / "annotation.json").write_bytes(dump(annotation))

    propagation = {
        "engine_version": "inrprop 0.1.0",
        "seed": 42,
        "source": {"video_id": "echo_0001", "frame": 0},
        "target": {"video_id": "echo_0001", "frame": 7},
        "mode": "points",
        "configs": {"match": {"sigma": 5.6, "search_stride": 1.0}},
        "results": [
            {"source": [10.5, 20.25], "predicted": [12.0, 21.0], "score": 0.875, "cosine": 0.9375,
             "flow_center": [11.75, 20.5]},
            {"source": [55.0, 40.0], "predicted": [54.0, 43.0], "score": 0.5, "cosine": 0.625,
             "flow_center": [54.5, 42.0]},
        ],
        "mask_outputs": {},
        "note": "golden",
    }
    (HERE / "propagation.json").write_bytes(dump(propagation))


if __name__ == "__main__":
    main()
