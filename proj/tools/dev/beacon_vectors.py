"""Writes tests/data/beacon_vectors.json: beacon fields and their wire image."""
import json
import struct
import sys

CASES = [
    dict(sender=101, slot=0, tx_time=0.0001, offsets=[]),
    dict(sender=103, slot=4294967295, tx_time=12.3456789, offsets=[(101, 1.25e-6, 0.004)]),
    dict(sender=106, slot=65541, tx_time=65.5411, offsets=[
        (101, -3.0e-6, 0.0051), (102, 2.5e-7, 0.0041), (103, 0.0, 0.0031),
        (104, -1.0e-9, 0.0021), (105, 7.77e-5, 0.0011)]),
    dict(sender=0, slot=7, tx_time=-0.0, offsets=[(255, -0.0, 0.0)]),
]


def encode(c):
    out = struct.pack("<BBIdB", 1, c["sender"], c["slot"], c["tx_time"], len(c["offsets"]))
    for peer, off, age in c["offsets"]:
        out += struct.pack("<Bdd", peer, off, age)
    return out


vectors = []
for c in CASES:
    vectors.append({
        "sender": c["sender"],
        "slot_index": c["slot"],
        "tx_time_local": c["tx_time"].hex(),
        "offsets": [{"peer": p, "offset": o.hex(), "age": a.hex()} for p, o, a in c["offsets"]],
        "hex": encode(c).hex(),
    })
json.dump({"note": "floats are given as C99 hex literals", "vectors": vectors}, sys.stdout, indent=2)
print()
