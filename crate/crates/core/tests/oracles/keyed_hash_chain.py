#!/usr/bin/env python3
"""Reference layer-key chain computed with Python's hmac module.

secret_0 = device secret; secret_{i+1} = HMAC-SHA256(key=secret_i, msg=measurement_i);
layer_key_id_i = SHA-256(secret_{i+1}). Output is frozen into tests/fixtures.
"""
import hashlib
import hmac
import json


def chain(device_secret, measurements):
    secret = device_secret
    out = []
    for i, m in enumerate(measurements):
        secret = hmac.new(secret, m, hashlib.sha256).digest()
        out.append({
            "index": i,
            "measurement": m.hex(),
            "secret": secret.hex(),
            "layer_key_id": hashlib.sha256(secret).hexdigest(),
        })
    return out


def main():
    zero = bytes(32)
    two = [hashlib.sha256(b"L1").digest(), hashlib.sha256(b"L2").digest()]
    four = [hashlib.sha256(b"layer-%d" % i).digest() for i in range(4)]
    patterned = bytes(range(32))
    doc = {
        "zero_secret_L1_L2": chain(zero, two),
        "zero_secret_four_layers": chain(zero, four),
        "patterned_secret_four_layers": {
            "device_secret": patterned.hex(),
            "chain": chain(patterned, four),
        },
        "empty_sha256": hashlib.sha256(b"").hexdigest(),
    }
    print(json.dumps(doc, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
