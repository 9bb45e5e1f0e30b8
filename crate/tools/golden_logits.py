#!/usr/bin/env python3
"""Compute integer logits for every video of a dataset with exact rationals.

Independent of the Rust implementation; used to freeze golden fixtures.

    python3 tools/golden_logits.py MODEL.json VIDEOS.json > golden.json
"""
import json
import sys
from fractions import Fraction


def quantize(x, bits, frac):
    # f64 value, scaled exactly, rounded half away from zero, saturated.
    scaled = Fraction(float(x)) * (1 << frac)
    sign = -1 if scaled < 0 else 1
    m = sign * int(abs(scaled) + Fraction(1, 2))
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return max(lo, min(hi, m))


def saturate(m, bits):
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return max(lo, min(hi, m))


def position(rle, height, width):
    cell, on, active = 0, False, []
    for tok in rle.split(","):
        n = int(tok)
        if on:
            active.extend(range(cell, cell + n))
        cell += n
        on = not on
    assert cell == height * width and len(active) == 1, rle
    row, col = divmod(active[0], width)
    return col, height - 1 - row


def features(video, height, width):
    pos = [position(f, height, width) for f in video["frames"]]
    out = []
    for (x0, y0), (x1, y1) in zip(pos, pos[1:]):
        out.append(float(x1 - x0) / float(width - 1))
        out.append(float(y1 - y0) / float(height - 1))
    return out


def forward(model, values):
    wq, aq = model["quantization"]["weights"], model["quantization"]["activations"]
    nw, fw, na, fa = wq["bits"], wq["frac"], aq["bits"], aq["frac"]
    pb, pf = nw + na, fw + fa
    x = [quantize(v, na, fa) for v in values]
    linear = [i for i, l in enumerate(model["layers"]) if l["type"] == "dense"]
    for i, layer in enumerate(model["layers"]):
        kind = layer["type"]
        if kind == "flatten":
            continue
        if kind == "relu":
            x = [max(0, v) for v in x]
        elif kind == "threshold_step":
            theta = quantize(layer["threshold"], na, fa)
            one = quantize(1.0, na, fa)
            x = [one if v >= theta else 0 for v in x]
        elif kind == "dense":
            n_in, n_out = layer["inputs"], layer["outputs"]
            w = [quantize(v, nw, fw) for v in layer["weights"]]
            b = [quantize(v, pb, pf) for v in layer["bias"]]
            y = []
            for j in range(n_out):
                acc = b[j] + sum(w[j * n_in + k] * x[k] for k in range(n_in))
                if i != linear[-1]:
                    acc = saturate(acc >> fw, na)
                y.append(acc)
            x = y
        else:
            raise SystemExit(f"unsupported layer type {kind}")
    return x


def main():
    model = json.load(open(sys.argv[1]))
    data = json.load(open(sys.argv[2]))
    rows = []
    for i, v in enumerate(data["videos"]):
        logits = forward(model, features(v, data["height"], data["width"]))
        best = max(range(len(logits)), key=lambda k: (logits[k], -k))
        rows.append({"index": i, "logits": logits, "class": best})
    json.dump(rows, sys.stdout, separators=(",", ":"))
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
