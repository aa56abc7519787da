#!/usr/bin/env python3
"""Regenerate the golden test fixtures from scratch, without using the C++
library:

  tests/fixtures/golden_d5_t10.pgm       scene render for delta=5, theta=10 deg
  tests/fixtures/golden_net_output.json  fixture network output on that image

The render is an explicit per-pixel ray/ground-plane intersection in numpy.
The network output is evaluated with torch in float64 from the weight file.

Usage: python3 scripts/make_goldens.py [tests/fixtures]
"""

import json
import math
import os
import sys

import numpy as np
import torch
import torch.nn.functional as F

# Default scene parameters.
ROAD_WIDTH = 50.0
LINE_WIDTH = 4.0
RAMP = 1.0
HEIGHT = 20.0
FOCAL = 1.0
PIXEL = 0.16
N = 32
CENTER, SIDE, ROAD, SKY = 0.7, 1.0, 0.3, 0.0


def intensity(x):
    h = LINE_WIDTH / 2
    inner, outer = ROAD_WIDTH - h, ROAD_WIDTH + h
    knots = [0, h - RAMP, h + RAMP, inner - RAMP, inner + RAMP, outer - RAMP, outer + RAMP]
    vals = [CENTER, CENTER, ROAD, ROAD, SIDE, SIDE, ROAD]
    return float(np.interp(abs(x), knots, vals))


def quantize(v):
    return int(math.floor(min(max(v, 0.0), 1.0) * 255 + 0.5))


def render(delta, theta_deg):
    th = math.radians(theta_deg)
    camera = np.array([delta, 0.0, HEIGHT])
    img = np.zeros((N, N), dtype=np.uint8)
    for i in range(N):
        for j in range(N):
            # Pixel centre on the image plane one focal length ahead (+y).
            u = PIXEL * (j + 0.5) - N * PIXEL / 2
            v = N * PIXEL / 2 - PIXEL * (i + 0.5)
            d = np.array([u, FOCAL, v])
            # Yaw the ray about the vertical axis.
            d = np.array([math.cos(th) * d[0] - math.sin(th) * d[1],
                          math.sin(th) * d[0] + math.cos(th) * d[1], d[2]])
            if d[2] >= 0:
                img[i, j] = quantize(SKY)
                continue
            t = -camera[2] / d[2]
            img[i, j] = quantize(intensity(camera[0] + t * d[0]))
    return img


def forward(weights_path, img):
    with open(weights_path) as f:
        doc = json.load(f)
    x = torch.tensor(img, dtype=torch.float64)[None, None] / doc["input_spec"]["scale"]
    for layer in doc["layers"]:
        kind = layer["type"]
        if kind == "conv2d":
            w = torch.tensor(layer["weights"], dtype=torch.float64).reshape(
                layer["out_channels"], layer["in_channels"], layer["kernel"], layer["kernel"])
            b = torch.tensor(layer["bias"], dtype=torch.float64)
            x = F.conv2d(x, w, b, stride=layer["stride"], padding=layer["padding"])
        elif kind == "relu":
            x = torch.relu(x)
        elif kind == "flatten":
            x = x.reshape(1, -1)
        else:
            w = torch.tensor(layer["weights"], dtype=torch.float64).reshape(
                layer["out_features"], layer["in_features"])
            b = torch.tensor(layer["bias"], dtype=torch.float64)
            x = x @ w.T + b
    return x.reshape(-1).tolist()


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures"
    img = render(5.0, 10.0)
    with open(os.path.join(out, "golden_d5_t10.pgm"), "wb") as f:
        f.write(b"P5\n32 32\n255\n")
        f.write(img.tobytes())
    y = forward(os.path.join(out, "fixture_net.json"), img)
    with open(os.path.join(out, "golden_net_output.json"), "w") as f:
        json.dump({"image": "golden_d5_t10.pgm", "output": y}, f, indent=2)
        f.write("\n")
    print("output", y)


if __name__ == "__main__":
    main()
