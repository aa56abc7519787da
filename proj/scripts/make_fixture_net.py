#!/usr/bin/env python3
"""Train the small fixture network used by the test suite and export it in
the JSON weight format read by include/tiler/network.hpp.

Usage:
    tiler gen-dataset --count 20000 --seed 7 --out /tmp/train_ds
    tiler gen-dataset --count 1000  --seed 8 --out /tmp/val_ds
    python3 scripts/make_fixture_net.py /tmp/train_ds /tmp/val_ds tests/fixtures/fixture_net.json

Architecture: conv 16 (4x4, stride 2, pad 1) -> ReLU -> conv 32 (same) ->
ReLU -> flatten (channel-major) -> dense 100 -> ReLU -> dense 2 (delta, theta).
Targets are scaled to roughly unit range during training; the scale is folded
into the last layer on export, so the exported net predicts raw units.
"""

import argparse
import csv
import json
import os

import numpy as np
import torch
from PIL import Image
from torch import nn

TARGET_SCALE = np.array([50.0, 70.0])


def load_dataset(root):
    xs, ys = [], []
    with open(os.path.join(root, "labels.csv")) as f:
        for row in csv.DictReader(f):
            img = np.asarray(Image.open(os.path.join(root, row["file"])), dtype=np.float32)
            xs.append(img / 255.0)
            ys.append([float(row["delta"]), float(row["theta"])])
    x = torch.tensor(np.stack(xs))[:, None, :, :]
    y = torch.tensor(np.array(ys) / TARGET_SCALE, dtype=torch.float32)
    return x, y


def build_model():
    return nn.Sequential(
        nn.Conv2d(1, 16, 4, stride=2, padding=1),
        nn.ReLU(),
        nn.Conv2d(16, 32, 4, stride=2, padding=1),
        nn.ReLU(),
        nn.Flatten(),
        nn.Linear(32 * 8 * 8, 100),
        nn.ReLU(),
        nn.Linear(100, 2),
    )


def export(model, path):
    def flat(t):
        return [float(v) for v in t.detach().double().reshape(-1).numpy().astype(np.float32)]

    layers = []
    shape = (1, 32, 32)
    mods = list(model)
    for k, m in enumerate(mods):
        if isinstance(m, nn.Conv2d):
            w, b = m.weight, m.bias
            layers.append({
                "type": "conv2d",
                "in_channels": m.in_channels,
                "out_channels": m.out_channels,
                "kernel": m.kernel_size[0],
                "stride": m.stride[0],
                "padding": m.padding[0],
                "weights": flat(w),
                "bias": flat(b),
            })
        elif isinstance(m, nn.ReLU):
            layers.append({"type": "relu"})
        elif isinstance(m, nn.Flatten):
            layers.append({"type": "flatten"})
        elif isinstance(m, nn.Linear):
            w, b = m.weight.detach().double(), m.bias.detach().double()
            if k == len(mods) - 1:
                s = torch.tensor(TARGET_SCALE, dtype=torch.float64)
                w, b = w * s[:, None], b * s
            layers.append({
                "type": "linear" if k == len(mods) - 1 else "dense",
                "in_features": m.in_features,
                "out_features": m.out_features,
                "weights": flat(w),
                "bias": flat(b),
            })
    doc = {
        "format_version": 1,
        "input_spec": {"height": shape[1], "width": shape[2], "channels": shape[0], "scale": 255},
        "layers": layers,
    }
    with open(path, "w") as f:
        json.dump(doc, f, separators=(",", ":"))
        f.write("\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("train")
    ap.add_argument("val")
    ap.add_argument("out")
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--patience", type=int, default=5)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    xt, yt = load_dataset(args.train)
    xv, yv = load_dataset(args.val)
    model = build_model()
    opt = torch.optim.Adam(model.parameters(), lr=args.lr)
    loss_fn = nn.L1Loss()
    scale = torch.tensor(TARGET_SCALE, dtype=torch.float32)

    best, best_state, stale = float("inf"), None, 0
    for epoch in range(args.epochs):
        model.train()
        perm = torch.randperm(len(xt))
        for i in range(0, len(xt), args.batch):
            idx = perm[i:i + args.batch]
            opt.zero_grad()
            loss = loss_fn(model(xt[idx]), yt[idx])
            loss.backward()
            opt.step()
        model.eval()
        with torch.no_grad():
            pred = model(xv)
            val = loss_fn(pred, yv).item()
            mae = ((pred - yv).abs() * scale).mean(0).tolist()
        print(f"epoch {epoch + 1} val_loss {val:.5f} mae_delta {mae[0]:.3f} mae_theta {mae[1]:.3f}", flush=True)
        if val < best:
            best, stale = val, 0
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
        else:
            stale += 1
            if stale >= args.patience:
                break
    model.load_state_dict(best_state)
    export(model, args.out)


if __name__ == "__main__":
    main()
