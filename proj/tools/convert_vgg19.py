#!/usr/bin/env python3
"""Export torchvision's VGG19 feature convolutions to a stainforge weight archive.

    convert_vgg19.py --out weights/vgg19_features.sfar
    convert_vgg19.py --out w.sfar --state-dict vgg19-dcbb9e9d.pth
    convert_vgg19.py --out w.sfar --random-init --seed 3 --probe probe.sfar

--probe also writes a random input and torchvision's activations for it, so the
C++ backbone can be checked layer by layer (tests/vgg_crosscheck.cpp).
"""

import argparse
import hashlib
import json
import os
import struct
import sys

import torch
import torchvision

# ImageNet statistics the converted weights expect.
MEAN = [0.485, 0.456, 0.406]
STD = [0.229, 0.224, 0.225]
BLOCKS = [2, 2, 4, 4, 4]
PROBE_LAYERS = ["conv1_1", "conv2_1", "conv2_2", "conv3_1", "conv4_1", "conv5_1"]

DTYPES = {torch.float32: 0, torch.float64: 1, torch.int64: 2}


def conv_names():
    """torchvision features index -> convB_I, plus the post-ReLU index."""
    names, idx = [], 0
    for b, n in enumerate(BLOCKS):
        for i in range(n):
            names.append((idx, f"conv{b + 1}_{i + 1}"))
            idx += 2  # conv, relu
        idx += 1  # pool
    return names


def encode(metadata, tensors):
    out = bytearray(b"SFAR")
    out += struct.pack("<I", 1)
    meta = json.dumps(metadata, separators=(",", ":")).encode()
    out += struct.pack("<Q", len(meta)) + meta
    out += struct.pack("<I", len(tensors))
    for name, t in tensors:
        t = t.detach().contiguous().cpu()
        raw = t.numpy().tobytes()
        key = name.encode()
        out += struct.pack("<I", len(key)) + key
        out += struct.pack("<BI", DTYPES[t.dtype], t.dim())
        out += struct.pack(f"<{t.dim()}q", *t.shape)
        out += struct.pack("<Q", len(raw)) + raw
    out += hashlib.sha256(out).digest()
    return bytes(out)


def write(path, data, sidecar=True):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)
    if sidecar:
        with open(path + ".sha256", "w") as f:
            f.write(hashlib.sha256(data).hexdigest() + "\n")


def build_model(args):
    if args.random_init:
        torch.manual_seed(args.seed)
        return torchvision.models.vgg19(weights=None)
    model = torchvision.models.vgg19(weights=None)
    if args.state_dict:
        model.load_state_dict(torch.load(args.state_dict, map_location="cpu"))
    else:
        model = torchvision.models.vgg19(weights=torchvision.models.VGG19_Weights.IMAGENET1K_V1)
    return model


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True)
    ap.add_argument("--state-dict", help="local torchvision VGG19 .pth instead of downloading")
    ap.add_argument("--random-init", action="store_true", help="skip pretrained weights (for testing)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--probe", help="also write a probe input with reference activations here")
    ap.add_argument("--probe-size", type=int, default=32)
    args = ap.parse_args()

    model = build_model(args).eval()
    features = model.features
    tensors = []
    for idx, name in conv_names():
        conv = features[idx]
        tensors.append((name + ".weight", conv.weight.float()))
        tensors.append((name + ".bias", conv.bias.float()))
    meta = {"kind": "backbone", "architecture": "vgg19", "mean": MEAN, "std": STD}
    data = encode(meta, tensors)
    write(args.out, data)
    print(f"{hashlib.sha256(data).hexdigest()} -> {args.out}")

    if args.probe:
        gen = torch.Generator().manual_seed(args.seed + 1)
        x = torch.rand(1, 3, args.probe_size, args.probe_size, generator=gen, dtype=torch.float64)
        h = (x - torch.tensor(MEAN, dtype=torch.float64).view(1, 3, 1, 1)) / torch.tensor(
            STD, dtype=torch.float64).view(1, 3, 1, 1)
        f64 = features.double()
        relu_at = {idx + 1: name for idx, name in conv_names()}
        acts = {}
        with torch.no_grad():
            for i, layer in enumerate(f64):
                h = layer(h)
                if i in relu_at and relu_at[i] in PROBE_LAYERS:
                    acts[relu_at[i]] = h.clone()
                if len(acts) == len(PROBE_LAYERS):
                    break
        probe = [("input", x)] + [(n, acts[n]) for n in PROBE_LAYERS]
        write(args.probe, encode({"kind": "probe", "layers": PROBE_LAYERS}, probe), sidecar=False)
        print(f"probe {args.probe_size}x{args.probe_size} -> {args.probe}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
