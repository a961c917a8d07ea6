#!/usr/bin/env python3
"""Export the convolutional part of a torchvision ImageNet model to a busdx
weight container (<out>/<backbone>.busdx).

  export_torchvision_backbone.py --backbone vgg16 --out weights
  export_torchvision_backbone.py --backbone resnet50 --out weights --state-dict resnet50.pth
  export_torchvision_backbone.py --backbone densenet121 --out w --random-seed 3

Without --state-dict the torchvision ImageNet weights are fetched through the
torchvision cache. --random-seed builds a randomly initialised model instead
(used for parity tests).
"""

import argparse
import json
import os
import struct
import sys

import numpy as np

MAGIC = b"BUSDXC01"
PREFIX = {"vgg16": "features.", "vgg19": "features.", "resnet50": "", "densenet121": "features."}


def write_container(path, meta, tensors):
    header = {"meta": meta, "tensors": []}
    offset = 0
    names = sorted(tensors)
    for name in names:
        arr = tensors[name]
        header["tensors"].append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += int(arr.size)
    text = json.dumps(header).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(text)))
        f.write(text)
        for name in names:
            f.write(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())
    os.replace(tmp, path)


def read_container(path):
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise ValueError("not a busdx container: " + path)
        (n,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(n))
        data = np.frombuffer(f.read(), dtype="<f4")
    tensors = {}
    for t in header["tensors"]:
        tensors[t["name"]] = data[t["offset"]:t["offset"] + t["count"]].reshape(t["shape"])
    return header["meta"], tensors


def build_model(name, weights):
    import torchvision.models as tvm

    ctor = getattr(tvm, name)
    if weights == "imagenet":
        return ctor(weights="IMAGENET1K_V1")
    return ctor(weights=None)


def randomize_batchnorm(model, seed):
    import torch

    g = torch.Generator().manual_seed(seed + 1)
    for m in model.modules():
        if isinstance(m, torch.nn.BatchNorm2d):
            c = m.num_features
            m.weight.data = 0.5 + torch.rand(c, generator=g)
            m.bias.data = 0.1 * torch.randn(c, generator=g)
            m.running_mean.data = 0.1 * torch.randn(c, generator=g)
            m.running_var.data = 0.5 + torch.rand(c, generator=g)


def feature_state(name, model):
    prefix = PREFIX[name]
    out = {}
    for key, value in model.state_dict().items():
        if key.endswith("num_batches_tracked"):
            continue
        if name == "resnet50" and key.startswith("fc."):
            continue
        if name != "resnet50" and not key.startswith(prefix):
            continue
        out[key] = value.detach().cpu().numpy().astype(np.float32)
    return out


def features(name, model, x):
    import torch

    with torch.no_grad():
        if name == "resnet50":
            m = model
            x = m.maxpool(m.relu(m.bn1(m.conv1(x))))
            return m.layer4(m.layer3(m.layer2(m.layer1(x))))
        y = model.features(x)
        return torch.relu(y) if name == "densenet121" else y


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--backbone", required=True, choices=sorted(PREFIX))
    ap.add_argument("--out", required=True)
    src = ap.add_mutually_exclusive_group()
    src.add_argument("--state-dict", help="torchvision state_dict (.pth) to convert")
    src.add_argument("--random-seed", type=int, help="random weights instead of ImageNet")
    ap.add_argument("--reference", help="also write a feature reference container for a seeded input")
    ap.add_argument("--size", type=int, default=128)
    args = ap.parse_args()

    import torch

    if args.random_seed is not None:
        torch.manual_seed(args.random_seed)
        model = build_model(args.backbone, None)
        randomize_batchnorm(model, args.random_seed)
        source = "torchvision random init, seed %d" % args.random_seed
    else:
        model = build_model(args.backbone, None if args.state_dict else "imagenet")
        if args.state_dict:
            model.load_state_dict(torch.load(args.state_dict, map_location="cpu"))
        source = "torchvision " + (args.state_dict or "IMAGENET1K_V1")
    model.eval()

    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, args.backbone + ".busdx")
    meta = {"kind": "backbone", "backbone": args.backbone, "input_scaling": "torch", "source": source}
    write_container(path, meta, feature_state(args.backbone, model))
    print(path)

    if args.reference:
        rng = np.random.default_rng(7)
        hwc = rng.standard_normal((args.size, args.size, 3)).astype(np.float32)
        x = torch.from_numpy(hwc.transpose(2, 0, 1).copy()).unsqueeze(0)
        y = features(args.backbone, model, x)[0].numpy()
        write_container(args.reference, {"kind": "reference", "backbone": args.backbone},
                        {"input": hwc, "features": y.reshape(-1), "shape": np.array(y.shape, dtype=np.float32)})
        print(args.reference)
    return 0


if __name__ == "__main__":
    sys.exit(main())
