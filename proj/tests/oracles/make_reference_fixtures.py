#!/usr/bin/env python3
"""Builds small reference networks in PyTorch from the architecture
description, runs one forward/backward pass and freezes inputs, weights,
outputs and gradients into tests/data/*.busdx.

U-Net: depth 2, base 4, 16x16x3 input, mean BCE on logits.
Head: widths 8,8,6,5,4 over 10 features, tanh, softmax-3, mean
cross-entropy over a batch of 3, no dropout.
"""

import os
import sys

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "..", "tools"))
from export_torchvision_backbone import write_container  # noqa: E402

OUT = os.path.join(os.path.dirname(__file__), "..", "data")


class RefUNet(nn.Module):
    def __init__(self, depth, base, in_ch=3):
        super().__init__()
        self.depth = depth
        self.enc = nn.ModuleList()
        c = in_ch
        for i in range(depth):
            f = base * 2 ** i
            self.enc.append(nn.ModuleList([nn.Conv2d(c, f, 3, padding=1), nn.Conv2d(f, f // 2, 3, padding=1)]))
            c = f // 2
        fb = base * 2 ** depth
        self.bott = nn.ModuleList([nn.Conv2d(c, fb, 3, padding=1), nn.Conv2d(fb, fb // 2, 3, padding=1)])
        c = fb // 2
        self.dec = nn.ModuleList([None] * depth)
        for i in reversed(range(depth)):
            f = base * 2 ** i
            self.dec[i] = nn.ModuleList([nn.ConvTranspose2d(c, f // 2, 2, stride=2),
                                         nn.Conv2d(f, f, 3, padding=1), nn.Conv2d(f, f // 2, 3, padding=1)])
            c = f // 2
        self.head = nn.Conv2d(c, 1, 1)

    def forward(self, x):
        skips = []
        for a, b in self.enc:
            x = F.relu(b(F.relu(a(x))))
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = F.relu(self.bott[1](F.relu(self.bott[0](x))))
        for i in reversed(range(self.depth)):
            up, a, b = self.dec[i]
            x = torch.cat([up(x), skips[i]], dim=1)
            x = F.relu(b(F.relu(a(x))))
        return self.head(x)

    def named(self):
        out = {}
        for i, (a, b) in enumerate(self.enc):
            out["enc%d.conv_a" % i] = a
            out["enc%d.conv_b" % i] = b
        out["bottleneck.conv_a"], out["bottleneck.conv_b"] = self.bott
        for i in range(self.depth):
            up, a, b = self.dec[i]
            out["dec%d.up" % i], out["dec%d.conv_a" % i], out["dec%d.conv_b" % i] = up, a, b
        out["head"] = self.head
        return out


def unet_fixture():
    torch.manual_seed(5)
    net = RefUNet(2, 4).double()
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.uniform_(m.weight, -0.5, 0.5)
            nn.init.uniform_(m.bias, -0.1, 0.1)
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    y = (torch.rand(1, 1, 16, 16, dtype=torch.float64) > 0.6).double()
    logits = net(x)
    loss = F.binary_cross_entropy_with_logits(logits, y)
    loss.backward()
    t = {"input": x[0].permute(1, 2, 0).numpy(), "target": y[0, 0].numpy(),
         "output": torch.sigmoid(logits)[0, 0].detach().numpy(), "loss": np.array([loss.item()])}
    for name, m in net.named().items():
        t[name + ".weight"] = m.weight.detach().numpy()
        t[name + ".bias"] = m.bias.detach().numpy()
        t["grad." + name + ".weight"] = m.weight.grad.numpy()
        t["grad." + name + ".bias"] = m.bias.grad.numpy()
    write_container(os.path.join(OUT, "unet_reference.busdx"),
                    {"kind": "reference", "depth": 2, "base_filters": 4, "input_size": 16}, t)


def head_fixture():
    torch.manual_seed(9)
    widths = [8, 8, 6, 5, 4]
    dims = [10] + widths + [3]
    layers = [nn.Linear(dims[i], dims[i + 1]).double() for i in range(len(dims) - 1)]
    for l in layers:
        nn.init.uniform_(l.weight, -0.6, 0.6)
        nn.init.uniform_(l.bias, -0.2, 0.2)
    x = torch.randn(3, 10, dtype=torch.float64)
    labels = torch.tensor([0, 2, 1])
    h = x
    for l in layers[:-1]:
        h = torch.tanh(l(h))
    logits = layers[-1](h)
    loss = F.cross_entropy(logits, labels)
    loss.backward()
    names = ["dense%d" % i for i in range(len(widths))] + ["softmax"]
    t = {"features": x.numpy(), "labels": labels.double().numpy(),
         "probs": torch.softmax(logits, 1).detach().numpy(), "loss": np.array([loss.item()])}
    for n, l in zip(names, layers):
        t[n + ".weight"] = l.weight.detach().numpy()
        t[n + ".bias"] = l.bias.detach().numpy()
        t["grad." + n + ".weight"] = l.weight.grad.numpy()
        t["grad." + n + ".bias"] = l.bias.grad.numpy()
    write_container(os.path.join(OUT, "head_reference.busdx"),
                    {"kind": "reference", "widths": widths, "feature_dim": 10}, t)


def main():
    os.makedirs(OUT, exist_ok=True)
    unet_fixture()
    head_fixture()


if __name__ == "__main__":
    main()
