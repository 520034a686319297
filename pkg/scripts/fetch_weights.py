#!/usr/bin/env python3
"""Download ImageNet-pretrained VGG19 and ResNet50 weights and save them in
the toolkit's on-disk format (a torch.save-d state dict).

Requires network access; everything else in the toolkit runs offline.

Usage:
    python scripts/fetch_weights.py --out weights/
"""

import argparse
from pathlib import Path

import torch
from torchvision import models


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="weights", help="output directory")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    vgg = models.vgg19(weights=models.VGG19_Weights.IMAGENET1K_V1)
    torch.save(vgg.state_dict(), out / "vgg19.pt")
    print(f"wrote {out / 'vgg19.pt'}")

    resnet = models.resnet50(weights=models.ResNet50_Weights.IMAGENET1K_V1)
    torch.save(resnet.state_dict(), out / "resnet50.pt")
    print(f"wrote {out / 'resnet50.pt'}")


if __name__ == "__main__":
    main()
