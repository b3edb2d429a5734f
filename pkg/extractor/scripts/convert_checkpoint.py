#!/usr/bin/env python3
"""Convert a standard ViT .pth state dict to the extractor's safetensors
layout (F32 tensors + string metadata).

    python3 scripts/convert_checkpoint.py dino_deitsmall8_pretrain.pth \
        weights/vit_small_p8.safetensors [--model-id dino_vits8]

Requires torch. The input must use the usual timm/deit tensor names
(patch_embed.proj.*, cls_token, pos_embed, blocks.N.*, norm.*).
"""

import argparse
import json
import struct
import sys
from pathlib import Path


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("src")
    parser.add_argument("dst")
    parser.add_argument("--model-id", default="dino_vits8")
    parser.add_argument("--image-size", type=int, default=280)
    args = parser.parse_args()

    import torch

    state = torch.load(args.src, map_location="cpu", weights_only=True)
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    state = {k.removeprefix("module."): v for k, v in state.items()}

    patch = state["patch_embed.proj.weight"].shape[-1]
    dim = state["patch_embed.proj.weight"].shape[0]
    depth = 1 + max(
        int(k.split(".")[1]) for k in state if k.startswith("blocks.")
    )
    heads_guess = {384: 6, 768: 12, 192: 3}.get(dim)
    if heads_guess is None:
        print(f"cannot guess head count for dim {dim}", file=sys.stderr)
        return 1

    keep = ["patch_embed.proj.weight", "patch_embed.proj.bias", "cls_token",
            "pos_embed", "norm.weight", "norm.bias"]
    for i in range(depth):
        keep += [
            f"blocks.{i}.{s}"
            for s in (
                "norm1.weight", "norm1.bias", "attn.qkv.weight", "attn.qkv.bias",
                "attn.proj.weight", "attn.proj.bias", "norm2.weight",
                "norm2.bias", "mlp.fc1.weight", "mlp.fc1.bias",
                "mlp.fc2.weight", "mlp.fc2.bias",
            )
        ]
    missing = [k for k in keep if k not in state]
    if missing:
        print(f"missing tensors: {missing[:4]}...", file=sys.stderr)
        return 1

    header = {
        "__metadata__": {
            "model_id": args.model_id,
            "patch_size": str(patch),
            "image_size": str(args.image_size),
            "dim": str(dim),
            "depth": str(depth),
            "heads": str(heads_guess),
            "mlp_ratio": str(state["blocks.0.mlp.fc1.weight"].shape[0] // dim),
        }
    }
    blobs = []
    offset = 0
    for name in keep:
        data = state[name].to(torch.float32).contiguous().numpy().tobytes()
        header[name] = {
            "dtype": "F32",
            "shape": list(state[name].shape),
            "data_offsets": [offset, offset + len(data)],
        }
        blobs.append(data)
        offset += len(data)

    header_bytes = json.dumps(header).encode()
    with open(args.dst, "wb") as sink:
        sink.write(struct.pack("<Q", len(header_bytes)))
        sink.write(header_bytes)
        for blob in blobs:
            sink.write(blob)
    print(f"wrote {Path(args.dst).stat().st_size} bytes to {args.dst}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
