/**
 * Checkpoint loading. Weights live in a single safetensors file whose tensor
 * names follow the standard ViT state-dict scheme:
 *
 *   patch_embed.proj.weight [dim, 3, p, p]   patch_embed.proj.bias [dim]
 *   cls_token [1, 1, dim]                    pos_embed [1, 1 + g*g, dim]
 *   blocks.{i}.norm1.weight/bias             blocks.{i}.attn.qkv.weight/bias
 *   blocks.{i}.attn.proj.weight/bias         blocks.{i}.norm2.weight/bias
 *   blocks.{i}.mlp.fc1.weight/bias           blocks.{i}.mlp.fc2.weight/bias
 *   norm.weight / norm.bias                  (final layer norm)
 *
 * The file's __metadata__ block carries model_id, patch_size, image_size,
 * dim, depth, heads and mlp_ratio as strings. scripts/convert_checkpoint.py
 * produces this layout from a standard .pth state dict.
 */

import { existsSync, readFileSync } from 'fs'

export interface TensorEntry {
  shape: number[]
  data: Float32Array
}

export interface Checkpoint {
  modelId: string
  patchSize: number
  imageSize: number
  dim: number
  depth: number
  heads: number
  mlpRatio: number
  tensors: Map<string, TensorEntry>
}

export class MissingWeightsError extends Error {}

const DOWNLOAD_HELP = `
To run the extractor you need a ViT checkpoint in safetensors format.
For the reference self-distilled ViT-S/8 (dino_vits8):
  1. download https://dl.fbaipublicfiles.com/dino/dino_deitsmall8_pretrain/dino_deitsmall8_pretrain.pth
  2. convert it:
     python3 scripts/convert_checkpoint.py dino_deitsmall8_pretrain.pth weights/vit_small_p8.safetensors
Or generate seeded random test weights (geometry-faithful, semantics-free):
     npm run make-test-weights -- --out weights/vit_small_p8.safetensors`

interface RawHeader {
  [name: string]: { dtype: string; shape: number[]; data_offsets: [number, number] }
}

function metaInt(meta: Record<string, string>, key: string): number {
  const raw = meta[key]
  const value = Number.parseInt(raw ?? '', 10)
  if (!Number.isFinite(value)) {
    throw new Error(`checkpoint metadata missing integer field ${key}`)
  }
  return value
}

export function readSafetensors(path: string): {
  meta: Record<string, string>
  tensors: Map<string, TensorEntry>
} {
  const buf = readFileSync(path)
  if (buf.length < 8) throw new Error(`${path}: not a safetensors file`)
  const headerLen = Number(buf.readBigUInt64LE(0))
  const header = JSON.parse(buf.toString('utf-8', 8, 8 + headerLen)) as RawHeader &
    { __metadata__?: Record<string, string> }
  const meta = header.__metadata__ ?? {}
  delete header.__metadata__
  const base = 8 + headerLen
  const tensors = new Map<string, TensorEntry>()
  for (const [name, entry] of Object.entries(header)) {
    if (entry.dtype !== 'F32') {
      throw new Error(`${path}: tensor ${name} has dtype ${entry.dtype}, need F32`)
    }
    const [start, end] = entry.data_offsets
    const count = (end - start) / 4
    const data = new Float32Array(count)
    const view = new DataView(buf.buffer, buf.byteOffset + base + start, end - start)
    for (let i = 0; i < count; i++) data[i] = view.getFloat32(i * 4, true)
    tensors.set(name, { shape: entry.shape, data })
  }
  return { meta, tensors }
}

export function loadCheckpoint(path: string): Checkpoint {
  if (!existsSync(path)) {
    throw new MissingWeightsError(`weights file not found: ${path}\n${DOWNLOAD_HELP}`)
  }
  const { meta, tensors } = readSafetensors(path)
  const checkpoint: Checkpoint = {
    modelId: meta.model_id ?? 'unknown',
    patchSize: metaInt(meta, 'patch_size'),
    imageSize: metaInt(meta, 'image_size'),
    dim: metaInt(meta, 'dim'),
    depth: metaInt(meta, 'depth'),
    heads: metaInt(meta, 'heads'),
    mlpRatio: metaInt(meta, 'mlp_ratio'),
    tensors,
  }
  const required = ['patch_embed.proj.weight', 'patch_embed.proj.bias', 'cls_token', 'pos_embed', 'norm.weight', 'norm.bias']
  for (let i = 0; i < checkpoint.depth; i++) {
    for (const suffix of [
      'norm1.weight', 'norm1.bias', 'attn.qkv.weight', 'attn.qkv.bias',
      'attn.proj.weight', 'attn.proj.bias', 'norm2.weight', 'norm2.bias',
      'mlp.fc1.weight', 'mlp.fc1.bias', 'mlp.fc2.weight', 'mlp.fc2.bias',
    ]) {
      required.push(`blocks.${i}.${suffix}`)
    }
  }
  for (const name of required) {
    if (!tensors.has(name)) {
      throw new Error(`${path}: checkpoint is missing tensor ${name}`)
    }
  }
  return checkpoint
}

export function tensor(ckpt: Checkpoint, name: string): TensorEntry {
  const entry = ckpt.tensors.get(name)
  if (!entry) throw new Error(`checkpoint is missing tensor ${name}`)
  return entry
}
