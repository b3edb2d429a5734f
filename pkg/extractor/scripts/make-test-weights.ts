#!/usr/bin/env node
/**
 * Writes a seeded-random ViT checkpoint in the extractor's safetensors
 * layout. The geometry (patch size, embedding width, token grids) matches
 * the real small/patch-8 model, so format- and geometry-level tests run
 * without downloading pretrained weights; the features themselves carry no
 * semantics.
 *
 *   npm run make-test-weights -- --out weights/vit_small_p8.safetensors \
 *       [--depth 2] [--dim 384] [--seed 0]
 */

import { mkdirSync, writeFileSync } from 'fs'
import { dirname } from 'path'

export interface TestWeightsConfig {
  out: string
  depth: number
  dim: number
  heads: number
  patch: number
  image: number
  mlpRatio: number
  seed: number
}

export const DEFAULTS: Omit<TestWeightsConfig, 'out'> = {
  depth: 2,
  dim: 384,
  heads: 6,
  patch: 8,
  image: 280,
  mlpRatio: 4,
  seed: 0,
}

function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a |= 0
    a = (a + 0x6d2b79f5) | 0
    let t = Math.imul(a ^ (a >>> 15), 1 | a)
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

function gaussianFill(rand: () => number, out: Float32Array, std: number): void {
  for (let i = 0; i < out.length; i += 2) {
    const u = Math.max(rand(), 1e-12)
    const v = rand()
    const r = Math.sqrt(-2 * Math.log(u))
    out[i] = r * Math.cos(2 * Math.PI * v) * std
    if (i + 1 < out.length) out[i + 1] = r * Math.sin(2 * Math.PI * v) * std
  }
}

export function writeTestCheckpoint(config: TestWeightsConfig): void {
  const { out, depth, dim, heads, patch, image, mlpRatio, seed } = config
  if (dim % heads !== 0) throw new Error(`dim ${dim} not divisible by heads ${heads}`)
  const rand = mulberry32(seed + 0x9e3779b9)
  const grid = Math.floor(image / patch)

  const entries: Array<[string, number[], Float32Array]> = []
  const add = (name: string, shape: number[], std: number | 'ones' | 'zeros') => {
    const count = shape.reduce((a, b) => a * b, 1)
    const data = new Float32Array(count)
    if (std === 'ones') data.fill(1)
    else if (std !== 'zeros') gaussianFill(rand, data, std)
    entries.push([name, shape, data])
  }

  add('patch_embed.proj.weight', [dim, 3, patch, patch], 0.02)
  add('patch_embed.proj.bias', [dim], 'zeros')
  add('cls_token', [1, 1, dim], 0.02)
  add('pos_embed', [1, 1 + grid * grid, dim], 0.02)
  for (let i = 0; i < depth; i++) {
    const p = `blocks.${i}`
    add(`${p}.norm1.weight`, [dim], 'ones')
    add(`${p}.norm1.bias`, [dim], 'zeros')
    add(`${p}.attn.qkv.weight`, [3 * dim, dim], 0.02)
    add(`${p}.attn.qkv.bias`, [3 * dim], 'zeros')
    add(`${p}.attn.proj.weight`, [dim, dim], 0.02)
    add(`${p}.attn.proj.bias`, [dim], 'zeros')
    add(`${p}.norm2.weight`, [dim], 'ones')
    add(`${p}.norm2.bias`, [dim], 'zeros')
    add(`${p}.mlp.fc1.weight`, [mlpRatio * dim, dim], 0.02)
    add(`${p}.mlp.fc1.bias`, [mlpRatio * dim], 'zeros')
    add(`${p}.mlp.fc2.weight`, [dim, mlpRatio * dim], 0.02)
    add(`${p}.mlp.fc2.bias`, [dim], 'zeros')
  }
  add('norm.weight', [dim], 'ones')
  add('norm.bias', [dim], 'zeros')

  const header: Record<string, unknown> = {
    __metadata__: {
      model_id: `random-test-vit-d${depth}-s${seed}`,
      patch_size: String(patch),
      image_size: String(image),
      dim: String(dim),
      depth: String(depth),
      heads: String(heads),
      mlp_ratio: String(mlpRatio),
    },
  }
  let offset = 0
  for (const [name, shape, data] of entries) {
    header[name] = {
      dtype: 'F32',
      shape,
      data_offsets: [offset, offset + data.length * 4],
    }
    offset += data.length * 4
  }
  const headerBytes = Buffer.from(JSON.stringify(header), 'utf-8')
  const buf = Buffer.alloc(8 + headerBytes.length + offset)
  buf.writeBigUInt64LE(BigInt(headerBytes.length), 0)
  headerBytes.copy(buf, 8)
  let cursor = 8 + headerBytes.length
  for (const [, , data] of entries) {
    const view = new DataView(buf.buffer, buf.byteOffset + cursor)
    for (let i = 0; i < data.length; i++) view.setFloat32(i * 4, data[i], true)
    cursor += data.length * 4
  }
  mkdirSync(dirname(out), { recursive: true })
  writeFileSync(out, buf)
}

function parseArgs(argv: string[]): TestWeightsConfig {
  const config: TestWeightsConfig = { out: 'weights/vit_small_p8.safetensors', ...DEFAULTS }
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i].replace(/^--/, '')
    const value = argv[i + 1]
    if (key === 'out') config.out = value
    else if (key in DEFAULTS) (config as any)[key] = Number(value)
    else throw new Error(`unknown option --${key}`)
  }
  return config
}

if (require.main === module) {
  const config = parseArgs(process.argv.slice(2))
  writeTestCheckpoint(config)
  console.error(`wrote random test checkpoint to ${config.out}`)
}
