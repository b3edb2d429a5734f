/**
 * Vision-transformer forward passes on the tfjs CPU backend, frozen weights,
 * eval mode (no dropout, no gradients).
 *
 * Two read-outs:
 *  - "keys": the key-projection outputs of the final attention block for
 *    every spatial token (class token dropped). Only blocks 0..depth-2 run
 *    in full; the last block contributes its first layer norm and the key
 *    slice of its fused qkv projection.
 *  - "cls": the class token after the full stack and the final layer norm.
 *
 * A stride below the patch size slides the patch-embedding convolution with
 * overlap, enlarging the token grid; the positional-embedding grid is
 * bilinearly resized to match.
 */

import * as tf from '@tensorflow/tfjs'
import { Checkpoint, tensor } from './weights'
import { RgbImage } from './image'

const LN_EPS = 1e-6

function layerNorm(x: tf.Tensor2D, weight: tf.Tensor1D, bias: tf.Tensor1D): tf.Tensor2D {
  const mean = x.mean(-1, true)
  const centered = x.sub(mean)
  const variance = centered.square().mean(-1, true)
  return centered
    .div(variance.add(LN_EPS).sqrt())
    .mul(weight)
    .add(bias) as tf.Tensor2D
}

function gelu(x: tf.Tensor): tf.Tensor {
  return x.mul(0.5).mul(tf.erf(x.div(Math.SQRT2)).add(1))
}

/** h @ W^T + b with a torch-layout [out, in] weight. */
function linear(x: tf.Tensor2D, weight: tf.Tensor2D, bias: tf.Tensor1D): tf.Tensor2D {
  return tf.matMul(x, weight, false, true).add(bias) as tf.Tensor2D
}

function block2d(ckpt: Checkpoint, name: string): tf.Tensor2D {
  const entry = tensor(ckpt, name)
  return tf.tensor2d(entry.data, entry.shape as [number, number])
}

function block1d(ckpt: Checkpoint, name: string): tf.Tensor1D {
  const entry = tensor(ckpt, name)
  return tf.tensor1d(entry.data)
}

function attention(
  x: tf.Tensor2D,
  ckpt: Checkpoint,
  index: number,
): tf.Tensor2D {
  const prefix = `blocks.${index}`
  const tokens = x.shape[0]
  const { dim, heads } = ckpt
  const headDim = dim / heads

  const normed = layerNorm(x, block1d(ckpt, `${prefix}.norm1.weight`), block1d(ckpt, `${prefix}.norm1.bias`))
  const qkv = linear(normed, block2d(ckpt, `${prefix}.attn.qkv.weight`), block1d(ckpt, `${prefix}.attn.qkv.bias`))
  // [tokens, 3*dim] -> [3, heads, tokens, headDim]
  const parts = qkv
    .reshape([tokens, 3, heads, headDim])
    .transpose([1, 2, 0, 3]) as tf.Tensor4D
  const q = parts.slice([0, 0, 0, 0], [1, heads, tokens, headDim]).squeeze([0]) as tf.Tensor3D
  const k = parts.slice([1, 0, 0, 0], [1, heads, tokens, headDim]).squeeze([0]) as tf.Tensor3D
  const v = parts.slice([2, 0, 0, 0], [1, heads, tokens, headDim]).squeeze([0]) as tf.Tensor3D

  const logits = tf.matMul(q, k, false, true).mul(1 / Math.sqrt(headDim))
  const attn = tf.softmax(logits, -1)
  const mixed = tf
    .matMul(attn, v)
    .transpose([1, 0, 2])
    .reshape([tokens, dim]) as tf.Tensor2D
  const projected = linear(mixed, block2d(ckpt, `${prefix}.attn.proj.weight`), block1d(ckpt, `${prefix}.attn.proj.bias`))
  const afterAttn = x.add(projected) as tf.Tensor2D

  const normed2 = layerNorm(afterAttn, block1d(ckpt, `${prefix}.norm2.weight`), block1d(ckpt, `${prefix}.norm2.bias`))
  const hidden = gelu(linear(normed2, block2d(ckpt, `${prefix}.mlp.fc1.weight`), block1d(ckpt, `${prefix}.mlp.fc1.bias`))) as tf.Tensor2D
  const mlpOut = linear(hidden, block2d(ckpt, `${prefix}.mlp.fc2.weight`), block1d(ckpt, `${prefix}.mlp.fc2.bias`))
  return afterAttn.add(mlpOut) as tf.Tensor2D
}

function keyProjection(x: tf.Tensor2D, ckpt: Checkpoint, index: number): tf.Tensor2D {
  const prefix = `blocks.${index}`
  const { dim } = ckpt
  const normed = layerNorm(x, block1d(ckpt, `${prefix}.norm1.weight`), block1d(ckpt, `${prefix}.norm1.bias`))
  const qkvWeight = block2d(ckpt, `${prefix}.attn.qkv.weight`)
  const qkvBias = block1d(ckpt, `${prefix}.attn.qkv.bias`)
  const keyWeight = qkvWeight.slice([dim, 0], [dim, dim]) as tf.Tensor2D
  const keyBias = qkvBias.slice([dim], [dim]) as tf.Tensor1D
  return linear(normed, keyWeight, keyBias)
}

/** Patch embedding + class token + (grid-resized) positional embedding. */
function embed(img: RgbImage, ckpt: Checkpoint, stride: number): {
  tokens: tf.Tensor2D
  gridH: number
  gridW: number
} {
  const p = ckpt.patchSize
  const gridH = Math.floor((img.height - p) / stride) + 1
  const gridW = Math.floor((img.width - p) / stride) + 1

  const input = tf.tensor4d(img.data, [1, img.height, img.width, 3])
  const convEntry = tensor(ckpt, 'patch_embed.proj.weight') // [dim, 3, p, p]
  const kernel = tf
    .tensor4d(convEntry.data, convEntry.shape as [number, number, number, number])
    .transpose([2, 3, 1, 0]) as tf.Tensor4D // -> [p, p, 3, dim]
  const convBias = block1d(ckpt, 'patch_embed.proj.bias')
  const patches = tf
    .conv2d(input, kernel, [stride, stride], 'valid')
    .add(convBias)
    .reshape([gridH * gridW, ckpt.dim]) as tf.Tensor2D

  const clsEntry = tensor(ckpt, 'cls_token')
  const cls = tf.tensor2d(clsEntry.data, [1, ckpt.dim])

  const posEntry = tensor(ckpt, 'pos_embed') // [1, 1 + g0*g0, dim]
  const posTokens = posEntry.shape[1] - 1
  const g0 = Math.round(Math.sqrt(posTokens))
  if (g0 * g0 !== posTokens) {
    throw new Error(`pos_embed with ${posTokens} patch positions is not square`)
  }
  const posAll = tf.tensor2d(posEntry.data, [posTokens + 1, ckpt.dim])
  const posCls = posAll.slice([0, 0], [1, ckpt.dim])
  let posPatch = posAll.slice([1, 0], [posTokens, ckpt.dim])
  if (g0 !== gridH || g0 !== gridW) {
    posPatch = tf.image
      .resizeBilinear(posPatch.reshape([1, g0, g0, ckpt.dim]) as tf.Tensor4D, [gridH, gridW])
      .reshape([gridH * gridW, ckpt.dim]) as tf.Tensor2D
  }
  const tokens = tf
    .concat([cls, patches], 0)
    .add(tf.concat([posCls, posPatch], 0)) as tf.Tensor2D
  return { tokens, gridH, gridW }
}

export interface VitFeatures {
  gridH: number
  gridW: number
  /** [gridH * gridW, dim] for keys, [1, dim] for cls */
  features: Float32Array
}

export function extractFeatures(
  img: RgbImage,
  ckpt: Checkpoint,
  stride: number,
  token: 'keys' | 'cls',
): VitFeatures {
  return tf.tidy(() => {
    const { tokens, gridH, gridW } = embed(img, ckpt, stride)
    let x = tokens
    for (let i = 0; i < ckpt.depth - 1; i++) {
      x = attention(x, ckpt, i)
    }
    if (token === 'keys') {
      const keys = keyProjection(x, ckpt, ckpt.depth - 1)
      const spatial = keys.slice([1, 0], [gridH * gridW, ckpt.dim])
      return {
        gridH,
        gridW,
        features: new Float32Array(spatial.dataSync()),
      }
    }
    x = attention(x, ckpt, ckpt.depth - 1)
    const normed = layerNorm(x, block1d(ckpt, 'norm.weight'), block1d(ckpt, 'norm.bias'))
    const cls = normed.slice([0, 0], [1, ckpt.dim])
    return { gridH: 1, gridW: 1, features: new Float32Array(cls.dataSync()) }
  })
}
