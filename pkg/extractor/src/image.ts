/**
 * Image loading (PPM/PNG/JPEG) and Lanczos resampling to the model's input
 * resolution, followed by the standard per-channel normalization.
 */

import { readFileSync } from 'fs'
import { decode as decodeJpeg } from 'jpeg-js'
import { PNG } from 'pngjs'

export interface RgbImage {
  width: number
  height: number
  /** interleaved RGB in [0, 1], length = width * height * 3 */
  data: Float32Array
}

const IMAGENET_MEAN = [0.485, 0.456, 0.406]
const IMAGENET_STD = [0.229, 0.224, 0.225]

function fromRgba(width: number, height: number, rgba: Uint8Array): RgbImage {
  const data = new Float32Array(width * height * 3)
  for (let p = 0; p < width * height; p++) {
    data[p * 3] = rgba[p * 4] / 255
    data[p * 3 + 1] = rgba[p * 4 + 1] / 255
    data[p * 3 + 2] = rgba[p * 4 + 2] / 255
  }
  return { width, height, data }
}

function parsePpm(buf: Buffer): RgbImage {
  // P6, ASCII header tokens with # comments, then binary RGB
  if (buf.toString('ascii', 0, 2) !== 'P6') throw new Error('not a P6 PPM')
  let pos = 2
  const tokens: number[] = []
  while (tokens.length < 3) {
    while (pos < buf.length && /\s/.test(String.fromCharCode(buf[pos]))) pos++
    if (buf[pos] === 0x23) {
      while (pos < buf.length && buf[pos] !== 0x0a) pos++
      continue
    }
    let start = pos
    while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) pos++
    tokens.push(parseInt(buf.toString('ascii', start, pos), 10))
  }
  pos++ // single whitespace after maxval
  const [width, height, maxval] = tokens
  if (!(maxval > 0 && maxval < 256)) {
    throw new Error(`unsupported PPM maxval ${maxval}`)
  }
  const expected = width * height * 3
  if (buf.length - pos < expected) {
    throw new Error(`truncated PPM: ${buf.length - pos} of ${expected} bytes`)
  }
  const data = new Float32Array(expected)
  for (let i = 0; i < expected; i++) data[i] = buf[pos + i] / maxval
  return { width, height, data }
}

export function loadImage(path: string): RgbImage {
  let buf: Buffer
  try {
    buf = readFileSync(path)
  } catch (err) {
    throw new Error(`cannot read image ${path}: ${(err as Error).message}`)
  }
  if (buf.length >= 2 && buf.toString('ascii', 0, 2) === 'P6') return parsePpm(buf)
  if (buf.length >= 8 && buf.readUInt32BE(0) === 0x89504e47) {
    const png = PNG.sync.read(buf)
    return fromRgba(png.width, png.height, png.data)
  }
  if (buf.length >= 2 && buf[0] === 0xff && buf[1] === 0xd8) {
    const jpg = decodeJpeg(buf, { useTArray: true })
    return fromRgba(jpg.width, jpg.height, jpg.data)
  }
  throw new Error(`unsupported image format in ${path} (PPM/PNG/JPEG expected)`)
}

function lanczos3(x: number): number {
  if (x === 0) return 1
  const ax = Math.abs(x)
  if (ax >= 3) return 0
  const pix = Math.PI * x
  return (3 * Math.sin(pix) * Math.sin(pix / 3)) / (pix * pix)
}

interface AxisFilter {
  starts: Int32Array
  counts: Int32Array
  weights: Float64Array
  maxCount: number
}

function buildFilter(srcLen: number, dstLen: number): AxisFilter {
  const scale = srcLen / dstLen
  const filterScale = Math.max(1, scale)
  const support = 3 * filterScale
  const maxCount = Math.ceil(2 * support) + 2
  const starts = new Int32Array(dstLen)
  const counts = new Int32Array(dstLen)
  const weights = new Float64Array(dstLen * maxCount)
  for (let i = 0; i < dstLen; i++) {
    const center = (i + 0.5) * scale
    const lo = Math.max(0, Math.floor(center - support + 0.5))
    const hi = Math.min(srcLen, Math.ceil(center + support - 0.5))
    let sum = 0
    for (let j = lo; j < hi; j++) {
      const w = lanczos3((j + 0.5 - center) / filterScale)
      weights[i * maxCount + (j - lo)] = w
      sum += w
    }
    if (sum !== 0) {
      for (let j = 0; j < hi - lo; j++) weights[i * maxCount + j] /= sum
    }
    starts[i] = lo
    counts[i] = hi - lo
  }
  return { starts, counts, weights, maxCount }
}

/** Separable Lanczos-3 resampling of interleaved RGB data. */
export function resizeLanczos(img: RgbImage, width: number, height: number): RgbImage {
  const fx = buildFilter(img.width, width)
  // horizontal pass
  const mid = new Float32Array(img.height * width * 3)
  for (let y = 0; y < img.height; y++) {
    for (let x = 0; x < width; x++) {
      const start = fx.starts[x]
      const count = fx.counts[x]
      let r = 0
      let g = 0
      let b = 0
      for (let t = 0; t < count; t++) {
        const w = fx.weights[x * fx.maxCount + t]
        const p = (y * img.width + start + t) * 3
        r += w * img.data[p]
        g += w * img.data[p + 1]
        b += w * img.data[p + 2]
      }
      const q = (y * width + x) * 3
      mid[q] = r
      mid[q + 1] = g
      mid[q + 2] = b
    }
  }
  // vertical pass
  const fy = buildFilter(img.height, height)
  const out = new Float32Array(height * width * 3)
  for (let y = 0; y < height; y++) {
    const start = fy.starts[y]
    const count = fy.counts[y]
    for (let x = 0; x < width; x++) {
      let r = 0
      let g = 0
      let b = 0
      for (let t = 0; t < count; t++) {
        const w = fy.weights[y * fy.maxCount + t]
        const p = ((start + t) * width + x) * 3
        r += w * mid[p]
        g += w * mid[p + 1]
        b += w * mid[p + 2]
      }
      const q = (y * width + x) * 3
      out[q] = r
      out[q + 1] = g
      out[q + 2] = b
    }
  }
  return { width, height, data: out }
}

/** (x - mean) / std per channel, in place. */
export function normalizeImagenet(img: RgbImage): RgbImage {
  for (let p = 0; p < img.width * img.height; p++) {
    for (let c = 0; c < 3; c++) {
      img.data[p * 3 + c] = (img.data[p * 3 + c] - IMAGENET_MEAN[c]) / IMAGENET_STD[c]
    }
  }
  return img
}
