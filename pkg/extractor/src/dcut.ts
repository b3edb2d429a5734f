/**
 * DCUT container writer/reader.
 *
 * Layout (all integers little-endian): magic "DCUT", u32 version=1,
 * u32 grid_h, u32 grid_w, u32 embed_dim, u32 meta_len, meta_len bytes of
 * UTF-8 JSON {image_h, image_w, patch_size, stride, source_id}, then
 * grid_h*grid_w*embed_dim float32 values, row-major.
 */

export interface GeometryMeta {
  image_h: number
  image_w: number
  patch_size: number
  stride: number
  source_id: string
}

export interface FeatureField {
  gridH: number
  gridW: number
  embedDim: number
  meta: GeometryMeta
  /** row-major, patch index = row * gridW + col */
  features: Float32Array
}

const MAGIC = 'DCUT'
const VERSION = 1

export function tokenGrid(imageDim: number, patch: number, stride: number): number {
  return Math.floor((imageDim - patch) / stride) + 1
}

export function encodeDcut(field: FeatureField): Buffer {
  const { gridH, gridW, embedDim, meta, features } = field
  if (features.length !== gridH * gridW * embedDim) {
    throw new Error(
      `payload has ${features.length} values, expected ${gridH * gridW * embedDim}`,
    )
  }
  for (let i = 0; i < features.length; i++) {
    if (!Number.isFinite(features[i])) {
      throw new Error(`non-finite feature value at flat index ${i}`)
    }
  }
  const gh = tokenGrid(meta.image_h, meta.patch_size, meta.stride)
  const gw = tokenGrid(meta.image_w, meta.patch_size, meta.stride)
  if (gh !== gridH || gw !== gridW) {
    throw new Error(
      `grid ${gridH}x${gridW} inconsistent with geometry (token formula gives ${gh}x${gw})`,
    )
  }
  // key order matters only for byte-stable output, not for readers
  const metaJson = JSON.stringify({
    image_h: meta.image_h,
    image_w: meta.image_w,
    patch_size: meta.patch_size,
    stride: meta.stride,
    source_id: meta.source_id,
  })
  const metaBytes = Buffer.from(metaJson, 'utf-8')
  const total = 4 + 20 + metaBytes.length + features.length * 4
  const out = Buffer.alloc(total)
  out.write(MAGIC, 0, 'ascii')
  out.writeUInt32LE(VERSION, 4)
  out.writeUInt32LE(gridH, 8)
  out.writeUInt32LE(gridW, 12)
  out.writeUInt32LE(embedDim, 16)
  out.writeUInt32LE(metaBytes.length, 20)
  metaBytes.copy(out, 24)
  const view = new DataView(out.buffer, out.byteOffset + 24 + metaBytes.length)
  for (let i = 0; i < features.length; i++) {
    view.setFloat32(i * 4, features[i], true)
  }
  return out
}

export function decodeDcut(data: Buffer): FeatureField {
  if (data.length < 24 || data.toString('ascii', 0, 4) !== MAGIC) {
    throw new Error('not a DCUT file (bad magic)')
  }
  const version = data.readUInt32LE(4)
  if (version !== VERSION) throw new Error(`unsupported DCUT version ${version}`)
  const gridH = data.readUInt32LE(8)
  const gridW = data.readUInt32LE(12)
  const embedDim = data.readUInt32LE(16)
  const metaLen = data.readUInt32LE(20)
  const meta = JSON.parse(data.toString('utf-8', 24, 24 + metaLen)) as GeometryMeta
  const count = gridH * gridW * embedDim
  const start = 24 + metaLen
  if (data.length !== start + count * 4) {
    throw new Error(
      `payload length ${data.length - start} bytes, expected ${count * 4}`,
    )
  }
  const features = new Float32Array(count)
  const view = new DataView(data.buffer, data.byteOffset + start)
  for (let i = 0; i < count; i++) features[i] = view.getFloat32(i * 4, true)
  return { gridH, gridW, embedDim, meta, features }
}
