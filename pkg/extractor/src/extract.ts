/**
 * End-to-end extraction: image file -> resized/normalized pixels -> frozen
 * ViT forward -> DCUT bytes.
 */

import { encodeDcut } from './dcut'
import { loadImage, normalizeImagenet, resizeLanczos } from './image'
import { extractFeatures } from './vit'
import { Checkpoint, loadCheckpoint } from './weights'

export interface ExtractSpec {
  imagePath: string
  weightsPath: string
  /** patch size or half of it; validated against the checkpoint */
  stride?: number
  token?: 'keys' | 'cls'
  /** overrides the checkpoint's model id in the output metadata */
  modelId?: string
}

export function extractToDcut(spec: ExtractSpec, preloaded?: Checkpoint): Buffer {
  const ckpt = preloaded ?? loadCheckpoint(spec.weightsPath)
  const token = spec.token ?? 'keys'
  const stride = spec.stride ?? ckpt.patchSize
  if (stride !== ckpt.patchSize && stride * 2 !== ckpt.patchSize) {
    throw new Error(
      `stride ${stride} unsupported: use ${ckpt.patchSize} or ${ckpt.patchSize / 2}`,
    )
  }
  const raw = loadImage(spec.imagePath)
  const resized = resizeLanczos(raw, ckpt.imageSize, ckpt.imageSize)
  const img = normalizeImagenet(resized)
  const out = extractFeatures(img, ckpt, stride, token)
  const modelId = spec.modelId ?? ckpt.modelId
  if (token === 'cls') {
    // a single global token: the whole image is one patch
    return encodeDcut({
      gridH: 1,
      gridW: 1,
      embedDim: ckpt.dim,
      features: out.features,
      meta: {
        image_h: ckpt.imageSize,
        image_w: ckpt.imageSize,
        patch_size: ckpt.imageSize,
        stride: ckpt.imageSize,
        source_id: `${modelId}|token=cls|patch=${ckpt.patchSize}`,
      },
    })
  }
  return encodeDcut({
    gridH: out.gridH,
    gridW: out.gridW,
    embedDim: ckpt.dim,
    features: out.features,
    meta: {
      image_h: ckpt.imageSize,
      image_w: ckpt.imageSize,
      patch_size: ckpt.patchSize,
      stride,
      source_id: `${modelId}|token=keys|patch=${ckpt.patchSize}|stride=${stride}`,
    },
  })
}
