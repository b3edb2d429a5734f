#!/usr/bin/env node
/**
 * deepcut-extract: dump ViT patch features as DCUT files.
 *
 *   deepcut-extract extract --image photo.png --out photo.dcut \
 *       --stride 8 --token keys [--weights weights/vit_small_p8.safetensors]
 *
 * Exit codes: 0 success, 1 domain error (missing weights, unreadable image),
 * 2 usage error.
 */

import { writeFileSync } from 'fs'
import yargs from 'yargs'
import { hideBin } from 'yargs/helpers'
import { extractToDcut } from './extract'
import { MissingWeightsError } from './weights'

const DEFAULT_WEIGHTS =
  process.env.EXTRACTOR_WEIGHTS ?? 'weights/vit_small_p8.safetensors'

export async function main(argv: string[]): Promise<number> {
  let usageError = false
  const parser = yargs(argv)
    .scriptName('deepcut-extract')
    .command('extract', 'extract features from one image', y =>
      y
        .option('image', { type: 'string', demandOption: true })
        .option('out', { type: 'string', demandOption: true })
        .option('stride', { type: 'number', choices: [8, 4], default: 8 })
        .option('token', {
          type: 'string',
          choices: ['keys', 'cls'] as const,
          default: 'keys' as const,
        })
        .option('weights', { type: 'string', default: DEFAULT_WEIGHTS })
        .option('model-id', { type: 'string' }),
    )
    .demandCommand(1)
    .strict()
    .exitProcess(false)
    .fail((msg, err) => {
      usageError = true
      console.error(msg ?? err?.message)
    })

  const args = await parser.parse()
  if (usageError) return 2
  if (args._[0] !== 'extract') {
    console.error(`unknown command ${args._[0]}`)
    return 2
  }
  try {
    const buf = extractToDcut({
      imagePath: args.image as string,
      weightsPath: args.weights as string,
      stride: args.stride as number,
      token: args.token as 'keys' | 'cls',
      modelId: args['model-id'] as string | undefined,
    })
    writeFileSync(args.out as string, buf)
    console.error(`wrote ${buf.length} bytes to ${args.out}`)
    return 0
  } catch (err) {
    if (err instanceof MissingWeightsError) {
      console.error(`deepcut-extract: ${err.message}`)
      return 1
    }
    console.error(`deepcut-extract: error: ${(err as Error).message}`)
    return 1
  }
}

if (require.main === module) {
  main(hideBin(process.argv)).then(code => {
    process.exitCode = code
  })
}
