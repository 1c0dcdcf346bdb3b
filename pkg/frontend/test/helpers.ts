import { Model } from '../src/engine.js';

interface LayerEntry {
  kind: string;
  [key: string]: unknown;
}

/** Assemble a manifest plus weight blob from per-layer specs. */
export function buildModel(
  inputShape: number[],
  classCount: number,
  tapLayers: number[],
  layers: { entry: LayerEntry; weight?: number[]; bias?: number[] }[],
): Model {
  const chunks: Buffer[] = [];
  let offset = 0;
  const entries = layers.map(({ entry, weight, bias }) => {
    const out: LayerEntry = { ...entry };
    if (weight !== undefined) {
      const wb = f32(weight);
      const bb = f32(bias ?? []);
      out.weight_offset = offset;
      out.weight_len = wb.length;
      out.bias_offset = offset + wb.length;
      out.bias_len = bb.length;
      chunks.push(wb, bb);
      offset += wb.length + bb.length;
    }
    return out;
  });
  const manifest = {
    format: 'vcc-model/1',
    input_shape: inputShape,
    class_count: classCount,
    tap_layers: tapLayers,
    layers: entries,
  };
  return new Model(manifest, Buffer.concat(chunks));
}

function f32(values: number[]): Buffer {
  const buf = Buffer.allocUnsafe(4 * values.length);
  values.forEach((v, i) => buf.writeFloatLE(Math.fround(v), 4 * i));
  return buf;
}

/** 1x1-conv chain: interlayer maps are pure matrix products in GAP space. */
export function conv1x1Chain(m: number[][], classCount = 2): Model {
  const outCh = m.length;
  const inCh = m[0].length;
  return buildModel([inCh, 4, 4], classCount, [0], [
    {
      entry: { kind: 'conv2d', kernel: 1, stride: 1, padding: 0, in_ch: inCh, out_ch: outCh },
      weight: m.flat(),
      bias: new Array(outCh).fill(0),
    },
    { entry: { kind: 'global-average-pool' } },
    {
      entry: { kind: 'dense', in_dim: outCh, out_dim: classCount },
      weight: new Array(classCount * outCh).fill(1),
      bias: new Array(classCount).fill(0),
    },
  ]);
}
