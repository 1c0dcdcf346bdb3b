/**
 * Float64 reference implementation of the layered-CNN model format.
 *
 * Loads the JSON manifest (plus its little-endian float32 weight blob) and
 * evaluates conv / relu / maxpool / flatten / global-average-pool / dense
 * stacks, with the reverse-mode products needed by the oracle protocol:
 * the centroid-distance gradient (pooled before the distance, zero at an
 * exact centroid match) and the class-logit gradient.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';
import { Tensor, sameShape, sizeOf, zeros } from './tensor.js';

const MODEL_FORMAT = 'vcc-model/1';
const DISTANCE_EPS = 1e-12;

export interface Layer {
  kind: string;
  kernel?: number;
  stride?: number;
  padding?: number;
  inCh?: number;
  outCh?: number;
  inDim?: number;
  outDim?: number;
  weight?: Float64Array;
  bias?: Float64Array;
}

interface ManifestLayer {
  kind: string;
  kernel?: number;
  stride?: number;
  padding?: number;
  in_ch?: number;
  out_ch?: number;
  in_dim?: number;
  out_dim?: number;
  weight_offset?: number;
  weight_len?: number;
  bias_offset?: number;
  bias_len?: number;
}

function readF32(blob: Buffer, offset: number, byteLen: number): Float64Array {
  const out = new Float64Array(byteLen / 4);
  for (let i = 0; i < out.length; i += 1) {
    out[i] = blob.readFloatLE(offset + 4 * i);
  }
  return out;
}

export class Model {
  readonly inputShape: number[];
  readonly classCount: number;
  readonly tapLayers: number[];
  readonly layers: Layer[];
  readonly shapes: number[][];

  constructor(manifest: Record<string, unknown>, blob: Buffer) {
    if (manifest['format'] !== MODEL_FORMAT) {
      throw new Error(`unknown model format ${String(manifest['format'])}`);
    }
    this.inputShape = manifest['input_shape'] as number[];
    this.classCount = manifest['class_count'] as number;
    this.tapLayers = manifest['tap_layers'] as number[];
    this.layers = (manifest['layers'] as ManifestLayer[]).map((entry) => {
      const layer: Layer = {
        kind: entry.kind,
        kernel: entry.kernel,
        stride: entry.stride,
        padding: entry.padding,
        inCh: entry.in_ch,
        outCh: entry.out_ch,
        inDim: entry.in_dim,
        outDim: entry.out_dim,
      };
      if (entry.weight_offset !== undefined) {
        layer.weight = readF32(blob, entry.weight_offset, entry.weight_len!);
        layer.bias = readF32(blob, entry.bias_offset!, entry.bias_len!);
      }
      return layer;
    });
    this.shapes = chainShapes(this.inputShape, this.layers);
  }

  layerOutputShape(layer: number): number[] {
    if (layer < 0 || layer >= this.layers.length) {
      throw new Error(`layer index ${layer} out of range`);
    }
    return this.shapes[layer];
  }
}

export function loadModel(manifestPath: string): Model {
  const manifest = JSON.parse(fs.readFileSync(manifestPath, 'utf8'));
  let blob = Buffer.alloc(0);
  if (manifest.weights_file) {
    blob = fs.readFileSync(
      path.join(path.dirname(manifestPath), manifest.weights_file),
    );
  }
  return new Model(manifest, blob);
}

function chainShapes(input: number[], layers: Layer[]): number[][] {
  const shapes: number[][] = [];
  let shape = [...input];
  for (const layer of layers) {
    switch (layer.kind) {
      case 'conv2d': {
        const [, h, w] = shape;
        const k = layer.kernel!;
        const s = layer.stride!;
        const p = layer.padding!;
        shape = [
          layer.outCh!,
          Math.floor((h + 2 * p - k) / s) + 1,
          Math.floor((w + 2 * p - k) / s) + 1,
        ];
        break;
      }
      case 'relu':
        break;
      case 'maxpool2d': {
        const [c, h, w] = shape;
        const k = layer.kernel!;
        const s = layer.stride!;
        shape = [c, Math.floor((h - k) / s) + 1, Math.floor((w - k) / s) + 1];
        break;
      }
      case 'flatten':
        shape = [sizeOf(shape)];
        break;
      case 'global-average-pool':
        shape = [shape[0]];
        break;
      case 'dense':
        shape = [layer.outDim!];
        break;
      default:
        throw new Error(`unknown layer kind ${layer.kind}`);
    }
    shapes.push([...shape]);
  }
  return shapes;
}

// ---------------------------------------------------------------------------
// per-layer forward / backward
// ---------------------------------------------------------------------------

type Context =
  | { kind: 'conv2d'; inShape: number[] }
  | { kind: 'relu'; mask: Uint8Array }
  | { kind: 'maxpool2d'; inShape: number[]; argmax: Int32Array }
  | { kind: 'flatten'; inShape: number[] }
  | { kind: 'gap'; inShape: number[] }
  | { kind: 'dense' };

function convForward(layer: Layer, x: Tensor): Tensor {
  const [ci, h, w] = x.shape;
  const k = layer.kernel!;
  const s = layer.stride!;
  const p = layer.padding!;
  const co = layer.outCh!;
  const oh = Math.floor((h + 2 * p - k) / s) + 1;
  const ow = Math.floor((w + 2 * p - k) / s) + 1;
  const y = zeros([co, oh, ow]);
  const wgt = layer.weight!;
  const bias = layer.bias!;
  for (let o = 0; o < co; o += 1) {
    for (let oy = 0; oy < oh; oy += 1) {
      for (let ox = 0; ox < ow; ox += 1) {
        let acc = bias[o];
        for (let c = 0; c < ci; c += 1) {
          for (let ky = 0; ky < k; ky += 1) {
            const iy = oy * s + ky - p;
            if (iy < 0 || iy >= h) continue;
            for (let kx = 0; kx < k; kx += 1) {
              const ix = ox * s + kx - p;
              if (ix < 0 || ix >= w) continue;
              acc +=
                wgt[((o * ci + c) * k + ky) * k + kx] *
                x.data[(c * h + iy) * w + ix];
            }
          }
        }
        y.data[(o * oh + oy) * ow + ox] = acc;
      }
    }
  }
  return y;
}

function convBackward(layer: Layer, ctx: { inShape: number[] }, gy: Tensor): Tensor {
  const [ci, h, w] = ctx.inShape;
  const [co, oh, ow] = gy.shape;
  const k = layer.kernel!;
  const s = layer.stride!;
  const p = layer.padding!;
  const gx = zeros(ctx.inShape);
  const wgt = layer.weight!;
  for (let o = 0; o < co; o += 1) {
    for (let oy = 0; oy < oh; oy += 1) {
      for (let ox = 0; ox < ow; ox += 1) {
        const g = gy.data[(o * oh + oy) * ow + ox];
        if (g === 0) continue;
        for (let c = 0; c < ci; c += 1) {
          for (let ky = 0; ky < k; ky += 1) {
            const iy = oy * s + ky - p;
            if (iy < 0 || iy >= h) continue;
            for (let kx = 0; kx < k; kx += 1) {
              const ix = ox * s + kx - p;
              if (ix < 0 || ix >= w) continue;
              gx.data[(c * h + iy) * w + ix] +=
                g * wgt[((o * ci + c) * k + ky) * k + kx];
            }
          }
        }
      }
    }
  }
  return gx;
}

function maxpoolForward(layer: Layer, x: Tensor): { y: Tensor; argmax: Int32Array } {
  const [c, h, w] = x.shape;
  const k = layer.kernel!;
  const s = layer.stride!;
  const oh = Math.floor((h - k) / s) + 1;
  const ow = Math.floor((w - k) / s) + 1;
  const y = zeros([c, oh, ow]);
  const argmax = new Int32Array(c * oh * ow);
  for (let ch = 0; ch < c; ch += 1) {
    for (let oy = 0; oy < oh; oy += 1) {
      for (let ox = 0; ox < ow; ox += 1) {
        let best = -Infinity;
        let bestIdx = -1;
        for (let ky = 0; ky < k; ky += 1) {
          for (let kx = 0; kx < k; kx += 1) {
            const idx = (ch * h + oy * s + ky) * w + ox * s + kx;
            // strict > keeps the first maximum: deterministic tie-break
            if (x.data[idx] > best) {
              best = x.data[idx];
              bestIdx = idx;
            }
          }
        }
        const out = (ch * oh + oy) * ow + ox;
        y.data[out] = best;
        argmax[out] = bestIdx;
      }
    }
  }
  return { y, argmax };
}

function layerForward(layer: Layer, x: Tensor): { y: Tensor; ctx: Context } {
  switch (layer.kind) {
    case 'conv2d':
      return { y: convForward(layer, x), ctx: { kind: 'conv2d', inShape: x.shape } };
    case 'relu': {
      const mask = new Uint8Array(x.data.length);
      const y = zeros(x.shape);
      for (let i = 0; i < x.data.length; i += 1) {
        if (x.data[i] > 0) {
          mask[i] = 1;
          y.data[i] = x.data[i];
        }
      }
      return { y, ctx: { kind: 'relu', mask } };
    }
    case 'maxpool2d': {
      const { y, argmax } = maxpoolForward(layer, x);
      return { y, ctx: { kind: 'maxpool2d', inShape: x.shape, argmax } };
    }
    case 'flatten':
      return {
        y: { shape: [x.data.length], data: x.data },
        ctx: { kind: 'flatten', inShape: x.shape },
      };
    case 'global-average-pool': {
      const [c, h, w] = x.shape;
      const y = zeros([c]);
      for (let ch = 0; ch < c; ch += 1) {
        let acc = 0;
        for (let i = 0; i < h * w; i += 1) acc += x.data[ch * h * w + i];
        y.data[ch] = acc / (h * w);
      }
      return { y, ctx: { kind: 'gap', inShape: x.shape } };
    }
    case 'dense': {
      const inDim = layer.inDim!;
      const outDim = layer.outDim!;
      const y = zeros([outDim]);
      for (let o = 0; o < outDim; o += 1) {
        let acc = layer.bias![o];
        for (let i = 0; i < inDim; i += 1) acc += layer.weight![o * inDim + i] * x.data[i];
        y.data[o] = acc;
      }
      return { y, ctx: { kind: 'dense' } };
    }
    default:
      throw new Error(`unknown layer kind ${layer.kind}`);
  }
}

function layerBackward(layer: Layer, ctx: Context, gy: Tensor): Tensor {
  switch (ctx.kind) {
    case 'conv2d':
      return convBackward(layer, ctx, gy);
    case 'relu': {
      const gx = zeros(gy.shape);
      for (let i = 0; i < gy.data.length; i += 1) {
        if (ctx.mask[i]) gx.data[i] = gy.data[i];
      }
      return gx;
    }
    case 'maxpool2d': {
      const gx = zeros(ctx.inShape);
      for (let i = 0; i < ctx.argmax.length; i += 1) {
        gx.data[ctx.argmax[i]] += gy.data[i];
      }
      return gx;
    }
    case 'flatten':
      return { shape: [...ctx.inShape], data: gy.data };
    case 'gap': {
      const [c, h, w] = ctx.inShape;
      const gx = zeros(ctx.inShape);
      for (let ch = 0; ch < c; ch += 1) {
        const g = gy.data[ch] / (h * w);
        for (let i = 0; i < h * w; i += 1) gx.data[ch * h * w + i] = g;
      }
      return gx;
    }
    case 'dense': {
      const inDim = layer.inDim!;
      const outDim = layer.outDim!;
      const gx = zeros([inDim]);
      for (let i = 0; i < inDim; i += 1) {
        let acc = 0;
        for (let o = 0; o < outDim; o += 1) acc += layer.weight![o * inDim + i] * gy.data[o];
        gx.data[i] = acc;
      }
      return gx;
    }
    default:
      throw new Error('unreachable');
  }
}

// ---------------------------------------------------------------------------
// oracle operations
// ---------------------------------------------------------------------------

function runLayers(
  model: Model,
  x: Tensor,
  lo: number,
  hi: number,
): { y: Tensor; ctxs: Context[] } {
  const ctxs: Context[] = [];
  let cur = x;
  for (let i = lo; i <= hi; i += 1) {
    const { y, ctx } = layerForward(model.layers[i], cur);
    ctxs.push(ctx);
    cur = y;
  }
  return { y: cur, ctxs };
}

function checkShape(t: Tensor, expected: number[], what: string): void {
  if (!sameShape(t.shape, expected)) {
    throw new Error(
      `${what} shape [${t.shape.join(',')}] != expected [${expected.join(',')}]`,
    );
  }
}

export function forwardTo(model: Model, image: Tensor, layer: number): Tensor {
  model.layerOutputShape(layer);
  checkShape(image, model.inputShape, 'image');
  return runLayers(model, image, 0, layer).y;
}

export function forwardFull(model: Model, image: Tensor): Tensor {
  checkShape(image, model.inputShape, 'image');
  return runLayers(model, image, 0, model.layers.length - 1).y;
}

export function forwardBetween(
  model: Model,
  activation: Tensor,
  fromLayer: number,
  toLayer: number,
): Tensor {
  // toLayer -1 requests the final logits
  const to = toLayer === -1 ? model.layers.length - 1 : toLayer;
  model.layerOutputShape(to);
  checkShape(activation, model.layerOutputShape(fromLayer), 'activation');
  if (fromLayer >= to) {
    throw new Error(`from_layer ${fromLayer} must precede to_layer ${to}`);
  }
  return runLayers(model, activation, fromLayer + 1, to).y;
}

export function distanceGrad(
  model: Model,
  activation: Tensor,
  fromLayer: number,
  toLayer: number,
  centroid: Tensor,
): Tensor {
  checkShape(activation, model.layerOutputShape(fromLayer), 'activation');
  if (fromLayer >= toLayer) {
    throw new Error(`from_layer ${fromLayer} must precede to_layer ${toLayer}`);
  }
  const { y: z, ctxs } = runLayers(model, activation, fromLayer + 1, toLayer);
  if (z.shape.length !== 3) {
    throw new Error('distance gradient needs a spatial activation at the target layer');
  }
  const [c, h, w] = z.shape;
  checkShape(centroid, [c], 'centroid');
  const diff = new Float64Array(c);
  let d2 = 0;
  for (let ch = 0; ch < c; ch += 1) {
    let acc = 0;
    for (let i = 0; i < h * w; i += 1) acc += z.data[ch * h * w + i];
    diff[ch] = acc / (h * w) - centroid.data[ch];
    d2 += diff[ch] * diff[ch];
  }
  const d = Math.sqrt(d2);
  if (d < DISTANCE_EPS) {
    // the norm is not differentiable at an exact match: degenerate zero rule
    return zeros(activation.shape);
  }
  let g = zeros(z.shape);
  for (let ch = 0; ch < c; ch += 1) {
    const v = diff[ch] / d / (h * w);
    for (let i = 0; i < h * w; i += 1) g.data[ch * h * w + i] = v;
  }
  for (let i = toLayer; i > fromLayer; i -= 1) {
    g = layerBackward(model.layers[i], ctxs[i - fromLayer - 1], g);
  }
  return g;
}

export function logitGrad(
  model: Model,
  activation: Tensor,
  fromLayer: number,
  classIndex: number,
): Tensor {
  checkShape(activation, model.layerOutputShape(fromLayer), 'activation');
  if (classIndex < 0 || classIndex >= model.classCount) {
    throw new Error(`class index ${classIndex} out of range`);
  }
  const last = model.layers.length - 1;
  const { ctxs } = runLayers(model, activation, fromLayer + 1, last);
  let g = zeros([model.classCount]);
  g.data[classIndex] = 1.0;
  for (let i = last; i > fromLayer; i -= 1) {
    g = layerBackward(model.layers[i], ctxs[i - fromLayer - 1], g);
  }
  return g;
}
