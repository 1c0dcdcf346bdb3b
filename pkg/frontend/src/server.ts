/**
 * Stdio NDJSON model oracle.
 *
 * Usage: node server.js <model-manifest.json>
 *
 * One JSON request per stdin line, exactly one JSON response per request on
 * stdout, nothing unprompted. Tensors travel as base64 little-endian
 * float32 with explicit shapes. A malformed line is answered with an error
 * response carrying the request's id when one could be parsed, -1 otherwise.
 */

import { createInterface } from 'node:readline';
import {
  Model,
  distanceGrad,
  forwardBetween,
  forwardFull,
  forwardTo,
  loadModel,
  logitGrad,
} from './engine.js';
import { Payload, payloadToTensor, tensorToPayload } from './tensor.js';

export const PROTOCOL_VERSION = 1;

interface Request {
  id?: unknown;
  op?: unknown;
  layer?: number;
  from_layer?: number;
  to_layer?: number;
  class_index?: number;
  tensor?: Payload;
  centroid?: Payload;
}

function requireInt(value: unknown, name: string): number {
  if (typeof value !== 'number' || !Number.isInteger(value)) {
    throw new Error(`${name} must be an integer`);
  }
  return value;
}

function requireTensor(payload: Payload | undefined, name: string) {
  if (payload === undefined) {
    throw new Error(`missing ${name} payload`);
  }
  return payloadToTensor(payload);
}

export function handle(model: Model, req: Request): Record<string, unknown> {
  switch (req.op) {
    case 'hello':
      return {
        protocol: PROTOCOL_VERSION,
        input_shape: model.inputShape,
        tap_layers: model.tapLayers,
        class_count: model.classCount,
      };
    case 'shapes': {
      const shapes: Record<string, number[]> = {};
      for (let i = 0; i < model.layers.length; i += 1) {
        shapes[String(i)] = model.layerOutputShape(i);
      }
      return { shapes };
    }
    case 'forward_to':
      return {
        tensor: tensorToPayload(
          forwardTo(model, requireTensor(req.tensor, 'tensor'),
            requireInt(req.layer, 'layer')),
        ),
      };
    case 'forward_between':
      return {
        tensor: tensorToPayload(
          forwardBetween(model, requireTensor(req.tensor, 'tensor'),
            requireInt(req.from_layer, 'from_layer'),
            requireInt(req.to_layer, 'to_layer')),
        ),
      };
    case 'logits':
      return {
        tensor: tensorToPayload(
          forwardFull(model, requireTensor(req.tensor, 'tensor')),
        ),
      };
    case 'distance_grad':
      return {
        tensor: tensorToPayload(
          distanceGrad(model, requireTensor(req.tensor, 'tensor'),
            requireInt(req.from_layer, 'from_layer'),
            requireInt(req.to_layer, 'to_layer'),
            requireTensor(req.centroid, 'centroid')),
        ),
      };
    case 'logit_grad':
      return {
        tensor: tensorToPayload(
          logitGrad(model, requireTensor(req.tensor, 'tensor'),
            requireInt(req.from_layer, 'from_layer'),
            requireInt(req.class_index, 'class_index')),
        ),
      };
    default:
      throw new Error(`unknown op ${String(req.op)}`);
  }
}

export function respond(model: Model, line: string): string {
  let id: unknown = -1;
  try {
    const req = JSON.parse(line) as Request;
    id = typeof req.id === 'number' ? req.id : -1;
    const result = handle(model, req);
    return JSON.stringify({ id, status: 'ok', ...result });
  } catch (err) {
    const message = err instanceof Error ? err.message : String(err);
    return JSON.stringify({ id, status: 'error', error: message });
  }
}

function serve(manifestPath: string): void {
  const model = loadModel(manifestPath);
  const rl = createInterface({ input: process.stdin, terminal: false });
  rl.on('line', (line) => {
    if (line.trim() === '') return;
    process.stdout.write(respond(model, line) + '\n');
  });
}

const entry = process.argv[1] ?? '';
if (entry.endsWith('server.js') || entry.endsWith('server.ts')) {
  const manifestPath = process.argv[2];
  if (!manifestPath) {
    process.stderr.write('usage: server.js <model-manifest.json>\n');
    process.exit(2);
  }
  serve(manifestPath);
}
