/**
 * Tensor representation and the wire payload codec.
 *
 * Payloads are base64-encoded little-endian IEEE-754 binary32 with an
 * explicit shape; internal arithmetic is float64. Anything over 256 MiB
 * of raw bytes is refused on both encode and decode.
 */

export const MAX_PAYLOAD = 256 * 1024 * 1024;

export interface Tensor {
  shape: number[];
  data: Float64Array;
}

export interface Payload {
  shape: number[];
  data: string;
}

export function sizeOf(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function zeros(shape: number[]): Tensor {
  return { shape: [...shape], data: new Float64Array(sizeOf(shape)) };
}

export function sameShape(a: number[], b: number[]): boolean {
  return a.length === b.length && a.every((v, i) => v === b[i]);
}

export function tensorToPayload(t: Tensor): Payload {
  const bytes = 4 * t.data.length;
  if (bytes > MAX_PAYLOAD) {
    throw new Error(`payload of ${bytes} bytes exceeds the 256 MiB limit`);
  }
  const buf = Buffer.allocUnsafe(bytes);
  for (let i = 0; i < t.data.length; i += 1) {
    buf.writeFloatLE(Math.fround(t.data[i]), 4 * i);
  }
  return { shape: [...t.shape], data: buf.toString('base64') };
}

export function payloadToTensor(p: Payload): Tensor {
  if (!p || !Array.isArray(p.shape) || typeof p.data !== 'string') {
    throw new Error('malformed tensor payload');
  }
  const buf = Buffer.from(p.data, 'base64');
  if (buf.length > MAX_PAYLOAD) {
    throw new Error(`payload of ${buf.length} bytes exceeds the 256 MiB limit`);
  }
  const expected = 4 * sizeOf(p.shape);
  if (buf.length !== expected) {
    throw new Error(
      `payload length ${buf.length} does not match shape [${p.shape.join(',')}]`,
    );
  }
  const out = new Float64Array(buf.length / 4);
  for (let i = 0; i < out.length; i += 1) {
    out[i] = buf.readFloatLE(4 * i);
  }
  return { shape: [...p.shape], data: out };
}
