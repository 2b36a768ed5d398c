/**
 * Native-feel matrix facade: tagged handle objects, `$`-style method
 * dispatch by name, arithmetic and indexing helpers, and finalizer-driven
 * cleanup of the native objects.
 *
 * Indexing is 1-based with inclusive ranges, mirroring the dynamic-language
 * convention this layer reproduces; the native core underneath is 0-based
 * half-open, and the shift happens here.
 */

import { BoundaryClient } from "./boundary.js";

export type Tag = "d" | "i";

interface NativeRef {
  client: BoundaryClient;
  tag: Tag;
  handle: number;
  released: boolean;
}

const registry = new FinalizationRegistry<NativeRef>((ref) => {
  releaseNative(ref);
});

function releaseNative(ref: NativeRef): void {
  if (ref.released) return;
  ref.released = true;
  // fire-and-forget: finalization must not block, and double release is
  // prevented by the flag above
  void ref.client.call(`destroy_${ref.tag}`, ref.handle).catch(() => undefined);
}

/** A distributed matrix handle plus its datatype tag. */
export class BoundDistMatrix {
  private ref: NativeRef;

  private constructor(readonly client: BoundaryClient, readonly datatype: Tag,
                      handle: number) {
    this.ref = { client, tag: datatype, handle, released: false };
    registry.register(this, this.ref, this);
  }

  /**
   * Create a fresh native matrix.  All arguments are optional: the default
   * datatype is double precision ("d") and the default shape is empty.
   * The native entry point is selected by assembling `create_` + tag.
   */
  static async construct(client: BoundaryClient, tag: string = "d",
                         height = 0, width = 0): Promise<BoundDistMatrix> {
    if (tag !== "d" && tag !== "i") {
      throw new Error(`unknown datatype tag "${tag}"`);
    }
    const handle = await client.call<number>(`create_${tag}`, height, width);
    return new BoundDistMatrix(client, tag, handle);
  }

  /** Wrap a handle returned by a native routine (views, SVD factors, ...). */
  static adopt(client: BoundaryClient, tag: Tag, handle: number): BoundDistMatrix {
    return new BoundDistMatrix(client, tag, handle);
  }

  get handle(): number {
    if (this.ref.released) {
      throw new Error("matrix handle already released");
    }
    return this.ref.handle;
  }

  get released(): boolean {
    return this.ref.released;
  }

  /** Release the native object now instead of waiting for the finalizer. */
  async dispose(): Promise<void> {
    if (this.ref.released) return;
    this.ref.released = true;
    registry.unregister(this);
    await this.client.call(`destroy_${this.datatype}`, this.ref.handle);
  }

  private native(name: string, ...args: unknown[]): Promise<unknown> {
    return this.client.call(`${name}_${this.datatype}`, this.handle, ...args);
  }

  /**
   * Method dispatch by name: `A.$("Width")()` forwards the matrix as the
   * implicit first argument.  Unknown names are an error.  Lookup is by
   * exact name, not prefix.
   */
  $(name: string): (...args: unknown[]) => Promise<unknown> {
    const routine = DistMatrixFunctions[name];
    if (routine === undefined) {
      throw new Error(`function ${name} not found`);
    }
    return (...args: unknown[]) => routine(this, ...args);
  }

  height(): Promise<number> {
    return this.native("height") as Promise<number>;
  }

  width(): Promise<number> {
    return this.native("width") as Promise<number>;
  }

  get(i: number, j: number): Promise<number> {
    return this.native("get", i, j) as Promise<number>;
  }

  set(i: number, j: number, v: number): Promise<unknown> {
    return this.native("set", i, j, v);
  }

  fillUniform(seed: number): Promise<unknown> {
    return this.native("fill", seed);
  }
}

/** Instance-method table consulted by `$`; names are matched exactly. */
export const DistMatrixFunctions: Record<
  string, (m: BoundDistMatrix, ...args: unknown[]) => Promise<unknown>
> = {
  Get: (m, i, j) => m.get(i as number, j as number),
  Set: (m, i, j, v) => m.set(i as number, j as number, v as number),
  Height: (m) => m.height(),
  Width: (m) => m.width(),
  LDim: (m) => m.client.call(`ldim_${m.datatype}`, m.handle),
  Empty: (m) => m.client.call(`empty_${m.datatype}`, m.handle),
  FillUniform: (m, seed) => m.fillUniform(seed as number),
  MaxNorm: (m) => m.client.call(`maxnorm_${m.datatype}`, m.handle),
  FrobeniusNorm: (m) => m.client.call(`frobenius_${m.datatype}`, m.handle),
  Print: (m) => m.client.call(`print_${m.datatype}`, m.handle),
};

async function assertSameShape(e1: BoundDistMatrix, e2: BoundDistMatrix):
    Promise<void> {
  const [h1, h2, w1, w2] = await Promise.all([
    e1.height(), e2.height(), e1.width(), e2.width(),
  ]);
  if (h1 !== h2 || w1 !== w2) {
    throw new Error("Matrices must have the same size");
  }
}

/** Elementwise sum: checks, then fresh matrix = copy(e1); axpy(1.0, e2). */
export async function add(e1: BoundDistMatrix,
                          e2: BoundDistMatrix): Promise<BoundDistMatrix> {
  if (e1.datatype !== e2.datatype) {
    throw new Error("Matrices must have the same datatype");
  }
  await assertSameShape(e1, e2);
  const out = await BoundDistMatrix.construct(e1.client, e1.datatype);
  await e1.client.call(`copy_${e1.datatype}`, e1.handle, out.handle);
  await e1.client.call(`axpy_${e1.datatype}`, 1.0, e2.handle, out.handle);
  return out;
}

/** Matrix product through the distributed gemm entry point. */
export async function matmul(e1: BoundDistMatrix,
                             e2: BoundDistMatrix): Promise<BoundDistMatrix> {
  if (e1.datatype !== e2.datatype) {
    throw new Error("Matrices must have the same datatype");
  }
  if (e1.datatype !== "d") {
    throw new Error("matrix multiplication requires the d datatype");
  }
  const [h, inner1, inner2, w] = await Promise.all([
    e1.height(), e1.width(), e2.height(), e2.width(),
  ]);
  if (inner1 !== inner2) {
    throw new Error("Matrices must have the same size");
  }
  const out = await BoundDistMatrix.construct(e1.client, "d", h, w);
  await e1.client.call("gemm_d", 1.0, e1.handle, e2.handle, 0.0, out.handle);
  return out;
}

function contiguousRange(idx: number | number[], what: string):
    [number, number] {
  if (typeof idx === "number") {
    return [idx, idx];
  }
  if (idx.length === 0) {
    throw new Error(`empty ${what} index`);
  }
  for (let k = 1; k < idx.length; k++) {
    if (idx[k] !== idx[k - 1] + 1) {
      throw new Error(`non-contiguous ${what} index vector is not supported`);
    }
  }
  return [idx[0], idx[idx.length - 1]];
}

/** Convenience builder for inclusive 1-based index vectors, like R's `a:b`. */
export function seq(first: number, last: number): number[] {
  const out: number[] = [];
  for (let v = first; v <= last; v++) out.push(v);
  return out;
}

/**
 * 1-based inclusive indexing.  Two scalars return the element value; any
 * range returns an aliasing view (writes through it reach the parent).
 */
export async function index(A: BoundDistMatrix, i: number | number[],
                            j: number | number[]):
    Promise<number | BoundDistMatrix> {
  if (typeof i === "number" && typeof j === "number") {
    return A.get(i - 1, j - 1);
  }
  const [r0, r1] = contiguousRange(i, "row");
  const [c0, c1] = contiguousRange(j, "column");
  const handle = await A.client.call<number>(
    `view_${A.datatype}`, A.handle, r0 - 1, r1, c0 - 1, c1,
  );
  return BoundDistMatrix.adopt(A.client, A.datatype, handle);
}

/** Render through the native display format (6 significant digits). */
export function print(A: BoundDistMatrix): Promise<string> {
  return A.client.call<string>(`print_${A.datatype}`, A.handle);
}

export interface ScaleResult {
  matrix: BoundDistMatrix;
  center: number[];
  scale: number[];
}

export async function scale(A: BoundDistMatrix, center = true,
                            scaleFlag = false): Promise<ScaleResult> {
  const res = await A.client.call<{ matrix: number; center: number[];
                                    scale: number[] }>(
    "scale_d", A.handle, center, scaleFlag,
  );
  return {
    matrix: BoundDistMatrix.adopt(A.client, "d", res.matrix),
    center: res.center,
    scale: res.scale,
  };
}

export interface SvdResult {
  sigma: number[];
  v: BoundDistMatrix;
}

/** Right-vectors-only SVD (all the PCA path needs). */
export async function svd(A: BoundDistMatrix): Promise<SvdResult> {
  const res = await A.client.call<{ sigma: number[]; v: number }>(
    "svd_d", A.handle,
  );
  return { sigma: res.sigma, v: BoundDistMatrix.adopt(A.client, "d", res.v) };
}

export interface EigenResult {
  values: number[];
  vectors: BoundDistMatrix;
}

/** Symmetric eigendecomposition; the lower triangle is authoritative. */
export async function eigen(A: BoundDistMatrix): Promise<EigenResult> {
  const res = await A.client.call<{ values: number[]; x: number }>(
    "eig_d", A.handle,
  );
  return {
    values: res.values,
    vectors: BoundDistMatrix.adopt(A.client, "d", res.x),
  };
}

export interface PrcompResult {
  sdev: number[];
  rotation: BoundDistMatrix;
  center: number[];
}

export interface PrcompOptions {
  retx?: boolean;  // accepted and ignored, like the native signature
  center?: boolean;
  scale?: boolean;
  tol?: number | null;
}

/** Principal component analysis; returns exactly {sdev, rotation, center}. */
export async function prcomp(A: BoundDistMatrix,
                             opts: PrcompOptions = {}): Promise<PrcompResult> {
  const res = await A.client.call<{ sdev: number[]; rotation: number;
                                    center: number[] }>(
    "prcomp_d", A.handle, opts.center ?? true, opts.scale ?? false,
  );
  return {
    sdev: res.sdev,
    rotation: BoundDistMatrix.adopt(A.client, "d", res.rotation),
    center: res.center,
  };
}
