/* tslint:disable */
/* eslint-disable */

/**
 * Equal Earth graticule polylines in projection coordinates.
 */
export function equal_earth_graticule(step_deg: number): string;

/**
 * Simulates a spatial Gaussian process, estimates its embedding
 * semivariogram, fits the spherical model, and returns everything the
 * page needs to draw the map and the curve.
 */
export function simulate_and_fit(n: number, range_km: number, sill: number, nugget: number, seed: bigint, n_bins: number, h_max_km: number): string;

/**
 * Evaluates the negative-pair weight over a (distance, cosine distance)
 * grid for heatmap rendering, along with the expected-dissimilarity
 * curve and the branch thresholds.
 */
export function weight_surface(nugget: number, partial_sill: number, range_km: number, s1: number, s2: number, theta1_km: number, theta2_km: number, delta_scale: number, d_max_km: number, cols: number, rows: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly equal_earth_graticule: (a: number) => [number, number, number, number];
    readonly simulate_and_fit: (a: number, b: number, c: number, d: number, e: bigint, f: number, g: number) => [number, number, number, number];
    readonly weight_surface: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number, k: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
