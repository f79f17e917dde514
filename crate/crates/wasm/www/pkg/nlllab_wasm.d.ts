/* tslint:disable */
/* eslint-disable */

export function bifurcation(sigma2: number, h_min: number, h_max: number, steps: number, mesh: number): Float64Array;

export function fixedPointCurve(sigma2: number, h: number, mesh: number): Float64Array;

export function flows(sigma2: number, h: number, k: number, mu0: number, starts: number, seed: bigint): Float64Array;

export function thresholds(sigma2: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly bifurcation: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly fixedPointCurve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly flows: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly thresholds: (a: number) => [number, number];
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
