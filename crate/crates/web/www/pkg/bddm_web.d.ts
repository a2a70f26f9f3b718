/* tslint:disable */
/* eslint-disable */

/**
 * Largest admissible noise scale for a step, given the scales one step
 * noisier.
 */
export function beta_bound(alpha_next: number, beta_next: number): number;

/**
 * Reference draws from the ring itself, interleaved like `sample_ring`.
 */
export function ring_data(count: number, seed: bigint): Float64Array;

/**
 * Draws `count` points from the eight-mode ring with the exact noise
 * predictor, jumping along `steps` evenly spaced training steps.
 * Returns interleaved `x, y` pairs.
 */
export function sample_ring(steps: number, count: number, seed: bigint, deterministic: boolean): Float64Array;

/**
 * Cumulative signal scales of the training schedule, one per step.
 */
export function training_alphas(steps: number, eps: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly beta_bound: (a: number, b: number) => [number, number, number];
    readonly ring_data: (a: number, b: bigint) => [number, number, number, number];
    readonly sample_ring: (a: number, b: number, c: bigint, d: number) => [number, number, number, number];
    readonly training_alphas: (a: number, b: number) => [number, number, number, number];
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
