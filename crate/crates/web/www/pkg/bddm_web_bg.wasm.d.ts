/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const beta_bound: (a: number, b: number) => [number, number, number];
export const ring_data: (a: number, b: bigint) => [number, number, number, number];
export const sample_ring: (a: number, b: number, c: bigint, d: number) => [number, number, number, number];
export const training_alphas: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
