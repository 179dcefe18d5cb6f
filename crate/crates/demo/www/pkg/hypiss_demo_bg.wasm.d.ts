/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_transportrun_free: (a: number, b: number) => void;
export const compare: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const eta_curve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const region_map: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const transport: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const transportrun_c0: (a: number) => [number, number];
export const transportrun_times: (a: number) => [number, number];
export const transportrun_u1: (a: number) => [number, number];
export const transportrun_u2: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
