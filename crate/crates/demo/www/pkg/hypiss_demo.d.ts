/* tslint:disable */
/* eslint-disable */

/**
 * Result of [`transport`]: sup-norm history and the final profiles.
 */
export class TransportRun {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    c0(): Float64Array;
    times(): Float64Array;
    u1(): Float64Array;
    u2(): Float64Array;
}

/**
 * JSON summary of both 2×2 conditions at one parameter point.
 */
export function compare(a: number, b: number, lambda1: number, lambda2: number, k1: number, k2: number): string;

/**
 * η sampled at `points` nodes of [0, 1]; NaN past blow-up.
 */
export function eta_curve(a: number, b: number, lambda1: number, lambda2: number, k1: number, points: number): Float64Array;

/**
 * Row-major `size × size` map over k1, k2 ∈ [0, k_max], k1 along rows.
 */
export function region_map(a: number, b: number, lambda1: number, lambda2: number, k_max: number, size: number): Uint8Array;

/**
 * u_t + diag(1, −1) u_x = 0 on [0, 1] with u1(0) = k1 u2(0) + amp·sin(ωt),
 * u2(1) = k2 u1(1), started from rest.
 */
export function transport(k1: number, k2: number, amp: number, omega: number, horizon: number, points: number): TransportRun;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_transportrun_free: (a: number, b: number) => void;
    readonly compare: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly eta_curve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly region_map: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly transport: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly transportrun_c0: (a: number) => [number, number];
    readonly transportrun_times: (a: number) => [number, number];
    readonly transportrun_u1: (a: number) => [number, number];
    readonly transportrun_u2: (a: number) => [number, number];
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
