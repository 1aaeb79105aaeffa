/* tslint:disable */
/* eslint-disable */

/**
 * Cumulative budget bounds of both recursions with growing noise `ν_k = base(1 + growth·k^exponent)`.
 */
export function budget_curves(horizon: number, w_bar: number, noise_growth: number, noise_exponent: number): string;

/**
 * Consensus disagreement `max_i ‖x_i − x̄‖` on a random graph in the box `[-5, 5]²`.
 */
export function consensus_curve(agents: number, edge_probability: number, horizon: number, seed: bigint, chi_exponent: number, gamma_exponent: number, noise: boolean): string;

/**
 * Distance to the optimal set of the private optimizer, on the two-agent toy or
 * a small demand-response instance.
 */
export function optimizer_curve(instance: string, horizon: number, seed: bigint, noise: boolean): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly budget_curves: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly consensus_curve: (a: number, b: number, c: number, d: bigint, e: number, f: number, g: number) => [number, number, number, number];
    readonly optimizer_curve: (a: number, b: number, c: number, d: bigint, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
