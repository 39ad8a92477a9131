/* tslint:disable */
/* eslint-disable */

/**
 * `[q₀, mse₀, q₁, mse₁, …]` for the tail MSE on `q ∈ [q_min, 1)` at rate
 * `lambda`, tail probability `alpha` and sample size `n`.
 */
export function mse_curve(lambda: number, alpha: number, n: number, q_min: number, points: number): Float64Array;

/**
 * `[q*, mse(q*), mse(1)]`.
 */
export function optimal_q(lambda: number, alpha: number, n: number): Float64Array;

/**
 * Draws an exponential sample and fits it.
 *
 * Returns `[λ̂_MLE, λ̃, qλ̃, α̂_MLE, α̂_q, se_q, x]` for the tail at
 * probability `alpha` under the true rate.
 */
export function simulate_and_fit(seed: bigint, n: number, lambda: number, q: number, alpha: number): Float64Array;

/**
 * `[q, σ²(q)/λ², V₁₁/σ², V₂₂/σ⁴, …]`: the exponential variance factor and
 * the univariate normal ones, all equal to 1, 1, 2 at `q = 1`.
 */
export function variance_curves(q_min: number, q_max: number, points: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly mse_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly optimal_q: (a: number, b: number, c: number) => [number, number, number, number];
    readonly simulate_and_fit: (a: bigint, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly variance_curves: (a: number, b: number, c: number) => [number, number, number, number];
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
