/* tslint:disable */
/* eslint-disable */

export function angular_density(pixels: Float32Array): Float64Array;

/**
 * Grayscale values to RGBA bytes for a canvas `ImageData`.
 */
export function gray_to_rgba(values: Float32Array): Uint8Array;

export function guidance_curve(mode: string, s0: number, alpha: number, t_sample: number): Float64Array;

export function image_size(): number;

export function log_spectrum(pixels: Float32Array): Float32Array;

export function radial_density(pixels: Float32Array): Float64Array;

export function render_glyph_pixels(shape: number, stroke_width: number, fill: number, jitter_seed: bigint, noise_sigma: number, noise_seed: bigint): Float32Array;

export function shape_names(): string[];

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly angular_density: (a: number, b: number) => [number, number, number, number];
    readonly gray_to_rgba: (a: number, b: number) => [number, number];
    readonly guidance_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly image_size: () => number;
    readonly log_spectrum: (a: number, b: number) => [number, number, number, number];
    readonly radial_density: (a: number, b: number) => [number, number, number, number];
    readonly render_glyph_pixels: (a: number, b: number, c: number, d: bigint, e: number, f: bigint) => [number, number, number, number];
    readonly shape_names: () => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_drop_slice: (a: number, b: number) => void;
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
