/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const angular_density: (a: number, b: number) => [number, number, number, number];
export const gray_to_rgba: (a: number, b: number) => [number, number];
export const guidance_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const image_size: () => number;
export const log_spectrum: (a: number, b: number) => [number, number, number, number];
export const radial_density: (a: number, b: number) => [number, number, number, number];
export const render_glyph_pixels: (a: number, b: number, c: number, d: bigint, e: number, f: bigint) => [number, number, number, number];
export const shape_names: () => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_start: () => void;
