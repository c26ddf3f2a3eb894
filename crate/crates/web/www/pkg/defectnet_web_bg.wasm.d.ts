/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_augmentview_free: (a: number, b: number) => void;
export const __wbg_camview_free: (a: number, b: number) => void;
export const augment_preview: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const augmentview_augmented: (a: number) => [number, number];
export const augmentview_original: (a: number) => [number, number];
export const cam_scene: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const camview_hot_quadrant: (a: number) => number;
export const camview_patch_quadrant: (a: number) => number;
export const camview_region: (a: number) => [number, number];
export const camview_rgba: (a: number) => [number, number];
export const label_names: () => [number, number];
export const metrics_report: (a: number, b: number) => [number, number, number, number];
export const texture_names: () => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
