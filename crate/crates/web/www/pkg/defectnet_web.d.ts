/* tslint:disable */
/* eslint-disable */

export class AugmentView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    augmented(): Uint8Array;
    original(): Uint8Array;
}

export class CamView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    hot_quadrant(): number;
    patch_quadrant(): number;
    /**
     * `[x, y, width, height]`, or empty when the map is flat.
     */
    region(): Uint32Array;
    /**
     * Overlay pixels, `SIDE × SIDE` RGBA.
     */
    rgba(): Uint8Array;
}

/**
 * One texture sample and its `draw`-th augmentation.
 */
export function augment_preview(_class: number, seed: number, draw: number, rotation_max_deg: number, shift_max_frac: number, hflip: boolean, vflip: boolean): AugmentView;

export function cam_scene(x: number, y: number, patch: number, seed: number, alpha: number, threshold: number): CamView;

export function label_names(): string[];

export function metrics_report(counts: Uint32Array): string;

export function texture_names(): string[];

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_augmentview_free: (a: number, b: number) => void;
    readonly __wbg_camview_free: (a: number, b: number) => void;
    readonly augment_preview: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly augmentview_augmented: (a: number) => [number, number];
    readonly augmentview_original: (a: number) => [number, number];
    readonly cam_scene: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly camview_hot_quadrant: (a: number) => number;
    readonly camview_patch_quadrant: (a: number) => number;
    readonly camview_region: (a: number) => [number, number];
    readonly camview_rgba: (a: number) => [number, number];
    readonly label_names: () => [number, number];
    readonly metrics_report: (a: number, b: number) => [number, number, number, number];
    readonly texture_names: () => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
