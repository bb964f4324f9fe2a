/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `[x_min, x_max, y_min, y_max]` of the heatmap.
     */
    bounds(): Float64Array;
    /**
     * Trains base, EV and TL models; slow for large `epochs`.
     */
    compare(nf: number, sigma_base_db: number, epochs: number, hidden: number, seed: number): string;
    /**
     * Clean RSSI in dBm for transmitter `tx` (1-based); 0 shows the
     * strongest transmitter everywhere.
     */
    heatmap(tx: number, cols: number, rows: number): Float64Array;
    layoutJson(): string;
    /**
     * Synthesizes the default room with the given data seed.
     */
    constructor(seed: number);
    noiseReport(nf: number, sigma_base_db: number, bins: number, seed: number): string;
    transmitterCount(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_bounds: (a: number) => [number, number];
    readonly demo_compare: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly demo_heatmap: (a: number, b: number, c: number, d: number) => [number, number];
    readonly demo_layoutJson: (a: number) => [number, number];
    readonly demo_new: (a: number) => [number, number, number];
    readonly demo_noiseReport: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly demo_transmitterCount: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
