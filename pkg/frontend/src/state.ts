/** Editor state: the graph document mirror plus presentation state.
 *
 * The store never invents engine facts: diagnostics, metrics, and inspection
 * payloads are stored verbatim from server responses. Local edits only touch
 * the document mirror and flip the dirty flag until the next successful push.
 */

import type {
  BlockEntry,
  CatalogEntry,
  Diagnostic,
  EpochRecord,
  GraphDoc,
  OptimizerDoc,
  SessionStatus,
} from "./types";

export const SUPERBLOCK_KIND = "__superblock__";

export function emptyGraph(): GraphDoc {
  return { next_id: 1, blocks: [], connections: [], superblocks: {} };
}

export interface TerminalSignature {
  inputs: string[];
  outputs: string[];
}

export interface EditorState {
  catalog: CatalogEntry[];
  doc: GraphDoc;
  datasetPath: string | null;
  optimizer: OptimizerDoc | null;
  dirty: boolean;
  diagnostics: Diagnostic[];
  selection: string[];
  sessionId: string | null;
  sessionStatus: SessionStatus | null;
  pollCursor: number;
  records: EpochRecord[];
  toast: string | null;
}

type Listener = (state: EditorState) => void;

export class EditorStore {
  readonly state: EditorState = {
    catalog: [],
    doc: emptyGraph(),
    datasetPath: null,
    optimizer: null,
    dirty: false,
    diagnostics: [],
    selection: [],
    sessionId: null,
    sessionStatus: null,
    pollCursor: 0,
    records: [],
    toast: null,
  };

  private listeners: Listener[] = [];

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(): void {
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  setCatalog(catalog: CatalogEntry[]): void {
    this.state.catalog = catalog;
    this.emit();
  }

  kind(kindId: string): CatalogEntry | undefined {
    return this.state.catalog.find((k) => k.kind_id === kindId);
  }

  block(blockId: string): BlockEntry | undefined {
    return this.state.doc.blocks.find((b) => b.block_id === blockId);
  }

  /** Replace the mirror with a server document (clean) or a local edit (dirty). */
  replaceDoc(doc: GraphDoc, opts: { dirty: boolean; datasetPath?: string | null; optimizer?: OptimizerDoc | null }): void {
    this.state.doc = doc;
    this.state.dirty = opts.dirty;
    if (opts.datasetPath !== undefined) {
      this.state.datasetPath = opts.datasetPath;
    }
    if (opts.optimizer !== undefined) {
      this.state.optimizer = opts.optimizer;
    }
    this.state.selection = this.state.selection.filter((bid) =>
      doc.blocks.some((b) => b.block_id === bid),
    );
    this.emit();
  }

  /** Terminal names for one block entry; SuperBlocks use their boundary lists. */
  terminals(entry: BlockEntry): TerminalSignature {
    if (entry.kind_id === SUPERBLOCK_KIND) {
      const body = this.state.doc.superblocks[entry.block_id];
      return {
        inputs: (body?.boundary_in ?? []).map((_, i) => `in${i}`),
        outputs: (body?.boundary_out ?? []).map((_, i) => `out${i}`),
      };
    }
    const kind = this.kind(entry.kind_id);
    if (!kind) {
      return { inputs: [], outputs: [] };
    }
    const fanout = entry.params["fanout"];
    if (entry.kind_id === "Copy" && typeof fanout === "number") {
      return { inputs: [...kind.inputs], outputs: Array.from({ length: fanout }, (_, i) => `out${i}`) };
    }
    return { inputs: [...kind.inputs], outputs: [...kind.outputs] };
  }

  localAddBlock(kindId: string, position: [number, number] = [40, 40]): BlockEntry {
    const kind = this.kind(kindId);
    if (!kind) {
      throw new Error(`unknown kind ${kindId}`);
    }
    const params: Record<string, unknown> = {};
    for (const spec of kind.params) {
      if (spec.default !== undefined) {
        params[spec.name] = spec.default;
      }
    }
    const blockId = `b${this.state.doc.next_id}`;
    this.state.doc.next_id += 1;
    const entry: BlockEntry = {
      block_id: blockId,
      kind_id: kindId,
      display_name: kindId,
      params,
      position,
    };
    this.state.doc.blocks.push(entry);
    this.state.dirty = true;
    this.emit();
    return entry;
  }

  localAddConnection(src: [string, number], dst: [string, number]): void {
    this.state.doc.connections.push({ src, dst });
    this.state.dirty = true;
    this.emit();
  }

  localRemoveConnection(src: [string, number], dst: [string, number]): void {
    this.state.doc.connections = this.state.doc.connections.filter(
      (c) =>
        !(c.src[0] === src[0] && c.src[1] === src[1] && c.dst[0] === dst[0] && c.dst[1] === dst[1]),
    );
    this.state.dirty = true;
    this.emit();
  }

  localSetParam(blockId: string, name: string, value: unknown): void {
    const entry = this.block(blockId);
    if (!entry) {
      throw new Error(`unknown block ${blockId}`);
    }
    entry.params[name] = value;
    this.state.dirty = true;
    this.emit();
  }

  markClean(): void {
    this.state.dirty = false;
    this.emit();
  }

  setDiagnostics(diagnostics: Diagnostic[]): void {
    this.state.diagnostics = diagnostics;
    this.emit();
  }

  setSelection(blockIds: string[]): void {
    this.state.selection = [...blockIds];
    this.emit();
  }

  toggleSelect(blockId: string, additive: boolean): void {
    if (!additive) {
      this.state.selection = [blockId];
    } else if (this.state.selection.includes(blockId)) {
      this.state.selection = this.state.selection.filter((b) => b !== blockId);
    } else {
      this.state.selection.push(blockId);
    }
    this.emit();
  }

  setToast(message: string | null): void {
    this.state.toast = message;
    this.emit();
  }

  setSession(sessionId: string | null, status: SessionStatus | null): void {
    this.state.sessionId = sessionId;
    this.state.sessionStatus = status;
    if (sessionId !== null) {
      this.state.pollCursor = 0;
      this.state.records = [];
    }
    this.emit();
  }

  setSessionStatus(status: SessionStatus): void {
    this.state.sessionStatus = status;
    this.emit();
  }

  /** Append freshly polled records; the cursor only ever moves forward. */
  appendRecords(records: EpochRecord[]): void {
    for (const record of records) {
      if (record.epoch <= this.state.pollCursor) {
        continue; // the plot never reorders or drops epochs
      }
      this.state.records.push(record);
      this.state.pollCursor = record.epoch;
    }
    this.emit();
  }
}
