/** Wire types for the dagblocks HTTP API. Field names match the JSON bodies. */

export type Dim = number | string; // symbolic batch dims arrive as strings like "N"

export interface ParamSpec {
  name: string;
  type: string;
  required: boolean;
  default?: unknown;
  minimum?: number;
  choices?: string[];
}

export type KindCategory = "main" | "misc" | "custom";

export interface CatalogEntry {
  kind_id: string;
  category: KindCategory;
  learnable: boolean;
  params: ParamSpec[];
  inputs: string[];
  outputs: string[];
}

export interface BlockEntry {
  block_id: string;
  kind_id: string;
  display_name: string;
  params: Record<string, unknown>;
  position: [number, number];
}

export interface ConnectionEntry {
  src: [string, number];
  dst: [string, number];
}

export interface SuperBlockBodyDoc {
  graph: GraphDoc;
  boundary_in: [string, number][];
  boundary_out: [string, number][];
}

export interface GraphDoc {
  next_id: number;
  blocks: BlockEntry[];
  connections: ConnectionEntry[];
  superblocks: Record<string, SuperBlockBodyDoc>;
}

export interface DiagnosticTarget {
  kind: "block" | "terminal";
  block_id: string;
  direction?: "in" | "out";
  index?: number;
}

export interface Diagnostic {
  severity: "error" | "warning";
  code: string;
  message: string;
  target: DiagnosticTarget | null;
  path: string[];
}

export interface OptimizerDoc {
  learning_rate: number;
  momentum: number;
  batch_size: number;
  epochs: number;
  seed: number;
}

export interface ProjectDoc {
  graph: GraphDoc;
  optimizer: OptimizerDoc;
  dataset_path: string | null;
  superblock_id?: string;
}

export type SessionStatus = "idle" | "running" | "stopped" | "finished" | "failed";

export interface SessionView {
  session_id: string;
  status: SessionStatus;
  epoch: number;
  total_epochs: number;
  failure: unknown;
}

export interface OrderMetricsDoc {
  order: number;
  loss: number | null;
  accuracy: number | null;
}

export interface EpochRecord {
  epoch: number;
  train_loss: number;
  train_accuracy: number;
  test_loss: number;
  test_accuracy: number;
  train_per_order: OrderMetricsDoc[];
  test_per_order: OrderMetricsDoc[];
}

export interface MetricsResponse {
  session_id: string;
  status: SessionStatus;
  records: EpochRecord[];
}

export interface Inspection {
  block_id: string;
  status: string;
  stalled: boolean;
  input_shapes: (Dim[] | null)[];
  output_shapes: (Dim[] | null)[];
  heatmaps: (number[][] | null)[] | null;
  error: { code: string; message: string } | null;
  loss: number | null;
}

export interface CustomBlockDoc {
  name: string;
  pipeline: { kind_id: string; params: Record<string, unknown> }[];
  backward_transform: { variant: string; factor?: number };
  example_input_shape?: number[] | null;
}
