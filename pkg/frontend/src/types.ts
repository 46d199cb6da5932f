/** Payload shapes of the /v1 HTTP API. The frontend consumes nothing else. */

export interface ModelInfo {
  model_id: string;
  display_name: string;
  provider: string;
}

export interface ModelsResponse {
  models: ModelInfo[];
}

export interface RecordCard {
  murag_id: string;
  title: string;
  record_title: string;
  fundus_id: number;
  catalogno: string;
  collection_name: string;
  collection_title: string;
  image_url: string;
  details: Record<string, string>;
}

export interface ContactInfo {
  name: string;
  email: string;
}

export interface CollectionCard {
  murag_id: string;
  collection_name: string;
  title: string;
  title_de: string;
  description: string;
  description_de: string;
  contacts: ContactInfo[];
  record_count: number;
}

export interface TextSegment {
  kind: "text";
  text: string;
}

export interface RecordSegment {
  kind: "record";
  record: RecordCard;
}

export interface CollectionSegment {
  kind: "collection";
  collection: CollectionCard;
}

/** Unknown kinds may appear after server-side schema evolution. */
export interface UnknownSegment {
  kind: string;
  [key: string]: unknown;
}

export type Segment = TextSegment | RecordSegment | CollectionSegment | UnknownSegment;

export interface AgentReplyPayload {
  trace_id: string;
  stop_reason: string;
  markdown: string;
  segments: Segment[];
}

export interface SessionCreated {
  session_id: string;
}

export interface HistoryTurn {
  role: "user" | "assistant";
  text: string;
  has_image?: boolean;
  segments?: Segment[];
}

export interface HistoryResponse {
  session_id: string;
  turns: HistoryTurn[];
}

export interface ErrorEnvelope {
  error: string;
  detail?: string;
}
