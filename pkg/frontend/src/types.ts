// Wire types for the session service JSON API.

export interface SessionInfo {
  session_id: string;
  backend: string;
}

export interface DatasetSummary {
  records: number;
  speakers: string[];
  data_type: string;
}

export interface RunStatus {
  status: 'idle' | 'running' | 'needs_attention' | 'complete' | 'aborted';
  batches_total: number;
  batches_done: number;
  recovery: string[];
  error: { code: string; message: string } | null;
  warning?: string | null;
  cost?: CostInfo;
}

export interface CostInfo {
  input_tokens: number;
  output_tokens: number;
  rate_in: number;
  rate_out: number;
  total: number;
}

export interface QuoteInfo {
  text: string;
  matched_record_id: string | null;
  verified: boolean;
}

export interface ThemeRow {
  theme: string;
  description: string;
  participant_count: number;
  claimed_count: number | null;
  quotes: QuoteInfo[];
}

export interface ResultPayload {
  entries: ThemeRow[];
  provenance: {
    verified: number;
    total: number;
    rate: number;
    unmatched: { theme: string; quote: string }[];
  };
  cost: CostInfo;
  warning: string | null;
  records: Record<string, { speaker: string; text: string }>;
  recovery: string[];
}

export interface RunConfig {
  theme_count: number;
  role_playing: boolean;
  extra_instructions: string;
  dataset_description?: string;
  // mock backend only: replace the session's reply script for this run
  mock_script?: unknown[];
}

export interface UploadMapping {
  text_column?: string | number;
  speaker_column?: string | number;
  id_column?: string | number;
  data_type: string;
  description?: string;
  format?: string;
}

export interface ServiceError {
  code: string;
  message: string;
  detail?: unknown;
}
