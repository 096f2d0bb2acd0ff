// Thin typed client over the session service HTTP+JSON API.
// The API key travels only in the create-session request body; it is never
// placed in a URL, a header we log, or any kind of browser storage.

import type {
  DatasetSummary,
  ResultPayload,
  RunConfig,
  RunStatus,
  ServiceError,
  SessionInfo,
  UploadMapping,
} from './types.js';

export class ApiError extends Error {
  constructor(
    public code: string,
    message: string,
    public status: number,
  ) {
    super(message);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let payload: ServiceError | null = null;
  try {
    payload = (await response.json()) as ServiceError;
  } catch {
    // non-JSON error body
  }
  return new ApiError(
    payload?.code ?? `HTTP${response.status}`,
    payload?.message ?? response.statusText,
    response.status,
  );
}

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) throw await parseError(response);
  return (await response.json()) as T;
}

async function blobBytes(file: File | Blob): Promise<Uint8Array> {
  if (typeof file.arrayBuffer === 'function') {
    return new Uint8Array(await file.arrayBuffer());
  }
  // FileReader fallback for DOM implementations without Blob.arrayBuffer
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onload = () => resolve(new Uint8Array(reader.result as ArrayBuffer));
    reader.onerror = () => reject(reader.error ?? new Error('could not read file'));
    reader.readAsArrayBuffer(file);
  });
}

export class QualiApi {
  constructor(public baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, '')}${path}`;
  }

  async createSession(
    backend: 'mock' | 'real',
    apiKey: string,
    mockScript?: unknown[],
  ): Promise<SessionInfo> {
    const response = await fetch(this.url('/sessions'), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ backend, api_key: apiKey, mock_script: mockScript ?? null }),
    });
    return asJson<SessionInfo>(response);
  }

  // The multipart body is assembled by hand: identical bytes in browsers,
  // jsdom, and node, with no dependence on the environment's FormData.
  async uploadDataset(
    sessionId: string,
    file: File | Blob,
    filename: string,
    mapping: UploadMapping,
  ): Promise<DatasetSummary> {
    const fileBytes = await blobBytes(file);
    const boundary = `----quali-${Date.now().toString(16)}-${Math.random().toString(16).slice(2)}`;
    const encoder = new TextEncoder();
    const safeName = filename.replace(/["\r\n]/g, '_');
    const head = encoder.encode(
      `--${boundary}\r\n` +
        `Content-Disposition: form-data; name="file"; filename="${safeName}"\r\n` +
        `Content-Type: ${file.type || 'application/octet-stream'}\r\n\r\n`,
    );
    const tail = encoder.encode(
      `\r\n--${boundary}\r\n` +
        'Content-Disposition: form-data; name="mapping"\r\n\r\n' +
        `${JSON.stringify(mapping)}\r\n--${boundary}--\r\n`,
    );
    const body = new Uint8Array(head.length + fileBytes.length + tail.length);
    body.set(head, 0);
    body.set(fileBytes, head.length);
    body.set(tail, head.length + fileBytes.length);
    const response = await fetch(this.url(`/sessions/${sessionId}/dataset`), {
      method: 'POST',
      headers: { 'Content-Type': `multipart/form-data; boundary=${boundary}` },
      body,
    });
    return asJson<DatasetSummary>(response);
  }

  async previewPrompt(sessionId: string, config: RunConfig): Promise<string> {
    const response = await fetch(this.url(`/sessions/${sessionId}/preview`), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(config),
    });
    const payload = await asJson<{ prompt: string }>(response);
    return payload.prompt;
  }

  async startRun(sessionId: string, config: RunConfig): Promise<void> {
    const response = await fetch(this.url(`/sessions/${sessionId}/run`), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(config),
    });
    await asJson<{ status: string }>(response);
  }

  async getStatus(sessionId: string): Promise<RunStatus> {
    const response = await fetch(this.url(`/sessions/${sessionId}/status`));
    return asJson<RunStatus>(response);
  }

  async getResult(sessionId: string): Promise<ResultPayload> {
    const response = await fetch(this.url(`/sessions/${sessionId}/result`));
    return asJson<ResultPayload>(response);
  }

  async getResultCsv(sessionId: string): Promise<Uint8Array> {
    const response = await fetch(this.url(`/sessions/${sessionId}/result.csv`));
    if (!response.ok) throw await parseError(response);
    return new Uint8Array(await response.arrayBuffer());
  }

  async getTranscript(sessionId: string): Promise<string> {
    const response = await fetch(this.url(`/sessions/${sessionId}/transcript.txt`));
    if (!response.ok) throw await parseError(response);
    return response.text();
  }

  async eraseSession(sessionId: string): Promise<void> {
    const response = await fetch(this.url(`/sessions/${sessionId}`), { method: 'DELETE' });
    await asJson<{ erased: boolean }>(response);
  }
}

// Poll run status until it reaches a terminal state. The UI polls at a
// 1-second interval; tests tighten it.
export async function pollUntilDone(
  api: QualiApi,
  sessionId: string,
  onTick: (status: RunStatus) => void,
  intervalMs = 1000,
): Promise<RunStatus> {
  for (;;) {
    const status = await api.getStatus(sessionId);
    onTick(status);
    if (status.status === 'complete' || status.status === 'aborted') return status;
    await new Promise((resolve) => setTimeout(resolve, intervalMs));
  }
}
