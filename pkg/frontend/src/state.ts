// UI session state. Every field is a cached copy of a service response;
// nothing here is computed analysis. The previous result is retained while
// a rerun is in flight.

import type { DatasetSummary, ResultPayload, RunStatus, SessionInfo } from './types.js';

export interface ConnectionState {
  state: 'disconnected' | 'connected' | 'failed';
  sessionId?: string;
  backend?: string;
  message?: string;
}

export interface UiSessionState {
  connection: ConnectionState;
  dataset?: DatasetSummary;
  run?: RunStatus;
  result?: ResultPayload;
  resultStale: boolean;
  notice?: string;
}

export type Listener = (state: UiSessionState) => void;

export class Store {
  private state: UiSessionState = { connection: { state: 'disconnected' }, resultStale: false };
  private listeners: Listener[] = [];

  get(): UiSessionState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    listener(this.state);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private set(next: UiSessionState): void {
    this.state = next;
    for (const listener of this.listeners) listener(next);
  }

  connected(info: SessionInfo): void {
    this.set({
      connection: {
        state: 'connected',
        sessionId: info.session_id,
        backend: info.backend,
        message: `connected (${info.backend})`,
      },
      resultStale: false,
    });
  }

  connectionFailed(message: string): void {
    this.set({
      ...this.state,
      connection: { state: 'failed', message },
    });
  }

  disconnected(): void {
    this.set({ connection: { state: 'disconnected' }, resultStale: false });
  }

  datasetUploaded(summary: DatasetSummary): void {
    this.set({ ...this.state, dataset: summary, result: undefined, resultStale: false });
  }

  runStarted(): void {
    // keep the last result on screen (stale) until the new one arrives
    this.set({
      ...this.state,
      run: { status: 'running', batches_total: 0, batches_done: 0, recovery: [], error: null },
      resultStale: this.state.result !== undefined,
      notice: undefined,
    });
  }

  runTick(status: RunStatus): void {
    this.set({ ...this.state, run: status });
  }

  resultArrived(result: ResultPayload): void {
    this.set({ ...this.state, result, resultStale: false });
  }

  notice(message: string): void {
    this.set({ ...this.state, notice: message });
  }
}
