// Application controller: wires the panels to the service API. All
// analysis truth comes from service responses; the controller only caches
// and renders them.

import { ApiError, QualiApi, pollUntilDone } from './api.js';
import { renderConnection, renderRunStatus, renderSourceRecord, renderThemeTable } from './render.js';
import { Store } from './state.js';
import type { QuoteInfo, RunConfig, UploadMapping } from './types.js';

export interface AppElements {
  connectionBar: HTMLElement;
  datasetSummary: HTMLElement;
  previewBox: HTMLElement;
  runStatus: HTMLElement;
  resultPanel: HTMLElement;
  sourcePanel: HTMLElement;
  noticeBar: HTMLElement;
}

export class App {
  readonly store = new Store();
  pollIntervalMs = 1000;
  private running = false;

  constructor(
    private api: QualiApi,
    private els: AppElements,
  ) {
    this.store.subscribe((state) => {
      renderConnection(this.els.connectionBar, state.connection);
      renderRunStatus(this.els.runStatus, state.run);
      this.els.noticeBar.textContent = state.notice ?? '';
      this.els.datasetSummary.textContent = state.dataset
        ? `${state.dataset.records} records, ${state.dataset.speakers.length} speakers ` +
          `(${state.dataset.data_type})`
        : 'no dataset uploaded';
      if (state.result) {
        renderThemeTable(this.els.resultPanel, state.result, state.resultStale, (quote) =>
          this.showQuoteSource(quote),
        );
      }
    });
  }

  get sessionId(): string {
    const id = this.store.get().connection.sessionId;
    if (!id) throw new Error('not connected');
    return id;
  }

  async connect(backend: 'mock' | 'real', apiKey: string): Promise<void> {
    try {
      const info = await this.api.createSession(backend, apiKey);
      this.store.connected(info);
    } catch (error) {
      const message =
        error instanceof ApiError ? `${error.code}: ${error.message}` : String(error);
      this.store.connectionFailed(message);
      throw error;
    }
  }

  async upload(file: File | Blob, filename: string, mapping: UploadMapping): Promise<void> {
    const summary = await this.api.uploadDataset(this.sessionId, file, filename, mapping);
    this.store.datasetUploaded(summary);
  }

  async refreshPreview(config: RunConfig): Promise<string> {
    const prompt = await this.api.previewPrompt(this.sessionId, config);
    this.els.previewBox.textContent = prompt;
    return prompt;
  }

  // Start a run and poll to completion. Rerunning while a run is active is
  // blocked client-side with a notice (the service would 409 anyway).
  async run(config: RunConfig): Promise<void> {
    if (this.running) {
      this.store.notice('a run is already in progress (one run per session)');
      return;
    }
    this.running = true;
    try {
      await this.api.startRun(this.sessionId, config);
      this.store.runStarted();
      const finalStatus = await pollUntilDone(
        this.api,
        this.sessionId,
        (status) => this.store.runTick(status),
        this.pollIntervalMs,
      );
      if (finalStatus.status === 'complete') {
        this.store.resultArrived(await this.api.getResult(this.sessionId));
      }
    } finally {
      this.running = false;
    }
  }

  showQuoteSource(quote: QuoteInfo): void {
    const result = this.store.get().result;
    if (!quote.matched_record_id || !result) {
      this.els.sourcePanel.textContent = quote.verified
        ? 'source record unavailable'
        : 'this quote could not be verified against the dataset';
      return;
    }
    const record = result.records[quote.matched_record_id];
    if (!record) {
      this.els.sourcePanel.textContent = 'source record unavailable';
      return;
    }
    renderSourceRecord(this.els.sourcePanel, record.speaker, record.text, quote.text);
  }

  // The export button downloads exactly the bytes the service serves.
  async exportCsv(): Promise<Uint8Array> {
    const bytes = await this.api.getResultCsv(this.sessionId);
    if (typeof URL !== 'undefined' && 'createObjectURL' in URL && typeof document !== 'undefined') {
      try {
        const copy = bytes.buffer.slice(bytes.byteOffset, bytes.byteOffset + bytes.byteLength);
        const url = URL.createObjectURL(new Blob([copy as ArrayBuffer], { type: 'text/csv' }));
        const anchor = document.createElement('a');
        anchor.href = url;
        anchor.download = 'themes.csv';
        anchor.click();
        URL.revokeObjectURL(url);
      } catch {
        // headless environments have no object URLs; the caller still gets the bytes
      }
    }
    return bytes;
  }

  async erase(): Promise<void> {
    await this.api.eraseSession(this.sessionId);
    this.store.disconnected();
    this.els.resultPanel.innerHTML = '';
    this.els.sourcePanel.innerHTML = '';
    this.els.previewBox.textContent = '';
  }
}

export function mount(root: Document, baseUrl: string): App {
  const byId = (id: string): HTMLElement => {
    const el = root.getElementById(id);
    if (!el) throw new Error(`missing #${id}`);
    return el;
  };
  const app = new App(new QualiApi(baseUrl), {
    connectionBar: byId('connection-bar'),
    datasetSummary: byId('dataset-summary'),
    previewBox: byId('preview-box'),
    runStatus: byId('run-status'),
    resultPanel: byId('result-panel'),
    sourcePanel: byId('source-panel'),
    noticeBar: byId('notice-bar'),
  });

  const form = {
    apiKey: byId('api-key') as HTMLInputElement,
    backend: byId('backend-select') as HTMLSelectElement,
    file: byId('dataset-file') as HTMLInputElement,
    textCol: byId('text-col') as HTMLInputElement,
    speakerCol: byId('speaker-col') as HTMLInputElement,
    dataType: byId('data-type') as HTMLSelectElement,
    description: byId('dataset-description') as HTMLTextAreaElement,
    themes: byId('theme-count') as HTMLInputElement,
    rolePlay: byId('role-play') as HTMLInputElement,
    extra: byId('extra-instructions') as HTMLTextAreaElement,
  };

  const currentConfig = (): RunConfig => ({
    theme_count: Number(form.themes.value) || 10,
    role_playing: form.rolePlay.checked,
    extra_instructions: form.extra.value,
    dataset_description: form.description.value || undefined,
  });

  byId('connect-button').addEventListener('click', () => {
    void app
      .connect(form.backend.value as 'mock' | 'real', form.apiKey.value)
      .catch(() => undefined);
  });
  byId('upload-button').addEventListener('click', () => {
    const file = form.file.files?.[0];
    if (!file) {
      app.store.notice('choose a dataset file first');
      return;
    }
    void app
      .upload(file, file.name, {
        text_column: form.textCol.value || undefined,
        speaker_column: form.speakerCol.value || undefined,
        data_type: form.dataType.value,
        description: form.description.value,
      })
      .catch((error) => app.store.notice(String(error)));
  });
  byId('preview-button').addEventListener('click', () => {
    void app.refreshPreview(currentConfig()).catch((error) => app.store.notice(String(error)));
  });
  byId('run-button').addEventListener('click', () => {
    void app.run(currentConfig()).catch((error) => app.store.notice(String(error)));
  });
  byId('export-button').addEventListener('click', () => {
    void app.exportCsv().catch((error) => app.store.notice(String(error)));
  });
  byId('erase-button').addEventListener('click', () => {
    void app.erase().catch((error) => app.store.notice(String(error)));
  });
  return app;
}
