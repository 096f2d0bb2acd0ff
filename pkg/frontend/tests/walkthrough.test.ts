// UI walkthrough against the live local service with the mock backend:
// connect, upload the bundled fixture, run 20 themes, inspect provenance,
// rerun with 15, and export a byte-identical CSV.

import { readFileSync } from 'node:fs';
import { dirname, join } from 'node:path';
import { fileURLToPath } from 'node:url';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { App, type AppElements } from '../src/app.js';
import { QualiApi } from '../src/api.js';
import { startService, stopService, type LiveService } from './service.helper.js';

const FIXTURE = join(
  dirname(fileURLToPath(import.meta.url)),
  '..', '..', 'data', 'focus_group_remote_work.csv',
);

let service: LiveService;

beforeAll(async () => {
  service = await startService(8646);
});

afterAll(() => {
  if (service) stopService(service);
});

function buildDom(): AppElements {
  document.body.innerHTML = `
    <div id="connection-bar"></div>
    <div id="dataset-summary"></div>
    <div id="preview-box"></div>
    <div id="run-status"></div>
    <div id="result-panel"></div>
    <div id="source-panel"></div>
    <div id="notice-bar"></div>
  `;
  const byId = (id: string) => document.getElementById(id)!;
  return {
    connectionBar: byId('connection-bar'),
    datasetSummary: byId('dataset-summary'),
    previewBox: byId('preview-box'),
    runStatus: byId('run-status'),
    resultPanel: byId('result-panel'),
    sourcePanel: byId('source-panel'),
    noticeBar: byId('notice-bar'),
  };
}

function fixtureFile(): File {
  const bytes = readFileSync(FIXTURE);
  return new File([bytes], 'focus_group_remote_work.csv', { type: 'text/csv' });
}

const MAPPING = {
  text_column: 'message',
  speaker_column: 'name',
  data_type: 'focus_group',
  description: 'Simulated focus group on remote work.',
};

describe('UI walkthrough (secondary acceptance)', () => {
  it('drives connect → upload → run → provenance → rerun → export', async () => {
    const els = buildDom();
    const app = new App(new QualiApi(service.baseUrl), els);
    expect(app.pollIntervalMs).toBe(1000); // documented polling cadence
    app.pollIntervalMs = 25; // tighten for the test run

    // connect (mock backend)
    await app.connect('mock', 'sk-UI-SENTINEL');
    expect(els.connectionBar.textContent).toContain('connected (mock)');
    const firstSession = app.sessionId;

    // upload the bundled fixture
    await app.upload(fixtureFile(), 'focus_group_remote_work.csv', MAPPING);
    expect(els.datasetSummary.textContent).toContain('360 records');

    // preview reflects the configured theme count
    const preview = await app.refreshPreview({
      theme_count: 20,
      role_playing: true,
      extra_instructions: '',
    });
    expect(preview).toContain('exactly 20 rows');
    expect(els.previewBox.textContent).toContain('exactly 20 rows');

    // run with 20 themes and wait for the table
    await app.run({ theme_count: 20, role_playing: true, extra_instructions: '' });
    expect(els.runStatus.textContent).toContain('complete');
    let rows = els.resultPanel.querySelectorAll('tr.theme-row');
    expect(rows.length).toBe(20);

    // every quote chip is backed by a service-verified match
    const chips = els.resultPanel.querySelectorAll('button.quote');
    expect(chips.length).toBeGreaterThan(0);
    expect(els.resultPanel.querySelectorAll('.quote-unverified').length).toBe(0);

    // clicking a verified quote reveals the matched source record with the
    // quote highlighted
    const chip = chips[0] as HTMLButtonElement;
    chip.click();
    const mark = els.sourcePanel.querySelector('mark');
    expect(mark).not.toBeNull();
    const quoteShown = chip.textContent!.replace(/[“”]/g, '').trim();
    expect(mark!.textContent!.toLowerCase()).toContain(
      quoteShown.split(' ').slice(0, 3).join(' ').toLowerCase(),
    );
    const recordText = els.sourcePanel.querySelector('p')!.textContent!;
    expect(recordText.toLowerCase()).toContain(mark!.textContent!.toLowerCase());

    // rerun with 15 themes; the new table has at most 15 rows
    await app.run({ theme_count: 15, role_playing: true, extra_instructions: '' });
    rows = els.resultPanel.querySelectorAll('tr.theme-row');
    expect(rows.length).toBeLessThanOrEqual(15);
    expect(rows.length).toBeGreaterThan(0);

    // the export button's bytes equal GET /result.csv exactly
    const exported = await app.exportCsv();
    const direct = new Uint8Array(
      await (await fetch(`${service.baseUrl}/sessions/${app.sessionId}/result.csv`)).arrayBuffer(),
    );
    expect(Buffer.from(exported).equals(Buffer.from(direct))).toBe(true);
    const header = new TextDecoder().decode(exported.slice(0, 42));
    expect(header).toBe('Theme,Description,Quotes,Participant Count');

    // erase, reconnect: a fresh session id appears (Fig-style reconnect)
    await app.erase();
    expect(els.connectionBar.textContent).toContain('not connected');
    await app.connect('mock', 'sk-UI-SENTINEL');
    expect(app.sessionId).not.toBe(firstSession);
    await app.erase();
  });

  it('renders AuthFailed verbatim when the real backend rejects the key', async () => {
    const els = buildDom();
    const app = new App(new QualiApi(service.baseUrl), els);
    await expect(app.connect('real', '')).rejects.toThrow();
    expect(els.connectionBar.className).toContain('status-failed');
    expect(els.connectionBar.textContent).toContain('AuthFailed');
  });

  it('blocks rerun while a run is active (single run per session)', async () => {
    const els = buildDom();
    const app = new App(new QualiApi(service.baseUrl), els);
    app.pollIntervalMs = 25;
    await app.connect('mock', '');
    await app.upload(fixtureFile(), 'focus.csv', MAPPING);

    // slow scripted replies keep the first run alive while the second starts
    const slow = {
      theme_count: 5,
      role_playing: false,
      extra_instructions: '',
      mock_script: [{ reply: 'not a table', delay_s: 0.4 }],
    };
    const first = app.run(slow);
    await new Promise((resolve) => setTimeout(resolve, 120));
    await app.run(slow); // second call must not start a new run
    expect(els.noticeBar.textContent).toContain('already in progress');
    await first;
    expect(els.runStatus.textContent).toMatch(/complete|aborted/);
    await app.erase();
  });
});
