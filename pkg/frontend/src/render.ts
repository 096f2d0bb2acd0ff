// DOM rendering. Pure functions from state slices to elements; the only
// state they read is what the service returned.

import type { QuoteInfo, ResultPayload, RunStatus, ThemeRow } from './types.js';
import type { ConnectionState } from './state.js';

export function renderConnection(el: HTMLElement, connection: ConnectionState): void {
  el.textContent = connection.message ?? 'not connected';
  el.className = `status-bar status-${connection.state}`;
  if (connection.sessionId) {
    const id = document.createElement('span');
    id.className = 'session-id';
    id.textContent = ` session ${connection.sessionId.slice(0, 8)}…`;
    el.appendChild(id);
  }
}

export function renderRunStatus(el: HTMLElement, run: RunStatus | undefined): void {
  if (!run) {
    el.textContent = 'no run yet';
    el.className = 'run-status run-idle';
    return;
  }
  const progress =
    run.batches_total > 0 ? ` ${run.batches_done}/${run.batches_total} batches` : '';
  el.textContent = `${run.status}${progress}`;
  el.className = `run-status run-${run.status}`;
  if (run.error) el.textContent += ` — ${run.error.code}: ${run.error.message}`;
  if (run.recovery.length) {
    const log = document.createElement('ul');
    log.className = 'recovery-log';
    for (const line of run.recovery) {
      const item = document.createElement('li');
      item.textContent = line;
      log.appendChild(item);
    }
    el.appendChild(log);
  }
}

function quoteChip(quote: QuoteInfo, onClick: (quote: QuoteInfo) => void): HTMLElement {
  const chip = document.createElement('button');
  chip.type = 'button';
  chip.className = quote.verified ? 'quote quote-verified' : 'quote quote-unverified';
  chip.dataset.verified = String(quote.verified);
  if (quote.matched_record_id) chip.dataset.recordId = quote.matched_record_id;
  chip.textContent = `“${quote.text}”`;
  if (!quote.verified) {
    const badge = document.createElement('span');
    badge.className = 'badge-unverified';
    badge.textContent = ' ⚠ unverified';
    chip.appendChild(badge);
  }
  chip.addEventListener('click', () => onClick(quote));
  return chip;
}

export function renderThemeTable(
  el: HTMLElement,
  result: ResultPayload,
  stale: boolean,
  onQuoteClick: (quote: QuoteInfo) => void,
): void {
  el.innerHTML = '';
  el.classList.toggle('stale', stale);
  const table = document.createElement('table');
  table.className = 'theme-table';
  const head = document.createElement('tr');
  for (const name of ['Themes', 'Description', 'Quotes', 'Participant Count']) {
    const th = document.createElement('th');
    th.textContent = name;
    head.appendChild(th);
  }
  table.appendChild(head);
  for (const row of result.entries) {
    table.appendChild(themeRow(row, onQuoteClick));
  }
  el.appendChild(table);

  const provenance = document.createElement('p');
  provenance.className = 'provenance-summary';
  const pct = (result.provenance.rate * 100).toFixed(0);
  provenance.textContent =
    `${result.provenance.verified}/${result.provenance.total} quotes verified (${pct}%)`;
  el.appendChild(provenance);
}

function themeRow(row: ThemeRow, onQuoteClick: (quote: QuoteInfo) => void): HTMLElement {
  const tr = document.createElement('tr');
  tr.className = 'theme-row';
  const theme = document.createElement('td');
  theme.textContent = row.theme;
  const description = document.createElement('td');
  description.textContent = row.description;
  const quotes = document.createElement('td');
  quotes.className = 'quotes-cell';
  for (const quote of row.quotes) quotes.appendChild(quoteChip(quote, onQuoteClick));
  const count = document.createElement('td');
  count.textContent = String(row.participant_count);
  if (row.claimed_count !== null && row.claimed_count !== row.participant_count) {
    count.title = `model claimed ${row.claimed_count}`;
  }
  tr.append(theme, description, quotes, count);
  return tr;
}

interface NormalizedText {
  text: string;
  map: number[]; // normalized index -> original index
}

function normalizeWithMap(original: string): NormalizedText {
  let text = '';
  const map: number[] = [];
  let pendingSpace = false;
  for (let i = 0; i < original.length; i++) {
    const ch = original[i];
    if (/\s/.test(ch)) {
      pendingSpace = text.length > 0;
      continue;
    }
    if (pendingSpace) {
      text += ' ';
      map.push(i - 1);
      pendingSpace = false;
    }
    text += ch.toLowerCase();
    map.push(i);
  }
  return { text, map };
}

const EDGE_PUNCT = /^[\s"'“”‘’….,;:!?()[\]{}<>*_`~–—-]+|[\s"'“”‘’….,;:!?()[\]{}<>*_`~–—-]+$/g;

// Locate the quote inside the record text the way the backend verifies it
// (case-insensitive, whitespace collapsed, edge punctuation ignored) and
// return the matching span in the original string.
export function findQuoteSpan(recordText: string, quoteText: string): [number, number] | null {
  const needle = quoteText.replace(EDGE_PUNCT, '').replace(/\s+/g, ' ').toLowerCase();
  if (!needle) return null;
  const haystack = normalizeWithMap(recordText);
  const at = haystack.text.indexOf(needle);
  if (at < 0) return null;
  const start = haystack.map[at];
  const end = haystack.map[at + needle.length - 1] + 1;
  return [start, end];
}

export function renderSourceRecord(
  el: HTMLElement,
  speaker: string,
  recordText: string,
  quoteText: string,
): void {
  el.innerHTML = '';
  el.className = 'source-record';
  const who = document.createElement('h3');
  who.textContent = speaker ? `Source record — ${speaker}` : 'Source record';
  el.appendChild(who);
  const body = document.createElement('p');
  const span = findQuoteSpan(recordText, quoteText);
  if (span) {
    const [start, end] = span;
    body.append(document.createTextNode(recordText.slice(0, start)));
    const mark = document.createElement('mark');
    mark.textContent = recordText.slice(start, end);
    body.appendChild(mark);
    body.append(document.createTextNode(recordText.slice(end)));
  } else {
    body.textContent = recordText;
  }
  el.appendChild(body);
}
