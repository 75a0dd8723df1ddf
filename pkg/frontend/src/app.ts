// Single-page console: a query panel over POST /v1/query, a detail view over
// GET /v1/issues/{id}, and per-result relevance feedback via POST /v1/feedback.
// Results render in server order with scores to two decimals.

import { ApiClient, ApiError, IssueRecord, QueryMode, QueryResult, Verdict } from './api.js';

type FeedbackVerdicts = Map<string, Verdict>; // key: `${queryId}:${issueId}`

interface AppState {
  queryId: string;
  results: QueryResult[];
  snapshot: string;
  verdicts: FeedbackVerdicts;
  searched: boolean;
}

let queryCounter = 0;

function nextQueryId(): string {
  queryCounter += 1;
  return `q-${Date.now()}-${queryCounter}`;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class ConsoleApp {
  private state: AppState = {
    queryId: '',
    results: [],
    snapshot: '',
    verdicts: new Map(),
    searched: false,
  };
  private inFlight: AbortController | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    private readonly user: string = 'console-user',
  ) {}

  start(): void {
    this.renderShell();
    window.addEventListener('hashchange', () => this.route());
    void this.route();
  }

  private route(): Promise<void> {
    const match = window.location.hash.match(/^#\/issue\/(.+)$/);
    if (match) {
      return this.showIssueDetail(decodeURIComponent(match[1]));
    }
    this.showQueryPanel();
    return Promise.resolve();
  }

  // ------------------------------------------------------------------ shell

  private renderShell(): void {
    this.root.innerHTML = `
      <header class="bar">
        <h1>Issue Console</h1>
        <span id="snapshot" class="snapshot"></span>
      </header>
      <div id="banner" class="banner" hidden></div>
      <main id="view"></main>
    `;
  }

  private view(): HTMLElement {
    return this.root.querySelector('#view') as HTMLElement;
  }

  private banner(message: string | null): void {
    const node = this.root.querySelector('#banner') as HTMLElement;
    if (message === null) {
      node.hidden = true;
      node.textContent = '';
    } else {
      node.hidden = false;
      node.textContent = message;
    }
  }

  private setSnapshot(hash: string): void {
    this.state.snapshot = hash;
    const node = this.root.querySelector('#snapshot') as HTMLElement;
    node.textContent = hash ? `snapshot ${hash.slice(0, 12)}` : '';
  }

  // ------------------------------------------------------------ query panel

  private showQueryPanel(): void {
    this.banner(null);
    const view = this.view();
    view.innerHTML = `
      <form id="query-form" class="query-form">
        <textarea id="query-text" rows="3" placeholder="Describe the incident..."></textarea>
        <div class="controls">
          <select id="query-mode">
            <option value="M2" selected>entities + action verbs</option>
            <option value="M1">entities only</option>
          </select>
          <button type="submit">Find similar issues</button>
        </div>
      </form>
      <section id="results" class="results"></section>
    `;
    const form = view.querySelector('#query-form') as HTMLFormElement;
    form.addEventListener('submit', (event) => {
      event.preventDefault();
      void this.runQuery();
    });
    this.renderResults();
  }

  async runQuery(): Promise<void> {
    const text = (this.view().querySelector('#query-text') as HTMLTextAreaElement).value.trim();
    const mode = (this.view().querySelector('#query-mode') as HTMLSelectElement).value as QueryMode;
    if (!text) {
      this.banner('Enter an incident description first.');
      return;
    }
    this.inFlight?.abort();
    const controller = new AbortController();
    this.inFlight = controller;
    this.banner(null);
    try {
      const response = await this.api.query(text, mode, 10, controller.signal);
      if (controller !== this.inFlight) return; // superseded
      this.state = {
        queryId: nextQueryId(),
        results: response.results,
        snapshot: response.snapshot,
        verdicts: new Map(),
        searched: true,
      };
      this.setSnapshot(response.snapshot);
      this.renderResults();
    } catch (error) {
      if (controller.signal.aborted) return;
      this.banner(error instanceof ApiError ? error.message : 'Network error, try again.');
    }
  }

  private renderResults(): void {
    const container = this.view().querySelector('#results') as HTMLElement | null;
    if (!container) return;
    container.innerHTML = '';
    if (!this.state.searched) return;
    if (this.state.results.length === 0) {
      container.appendChild(el('p', 'empty-state', 'No similar issues found.'));
      return;
    }
    for (const result of this.state.results) {
      container.appendChild(this.resultCard(result));
    }
  }

  private resultCard(result: QueryResult): HTMLElement {
    const card = el('article', 'card');
    card.dataset.issueId = result.issue_id;

    const head = el('div', 'card-head');
    head.appendChild(el('span', 'score', result.score.toFixed(2)));
    const link = el('a', 'issue-link', result.issue_text);
    link.href = `#/issue/${encodeURIComponent(result.issue_id)}`;
    head.appendChild(link);
    card.appendChild(head);

    if (result.diagnostics.length > 0) {
      const diag = el('ul', 'diagnostics');
      for (const utterance of result.diagnostics) {
        diag.appendChild(el('li', undefined, `${utterance.speaker}: ${utterance.text}`));
      }
      card.appendChild(diag);
    }
    if (result.resolution_summaries.length > 0) {
      const fixes = el('ul', 'summaries');
      for (const summary of result.resolution_summaries) {
        fixes.appendChild(el('li', undefined, `${summary.verb} → ${summary.entity}`));
      }
      card.appendChild(fixes);
    }

    card.appendChild(this.feedbackControls(result.issue_id));
    return card;
  }

  private feedbackControls(issueId: string): HTMLElement {
    const wrap = el('div', 'feedback');
    const key = `${this.state.queryId}:${issueId}`;
    const current = this.state.verdicts.get(key);
    for (const verdict of ['relevant', 'not_relevant'] as Verdict[]) {
      const button = el('button', 'feedback-btn', verdict === 'relevant' ? 'Relevant' : 'Not relevant');
      button.type = 'button';
      button.dataset.verdict = verdict;
      if (current === verdict) button.classList.add('selected');
      button.addEventListener('click', () => void this.submitFeedback(issueId, verdict));
      wrap.appendChild(button);
    }
    return wrap;
  }

  async submitFeedback(issueId: string, verdict: Verdict): Promise<void> {
    const key = `${this.state.queryId}:${issueId}`;
    const previous = this.state.verdicts.get(key);
    this.state.verdicts.set(key, verdict); // optimistic
    this.refreshCard(issueId);
    try {
      await this.api.feedback(this.state.queryId, issueId, verdict, this.user);
    } catch (error) {
      // roll back the optimistic state
      if (previous === undefined) {
        this.state.verdicts.delete(key);
      } else {
        this.state.verdicts.set(key, previous);
      }
      this.refreshCard(issueId);
      if (error instanceof ApiError && error.status === 409) {
        this.banner('That result expired with a reindex; run the query again.');
      } else {
        this.banner('Feedback failed, try again.');
      }
    }
  }

  private refreshCard(issueId: string): void {
    const card = this.view().querySelector(`[data-issue-id="${issueId}"]`);
    if (!card) return;
    const old = card.querySelector('.feedback');
    if (old) card.replaceChild(this.feedbackControls(issueId), old);
  }

  // ------------------------------------------------------------ issue detail

  private async showIssueDetail(issueId: string): Promise<void> {
    this.banner(null);
    const view = this.view();
    view.innerHTML = '<p class="loading">Loading…</p>';
    let record: IssueRecord;
    try {
      record = await this.api.issue(issueId);
    } catch (error) {
      if (error instanceof ApiError && error.status === 404) {
        view.innerHTML = '';
        view.appendChild(el('p', 'not-found', `No issue with id ${issueId}.`));
      } else {
        view.innerHTML = '';
        view.appendChild(el('p', 'error-state', 'Could not load the issue.'));
      }
      return;
    }
    view.innerHTML = '';
    const back = el('a', 'back-link', '← back to search');
    back.href = '#/';
    view.appendChild(back);

    view.appendChild(this.section('issue', 'Issue', [record.issue_text]));
    view.appendChild(
      this.section(
        'diagnostics', 'Diagnostics',
        record.diagnostics.map((u) => `${u.speaker}: ${u.text}`),
      ),
    );
    view.appendChild(
      this.section(
        'resolutions', 'Resolution',
        record.resolutions.map((u) => `${u.speaker}: ${u.text}`),
      ),
    );
    view.appendChild(
      this.section(
        'resolution-summaries', 'Resolution summary',
        record.resolution_summaries.map((s) => `${s.verb} → ${s.entity}`),
      ),
    );
  }

  private section(id: string, title: string, items: string[]): HTMLElement {
    const block = el('section', 'artefact-section');
    block.id = `section-${id}`;
    block.appendChild(el('h2', undefined, title));
    const list = el('ul');
    for (const item of items) {
      list.appendChild(el('li', undefined, item));
    }
    if (items.length === 0) {
      list.appendChild(el('li', 'empty', '(none)'));
    }
    block.appendChild(list);
    return block;
  }
}
