// The one deployment setting: where the issue service lives. Override by
// defining window.ISSUEVIEW_BASE_URL before the app script loads.

declare global {
  interface Window {
    ISSUEVIEW_BASE_URL?: string;
  }
}

export function baseUrl(): string {
  return window.ISSUEVIEW_BASE_URL ?? 'http://127.0.0.1:8177';
}
