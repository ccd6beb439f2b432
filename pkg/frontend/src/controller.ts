/** UI state machine for one annotation session.
 *
 * Framework-free: DOM code subscribes via `onChange` and forwards input
 * events here.  Network behavior follows three rules: suggest calls are
 * debounced and single-flight with latest-wins reconciliation (a response
 * for anything but the current text/cursor is dropped), snapshots are
 * posted from a fixed-cadence timer only when the text changed, and failed
 * suggests retry with exponential backoff while the input stays editable.
 */

import { ApiClient, Candidate, SessionStats } from "./api.js";
import { debounce, Debounced } from "./debounce.js";

export interface UiState {
  sessionId: string | null;
  imageId: string | null;
  imageUrl: string | null;
  text: string;
  cursor: number;
  suggestions: Candidate[];
  pending: boolean;
  submitted: boolean;
  stats: SessionStats | null;
  error: string | null;
}

export interface ControllerOptions {
  debounceMs?: number;
  snapshotMs?: number;
  retryBaseMs?: number;
  retryMaxMs?: number;
  now?: () => number; // seconds
}

const DEFAULTS = {
  debounceMs: 150,
  snapshotMs: 200,
  retryBaseMs: 400,
  retryMaxMs: 5000,
};

export class AnnotationController {
  readonly state: UiState = {
    sessionId: null,
    imageId: null,
    imageUrl: null,
    text: "",
    cursor: 0,
    suggestions: [],
    pending: false,
    submitted: false,
    stats: null,
    error: null,
  };

  onChange: (state: UiState) => void = () => {};

  private readonly opts: Required<ControllerOptions>;
  private readonly requestSuggest: Debounced<[string, number]>;
  private inFlight = false;
  private queued: { text: string; cursor: number } | null = null;
  private retryTimer: ReturnType<typeof setTimeout> | undefined;
  private retryAttempts = 0;
  private snapshotTimer: ReturnType<typeof setInterval> | undefined;
  private lastPostedText: string | null = null;
  private postingSnapshot = false;

  constructor(
    private readonly api: ApiClient,
    options: ControllerOptions = {},
  ) {
    const now = options.now ?? (() => Date.now() / 1000);
    this.opts = { ...DEFAULTS, ...options, now };
    this.requestSuggest = debounce(
      (text: string, cursor: number) => this.dispatchSuggest(text, cursor),
      this.opts.debounceMs,
    );
  }

  private emit(): void {
    this.onChange(this.state);
  }

  async start(imageId: string): Promise<void> {
    const info = await this.api.createSession(imageId);
    this.state.sessionId = info.session_id;
    this.state.imageId = imageId;
    this.state.imageUrl = this.api.imageUrl(imageId);
    // the pristine empty box is not an edit; the first stored snapshot is
    // the first text the user actually produces
    this.lastPostedText = "";
    this.snapshotTimer = setInterval(() => void this.snapshotTick(), this.opts.snapshotMs);
    this.emit();
    this.dispatchSuggest(this.state.text, this.state.cursor);
  }

  dispose(): void {
    this.requestSuggest.cancel();
    if (this.retryTimer !== undefined) clearTimeout(this.retryTimer);
    if (this.snapshotTimer !== undefined) clearInterval(this.snapshotTimer);
  }

  /** Input listener: every text or caret change lands here. */
  onEdit(text: string, cursor: number): void {
    if (this.state.submitted || this.state.sessionId === null) return;
    this.clearRetry();
    this.state.text = text;
    this.state.cursor = cursor;
    this.state.suggestions = []; // stale list must not outlive the edit
    this.emit();
    this.requestSuggest(text, cursor);
  }

  /** The user picked the dropdown entry at `rank` (1-based). */
  async onSelect(rank: number): Promise<void> {
    if (this.state.submitted) return;
    const candidate = this.state.suggestions.find((c) => c.rank === rank);
    if (candidate === undefined || this.state.sessionId === null) return;
    this.state.text = candidate.text;
    this.state.cursor = candidate.text.length; // caret to the end
    this.state.suggestions = [];
    // the server stores the selection's resulting text as a snapshot, so
    // the cadence timer must not post it again
    this.lastPostedText = candidate.text;
    this.emit();
    try {
      await this.api.selection(this.state.sessionId, rank, candidate.text, this.opts.now());
    } catch (err) {
      this.state.error = `selection not recorded: ${String(err)}`;
      this.emit();
    }
  }

  /** Submit the current text; empty submissions are refused. */
  async onSubmit(): Promise<SessionStats | null> {
    if (this.state.submitted || this.state.sessionId === null) return null;
    if (this.state.text.length === 0) {
      this.state.error = "cannot submit an empty annotation";
      this.emit();
      return null;
    }
    this.requestSuggest.cancel();
    this.clearRetry();
    if (this.snapshotTimer !== undefined) clearInterval(this.snapshotTimer);
    const stats = await this.api.submit(
      this.state.sessionId,
      this.state.text,
      this.opts.now(),
    );
    this.state.submitted = true;
    this.state.stats = stats;
    this.state.suggestions = [];
    this.state.error = null;
    this.emit();
    return stats;
  }

  // -- suggest pipeline ------------------------------------------------

  private dispatchSuggest(text: string, cursor: number): void {
    if (this.state.submitted || this.state.sessionId === null) return;
    if (this.inFlight) {
      this.queued = { text, cursor }; // latest wins
      return;
    }
    this.inFlight = true;
    this.state.pending = true;
    this.emit();
    this.api
      .suggest(this.state.sessionId, text, cursor)
      .then((candidates) => {
        this.retryAttempts = 0;
        this.settleSuggest(text, cursor, candidates);
      })
      .catch(() => {
        this.settleSuggest(text, cursor, null);
      });
  }

  private settleSuggest(text: string, cursor: number, candidates: Candidate[] | null): void {
    this.inFlight = false;
    this.state.pending = false;
    const current = text === this.state.text && cursor === this.state.cursor;
    if (candidates !== null && current && !this.state.submitted) {
      this.state.suggestions = candidates;
    }
    this.emit();
    if (this.queued !== null) {
      const next = this.queued;
      this.queued = null;
      this.dispatchSuggest(next.text, next.cursor);
      return;
    }
    if (candidates === null && current && !this.state.submitted) {
      // transient failure for the text still on screen: retry with backoff
      const delay = Math.min(
        this.opts.retryBaseMs * 2 ** this.retryAttempts,
        this.opts.retryMaxMs,
      );
      this.retryAttempts += 1;
      this.retryTimer = setTimeout(() => {
        this.retryTimer = undefined;
        if (text === this.state.text && cursor === this.state.cursor) {
          this.dispatchSuggest(text, cursor);
        }
      }, delay);
    }
  }

  private clearRetry(): void {
    if (this.retryTimer !== undefined) {
      clearTimeout(this.retryTimer);
      this.retryTimer = undefined;
    }
    this.retryAttempts = 0;
  }

  // -- snapshot cadence --------------------------------------------------

  private async snapshotTick(): Promise<void> {
    if (
      this.state.submitted ||
      this.state.sessionId === null ||
      this.postingSnapshot ||
      this.state.text === this.lastPostedText
    ) {
      return;
    }
    const text = this.state.text;
    this.postingSnapshot = true;
    try {
      await this.api.snapshot(this.state.sessionId, text, this.state.cursor, this.opts.now());
      this.lastPostedText = text;
    } catch {
      // dropped tick; the next one retries while the text still differs
    } finally {
      this.postingSnapshot = false;
    }
  }
}
