/** Client session state: the cached document, current validation items,
 * page position, and the edit loop.
 *
 * Every rule lives server-side; this store only issues documented PATCH
 * calls and re-fetches the document after each success. A version conflict
 * keeps the rejected edits so the user can reload and reapply.
 */

import type { PatchResult, SessionApi } from "./api.js";
import { canAdvance, PAGES, Page } from "./gating.js";
import type { EditOp, ProposalDocument, ValidationItem } from "./types.js";

export interface Conflict {
  currentVersion: number;
  pendingEdits: EditOp[];
}

export class SessionStore {
  token: string | null = null;
  doc: ProposalDocument | null = null;
  items: ValidationItem[] = [];
  pageIndex = 0;
  conflict: Conflict | null = null;
  lastError: string | null = null;
  listeners: Array<() => void> = [];

  constructor(public api: SessionApi) {}

  subscribe(listener: () => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener();
  }

  get page(): Page {
    return PAGES[this.pageIndex];
  }

  async start(): Promise<string> {
    const created = await this.api.createSession();
    this.token = created.token;
    this.emit();
    return created.token;
  }

  async refresh(): Promise<void> {
    if (!this.token) return;
    this.doc = await this.api.document(this.token);
    this.items = (await this.api.validation(this.token)).items;
    this.emit();
  }

  /** Apply edit ops; returns the patch outcome. On success the document is
   * re-fetched (thin client: never mutate locally); on conflict the edits
   * are parked for reload-and-reapply; on invalid the error is surfaced. */
  async apply(edits: EditOp[]): Promise<PatchResult["kind"]> {
    if (!this.token || !this.doc) throw new Error("no active document");
    this.lastError = null;
    const result = await this.api.patch(this.token, this.doc.version, edits);
    if (result.kind === "ok") {
      await this.refresh();
    } else if (result.kind === "conflict") {
      this.conflict = { currentVersion: result.currentVersion, pendingEdits: edits };
      this.doc = result.document; // show the winning state immediately
      this.emit();
    } else {
      this.lastError = result.message;
      this.emit();
    }
    return result.kind;
  }

  /** Conflict prompt accepted: retry the parked edits against the fresh
   * version. */
  async reapplyAfterConflict(): Promise<PatchResult["kind"]> {
    if (!this.conflict) throw new Error("no conflict to reapply");
    const edits = this.conflict.pendingEdits;
    this.conflict = null;
    await this.refresh();
    return this.apply(edits);
  }

  dismissConflict(): void {
    this.conflict = null;
    this.emit();
  }

  canGoNext(): boolean {
    return canAdvance(this.page, this.items);
  }

  next(): boolean {
    if (this.pageIndex >= PAGES.length - 1 || !this.canGoNext()) return false;
    this.pageIndex += 1;
    this.emit();
    return true;
  }

  previous(): boolean {
    if (this.pageIndex === 0) return false;
    this.pageIndex -= 1;
    this.emit();
    return true;
  }
}
