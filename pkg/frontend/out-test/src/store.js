/** Client session state: the cached document, current validation items,
 * page position, and the edit loop.
 *
 * Every rule lives server-side; this store only issues documented PATCH
 * calls and re-fetches the document after each success. A version conflict
 * keeps the rejected edits so the user can reload and reapply.
 */
import { canAdvance, PAGES } from "./gating.js";
export class SessionStore {
    constructor(api) {
        this.api = api;
        this.token = null;
        this.doc = null;
        this.items = [];
        this.pageIndex = 0;
        this.conflict = null;
        this.lastError = null;
        this.listeners = [];
    }
    subscribe(listener) {
        this.listeners.push(listener);
    }
    emit() {
        for (const listener of this.listeners)
            listener();
    }
    get page() {
        return PAGES[this.pageIndex];
    }
    async start() {
        const created = await this.api.createSession();
        this.token = created.token;
        this.emit();
        return created.token;
    }
    async refresh() {
        if (!this.token)
            return;
        this.doc = await this.api.document(this.token);
        this.items = (await this.api.validation(this.token)).items;
        this.emit();
    }
    /** Apply edit ops; returns the patch outcome. On success the document is
     * re-fetched (thin client: never mutate locally); on conflict the edits
     * are parked for reload-and-reapply; on invalid the error is surfaced. */
    async apply(edits) {
        if (!this.token || !this.doc)
            throw new Error("no active document");
        this.lastError = null;
        const result = await this.api.patch(this.token, this.doc.version, edits);
        if (result.kind === "ok") {
            await this.refresh();
        }
        else if (result.kind === "conflict") {
            this.conflict = { currentVersion: result.currentVersion, pendingEdits: edits };
            this.doc = result.document; // show the winning state immediately
            this.emit();
        }
        else {
            this.lastError = result.message;
            this.emit();
        }
        return result.kind;
    }
    /** Conflict prompt accepted: retry the parked edits against the fresh
     * version. */
    async reapplyAfterConflict() {
        if (!this.conflict)
            throw new Error("no conflict to reapply");
        const edits = this.conflict.pendingEdits;
        this.conflict = null;
        await this.refresh();
        return this.apply(edits);
    }
    dismissConflict() {
        this.conflict = null;
        this.emit();
    }
    canGoNext() {
        return canAdvance(this.page, this.items);
    }
    next() {
        if (this.pageIndex >= PAGES.length - 1 || !this.canGoNext())
            return false;
        this.pageIndex += 1;
        this.emit();
        return true;
    }
    previous() {
        if (this.pageIndex === 0)
            return false;
        this.pageIndex -= 1;
        this.emit();
        return true;
    }
}
