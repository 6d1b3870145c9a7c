/** Thin typed client over the session API. Every call the UI can make is
 * one of the documented endpoints; `RECORDED_CALLS` is asserted against in
 * the contract tests. */

import type {
  EditOp,
  ProposalDocument,
  SchemaInfo,
  SessionStatus,
  ValidationItem,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export type PatchResult =
  | { kind: "ok"; version: number }
  | { kind: "conflict"; currentVersion: number; document: ProposalDocument }
  | { kind: "invalid"; message: string; item: ValidationItem | null };

/** What the session store needs from a server; ApiClient satisfies it and
 * tests substitute an in-memory double. */
export interface SessionApi {
  createSession(): Promise<{ token: string; state: string }>;
  document(token: string): Promise<ProposalDocument>;
  validation(token: string): Promise<{ items: ValidationItem[] }>;
  patch(token: string, expectedVersion: number, edits: EditOp[]): Promise<PatchResult>;
}

export const RECORDED_CALLS: Array<{ method: string; path: RegExp }> = [
  { method: "GET", path: /^\/schema$/ },
  { method: "POST", path: /^\/sessions$/ },
  { method: "GET", path: /^\/sessions\/[^/]+\/status$/ },
  { method: "POST", path: /^\/sessions\/[^/]+\/upload$/ },
  { method: "POST", path: /^\/sessions\/[^/]+\/analyze$/ },
  { method: "GET", path: /^\/sessions\/[^/]+\/document$/ },
  { method: "PATCH", path: /^\/sessions\/[^/]+\/document$/ },
  { method: "GET", path: /^\/sessions\/[^/]+\/validation$/ },
  { method: "POST", path: /^\/sessions\/[^/]+\/events$/ },
  { method: "POST", path: /^\/sessions\/[^/]+\/finalize$/ },
  { method: "GET", path: /^\/sessions\/[^/]+\/download$/ },
  { method: "GET", path: /^\/sessions\/[^/]+\/objects\/\d+\/thumbnail$/ },
];

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function expectJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = await response.json();
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ApiClient {
  constructor(private fetchImpl: FetchLike, private base = "") {}

  private url(path: string): string {
    return this.base + path;
  }

  async schema(): Promise<SchemaInfo> {
    return expectJson(await this.fetchImpl(this.url("/schema")));
  }

  async createSession(): Promise<{ token: string; state: string }> {
    return expectJson(await this.fetchImpl(this.url("/sessions"), { method: "POST" }));
  }

  async status(token: string): Promise<SessionStatus> {
    return expectJson(await this.fetchImpl(this.url(`/sessions/${token}/status`)));
  }

  async upload(token: string, files: FormData): Promise<void> {
    await expectJson(
      await this.fetchImpl(this.url(`/sessions/${token}/upload`), {
        method: "POST",
        body: files,
      }),
    );
  }

  async analyze(token: string): Promise<void> {
    await expectJson(
      await this.fetchImpl(this.url(`/sessions/${token}/analyze`), { method: "POST" }),
    );
  }

  async document(token: string): Promise<ProposalDocument> {
    return expectJson(await this.fetchImpl(this.url(`/sessions/${token}/document`)));
  }

  async validation(token: string): Promise<{ items: ValidationItem[] }> {
    return expectJson(await this.fetchImpl(this.url(`/sessions/${token}/validation`)));
  }

  async patch(token: string, expectedVersion: number, edits: EditOp[]): Promise<PatchResult> {
    const response = await this.fetchImpl(this.url(`/sessions/${token}/document`), {
      method: "PATCH",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ expectedVersion, edits }),
    });
    if (response.status === 409) {
      const body = await response.json();
      return {
        kind: "conflict",
        currentVersion: body.currentVersion,
        document: JSON.parse(body.document) as ProposalDocument,
      };
    }
    if (response.status === 422) {
      const body = await response.json();
      return {
        kind: "invalid",
        message: body.detail?.message ?? "invalid edit",
        item: body.detail?.item ?? null,
      };
    }
    const body = await expectJson<{ version: number }>(response);
    return { kind: "ok", version: body.version };
  }

  async uploadEvents(token: string, files: FormData): Promise<{ version: number }> {
    return expectJson(
      await this.fetchImpl(this.url(`/sessions/${token}/events`), {
        method: "POST",
        body: files,
      }),
    );
  }

  async finalize(token: string): Promise<void> {
    await expectJson(
      await this.fetchImpl(this.url(`/sessions/${token}/finalize`), { method: "POST" }),
    );
  }

  downloadUrl(token: string): string {
    return this.url(`/sessions/${token}/download`);
  }

  thumbnailUrl(token: string, objectId: number): string {
    return this.url(`/sessions/${token}/objects/${objectId}/thumbnail`);
  }
}
