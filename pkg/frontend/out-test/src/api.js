/** Thin typed client over the session API. Every call the UI can make is
 * one of the documented endpoints; `RECORDED_CALLS` is asserted against in
 * the contract tests. */
export const RECORDED_CALLS = [
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
    constructor(status, message) {
        super(message);
        this.status = status;
    }
}
async function expectJson(response) {
    if (!response.ok) {
        let detail = response.statusText;
        try {
            const body = await response.json();
            detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
        }
        catch {
            /* non-JSON error body */
        }
        throw new ApiError(response.status, detail);
    }
    return (await response.json());
}
export class ApiClient {
    constructor(fetchImpl, base = "") {
        this.fetchImpl = fetchImpl;
        this.base = base;
    }
    url(path) {
        return this.base + path;
    }
    async schema() {
        return expectJson(await this.fetchImpl(this.url("/schema")));
    }
    async createSession() {
        return expectJson(await this.fetchImpl(this.url("/sessions"), { method: "POST" }));
    }
    async status(token) {
        return expectJson(await this.fetchImpl(this.url(`/sessions/${token}/status`)));
    }
    async upload(token, files) {
        await expectJson(await this.fetchImpl(this.url(`/sessions/${token}/upload`), {
            method: "POST",
            body: files,
        }));
    }
    async analyze(token) {
        await expectJson(await this.fetchImpl(this.url(`/sessions/${token}/analyze`), { method: "POST" }));
    }
    async document(token) {
        return expectJson(await this.fetchImpl(this.url(`/sessions/${token}/document`)));
    }
    async validation(token) {
        return expectJson(await this.fetchImpl(this.url(`/sessions/${token}/validation`)));
    }
    async patch(token, expectedVersion, edits) {
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
                document: JSON.parse(body.document),
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
        const body = await expectJson(response);
        return { kind: "ok", version: body.version };
    }
    async uploadEvents(token, files) {
        return expectJson(await this.fetchImpl(this.url(`/sessions/${token}/events`), {
            method: "POST",
            body: files,
        }));
    }
    async finalize(token) {
        await expectJson(await this.fetchImpl(this.url(`/sessions/${token}/finalize`), { method: "POST" }));
    }
    downloadUrl(token) {
        return this.url(`/sessions/${token}/download`);
    }
    thumbnailUrl(token, objectId) {
        return this.url(`/sessions/${token}/objects/${objectId}/thumbnail`);
    }
}
