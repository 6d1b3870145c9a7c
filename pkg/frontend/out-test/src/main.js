/** DOM bootstrap: render the current page into #app and translate clicks
 * and input changes into documented API calls. All decisions live in
 * store/views; this file is wiring only. */
import { ApiClient } from "./api.js";
import { SessionStore } from "./store.js";
import { renderConflictPrompt, renderNav, renderPage } from "./views.js";
const api = new ApiClient((url, init) => fetch(url, init));
const store = new SessionStore(api);
let schema = null;
let sessionState = { state: "created", error: null };
const app = document.getElementById("app");
function parseEntitySpec(text, previous) {
    const edits = {};
    const seen = new Set();
    for (const token of text.trim().split(/\s+/).filter(Boolean)) {
        const dash = token.indexOf("-");
        if (dash <= 0)
            continue;
        const key = token.slice(0, dash);
        edits[key] = token.slice(dash + 1);
        seen.add(key);
    }
    for (const key of Object.keys(previous)) {
        if (!seen.has(key))
            edits[key] = null;
    }
    return edits;
}
function render() {
    const token = store.token;
    const urls = {
        download: token ? api.downloadUrl(token) : "#",
        thumbnail: (objectId) => (token ? api.thumbnailUrl(token, objectId) : "#"),
    };
    app.innerHTML =
        renderNav(store.pageIndex, store.items) +
            renderPage(store.page, store.doc, schema, store.items, sessionState, urls, store.lastError) +
            (store.conflict ? renderConflictPrompt() : "");
}
async function pollUntil(target) {
    if (!store.token)
        return;
    for (;;) {
        const status = await api.status(store.token);
        sessionState = { state: status.state, error: status.error };
        render();
        if (status.state === target || status.state === "failed")
            return;
        await new Promise((resolve) => setTimeout(resolve, 500));
    }
}
async function applyAndRender(edits) {
    await store.apply(edits);
    render();
}
function collectMapping() {
    const column = (name) => {
        const select = app.querySelector(`select[data-action="events-column"][data-column="${name}"]`);
        return select?.value || null;
    };
    const unit = (name) => {
        const select = app.querySelector(`select[data-action="events-unit"][data-column="${name}"]`);
        return select?.value === "milliseconds" ? "milliseconds" : "seconds";
    };
    return {
        onsetColumn: column("onset") ?? "",
        onsetUnit: unit("onset"),
        durationColumn: column("duration"),
        durationValue: column("duration") ? null : "0",
        durationUnit: unit("duration"),
        trialTypeColumn: column("trial_type"),
        responseTimeColumn: column("response_time"),
        responseTimeUnit: unit("response_time"),
        passthrough: [],
        entityColumns: {},
    };
}
async function onAction(action, element) {
    const doc = store.doc;
    switch (action) {
        case "prev":
            store.previous();
            break;
        case "next":
            store.next();
            break;
        case "upload": {
            const inputs = [
                document.getElementById("upload-input"),
                document.getElementById("upload-archive"),
            ];
            const form = new FormData();
            let any = false;
            for (const input of inputs) {
                for (const file of input?.files ?? []) {
                    form.append("files", file, file.webkitRelativePath || file.name);
                    any = true;
                }
            }
            if (!any || !store.token)
                break;
            await api.upload(store.token, form);
            sessionState.state = "uploading";
            break;
        }
        case "analyze":
            if (!store.token)
                break;
            await api.analyze(store.token);
            await pollUntil("editable");
            await store.refresh();
            break;
        case "remap":
            await applyAndRender([
                { op: "remapSubjects", strategy: element.dataset.strategy },
            ]);
            break;
        case "apply-mapping":
            await applyAndRender([{ op: "eventsMapping", mapping: collectMapping() }]);
            break;
        case "upload-events": {
            const input = document.getElementById("events-input");
            if (!input?.files?.length || !store.token)
                break;
            const form = new FormData();
            for (const file of input.files)
                form.append("files", file);
            await api.uploadEvents(store.token, form);
            await store.refresh();
            break;
        }
        case "exclude-subject": {
            if (!doc)
                break;
            const subjectIdx = Number(element.dataset.subject);
            const edits = doc.objects
                .filter((o) => o.subjectIdx === subjectIdx)
                .map((o) => ({ op: "object", objectId: o.objectId, exclude: true }));
            await applyAndRender(edits);
            break;
        }
        case "save-description": {
            const fields = {};
            app.querySelectorAll("input[data-field]").forEach((input) => {
                const name = input.dataset.field;
                if (name === "Authors") {
                    fields[name] = input.value ? input.value.split(",").map((s) => s.trim()) : null;
                }
                else {
                    fields[name] = input.value || null;
                }
            });
            await applyAndRender([{ op: "datasetDescription", fields }]);
            break;
        }
        case "save-participants": {
            const columnsInput = app.querySelector('input[data-action="participants-columns"]');
            const columns = columnsInput
                ? columnsInput.value.split(",").map((s) => s.trim()).filter(Boolean)
                : undefined;
            const values = {};
            app.querySelectorAll('input[data-action="phenotype"]').forEach((input) => {
                const label = input.dataset.label;
                values[label] = values[label] ?? {};
                if (input.value)
                    values[label][input.dataset.column] = input.value;
            });
            await applyAndRender([{ op: "participants", columns, values }]);
            break;
        }
        case "finalize":
            if (!store.token)
                break;
            await api.finalize(store.token);
            await pollUntil("done");
            break;
        case "conflict-reapply":
            await store.reapplyAfterConflict();
            render();
            break;
        case "conflict-dismiss":
            store.dismissConflict();
            await store.refresh();
            break;
    }
}
async function onChange(element) {
    const doc = store.doc;
    const action = element.dataset.action;
    if (!doc || !action)
        return;
    if (action === "series-datatype" || action === "series-suffix") {
        const seriesId = Number(element.dataset.series);
        const series = doc.series.find((s) => s.seriesId === seriesId);
        const value = element.value;
        const edit = action === "series-datatype"
            ? {
                op: "series",
                seriesId,
                datatype: value,
                suffix: value === "exclude" ? "" : (schema?.datatypes[value]?.[0] ?? series.suffix),
            }
            : { op: "series", seriesId, suffix: value };
        await applyAndRender([edit]);
    }
    else if (action === "series-entities") {
        const seriesId = Number(element.dataset.series);
        const series = doc.series.find((s) => s.seriesId === seriesId);
        const entities = parseEntitySpec(element.value, series.entities);
        await applyAndRender([{ op: "series", seriesId, entities }]);
    }
    else if (action === "override") {
        const objectId = Number(element.dataset.object);
        const obj = doc.objects.find((o) => o.objectId === objectId);
        const overrides = parseEntitySpec(element.value, obj.entityOverrides);
        await applyAndRender([{ op: "object", objectId, entityOverrides: overrides }]);
    }
    else if (action === "exclude") {
        const objectId = Number(element.dataset.object);
        await applyAndRender([
            { op: "object", objectId, exclude: element.checked },
        ]);
    }
    else if (action === "subject-label") {
        await applyAndRender([
            {
                op: "subjectLabel",
                index: Number(element.dataset.index),
                label: element.value,
            },
        ]);
    }
    else if (action === "relink") {
        const objectId = Number(element.dataset.object);
        const labels = {};
        app
            .querySelectorAll(`input[data-action="relink"][data-object="${objectId}"]`)
            .forEach((chip) => {
            labels[chip.dataset.key] = chip.value || null;
        });
        await applyAndRender([{ op: "linkEvents", objectId, labels }]);
    }
}
app.addEventListener("click", (event) => {
    const target = event.target.closest("[data-action]");
    if (!target || target.matches("input,select"))
        return;
    void onAction(target.dataset.action, target);
});
app.addEventListener("change", (event) => {
    const target = event.target;
    if (target.dataset.action)
        void onChange(target);
});
store.subscribe(render);
(async () => {
    schema = await api.schema();
    await store.start();
    render();
})();
