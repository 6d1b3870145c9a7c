/** DOM bootstrap: render the current page into #app and translate clicks
 * and input changes into documented API calls. All decisions live in
 * store/views; this file is wiring only. */

import { ApiClient } from "./api.js";
import { SessionStore } from "./store.js";
import type { EditOp, EventsMapping, SchemaInfo } from "./types.js";
import { renderConflictPrompt, renderNav, renderPage } from "./views.js";

const api = new ApiClient((url, init) => fetch(url, init));
const store = new SessionStore(api);
let schema: SchemaInfo | null = null;
let sessionState = { state: "created", error: null as string | null };

const app = document.getElementById("app")!;

function parseEntitySpec(text: string, previous: Record<string, string>): Record<string, string | null> {
  const edits: Record<string, string | null> = {};
  const seen = new Set<string>();
  for (const token of text.trim().split(/\s+/).filter(Boolean)) {
    const dash = token.indexOf("-");
    if (dash <= 0) continue;
    const key = token.slice(0, dash);
    edits[key] = token.slice(dash + 1);
    seen.add(key);
  }
  for (const key of Object.keys(previous)) {
    if (!seen.has(key)) edits[key] = null;
  }
  return edits;
}

function render(): void {
  const token = store.token;
  const urls = {
    download: token ? api.downloadUrl(token) : "#",
    thumbnail: (objectId: number) => (token ? api.thumbnailUrl(token, objectId) : "#"),
  };
  app.innerHTML =
    renderNav(store.pageIndex, store.items) +
    renderPage(store.page, store.doc, schema, store.items, sessionState, urls, store.lastError) +
    (store.conflict ? renderConflictPrompt() : "");
}

async function pollUntil(target: string): Promise<void> {
  if (!store.token) return;
  for (;;) {
    const status = await api.status(store.token);
    sessionState = { state: status.state, error: status.error };
    render();
    if (status.state === target || status.state === "failed") return;
    await new Promise((resolve) => setTimeout(resolve, 500));
  }
}

async function applyAndRender(edits: EditOp[]): Promise<void> {
  await store.apply(edits);
  render();
}

function collectMapping(): EventsMapping {
  const column = (name: string): string | null => {
    const select = app.querySelector<HTMLSelectElement>(
      `select[data-action="events-column"][data-column="${name}"]`,
    );
    return select?.value || null;
  };
  const unit = (name: string): "seconds" | "milliseconds" => {
    const select = app.querySelector<HTMLSelectElement>(
      `select[data-action="events-unit"][data-column="${name}"]`,
    );
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

async function onAction(action: string, element: HTMLElement): Promise<void> {
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
        document.getElementById("upload-input") as HTMLInputElement | null,
        document.getElementById("upload-archive") as HTMLInputElement | null,
      ];
      const form = new FormData();
      let any = false;
      for (const input of inputs) {
        for (const file of input?.files ?? []) {
          form.append("files", file, (file as any).webkitRelativePath || file.name);
          any = true;
        }
      }
      if (!any || !store.token) break;
      await api.upload(store.token, form);
      sessionState.state = "uploading";
      break;
    }
    case "analyze":
      if (!store.token) break;
      await api.analyze(store.token);
      await pollUntil("editable");
      await store.refresh();
      break;
    case "remap":
      await applyAndRender([
        { op: "remapSubjects", strategy: element.dataset.strategy as any },
      ]);
      break;
    case "apply-mapping":
      await applyAndRender([{ op: "eventsMapping", mapping: collectMapping() }]);
      break;
    case "upload-events": {
      const input = document.getElementById("events-input") as HTMLInputElement | null;
      if (!input?.files?.length || !store.token) break;
      const form = new FormData();
      for (const file of input.files) form.append("files", file);
      await api.uploadEvents(store.token, form);
      await store.refresh();
      break;
    }
    case "exclude-subject": {
      if (!doc) break;
      const subjectIdx = Number(element.dataset.subject);
      const edits: EditOp[] = doc.objects
        .filter((o) => o.subjectIdx === subjectIdx)
        .map((o) => ({ op: "object", objectId: o.objectId, exclude: true }));
      await applyAndRender(edits);
      break;
    }
    case "save-description": {
      const fields: Record<string, unknown> = {};
      app.querySelectorAll<HTMLInputElement>("input[data-field]").forEach((input) => {
        const name = input.dataset.field!;
        if (name === "Authors") {
          fields[name] = input.value ? input.value.split(",").map((s) => s.trim()) : null;
        } else {
          fields[name] = input.value || null;
        }
      });
      await applyAndRender([{ op: "datasetDescription", fields }]);
      break;
    }
    case "save-participants": {
      const columnsInput = app.querySelector<HTMLInputElement>(
        'input[data-action="participants-columns"]',
      );
      const columns = columnsInput
        ? columnsInput.value.split(",").map((s) => s.trim()).filter(Boolean)
        : undefined;
      const values: Record<string, Record<string, string>> = {};
      app.querySelectorAll<HTMLInputElement>('input[data-action="phenotype"]').forEach(
        (input) => {
          const label = input.dataset.label!;
          values[label] = values[label] ?? {};
          if (input.value) values[label][input.dataset.column!] = input.value;
        },
      );
      await applyAndRender([{ op: "participants", columns, values }]);
      break;
    }
    case "finalize":
      if (!store.token) break;
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

async function onChange(element: HTMLElement): Promise<void> {
  const doc = store.doc;
  const action = element.dataset.action;
  if (!doc || !action) return;
  if (action === "series-datatype" || action === "series-suffix") {
    const seriesId = Number(element.dataset.series);
    const series = doc.series.find((s) => s.seriesId === seriesId)!;
    const value = (element as HTMLSelectElement).value;
    const edit: EditOp =
      action === "series-datatype"
        ? {
            op: "series",
            seriesId,
            datatype: value,
            suffix: value === "exclude" ? "" : (schema?.datatypes[value]?.[0] ?? series.suffix),
          }
        : { op: "series", seriesId, suffix: value };
    await applyAndRender([edit]);
  } else if (action === "series-entities") {
    const seriesId = Number(element.dataset.series);
    const series = doc.series.find((s) => s.seriesId === seriesId)!;
    const entities = parseEntitySpec((element as HTMLInputElement).value, series.entities);
    await applyAndRender([{ op: "series", seriesId, entities }]);
  } else if (action === "override") {
    const objectId = Number(element.dataset.object);
    const obj = doc.objects.find((o) => o.objectId === objectId)!;
    const overrides = parseEntitySpec((element as HTMLInputElement).value, obj.entityOverrides);
    await applyAndRender([{ op: "object", objectId, entityOverrides: overrides }]);
  } else if (action === "exclude") {
    const objectId = Number(element.dataset.object);
    await applyAndRender([
      { op: "object", objectId, exclude: (element as HTMLInputElement).checked },
    ]);
  } else if (action === "subject-label") {
    await applyAndRender([
      {
        op: "subjectLabel",
        index: Number(element.dataset.index),
        label: (element as HTMLInputElement).value,
      },
    ]);
  } else if (action === "relink") {
    const objectId = Number(element.dataset.object);
    const labels: Record<string, string | null> = {};
    app
      .querySelectorAll<HTMLInputElement>(
        `input[data-action="relink"][data-object="${objectId}"]`,
      )
      .forEach((chip) => {
        labels[chip.dataset.key!] = chip.value || null;
      });
    await applyAndRender([{ op: "linkEvents", objectId, labels }]);
  }
}

app.addEventListener("click", (event) => {
  const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
  if (!target || target.matches("input,select")) return;
  void onAction(target.dataset.action!, target);
});

app.addEventListener("change", (event) => {
  const target = event.target as HTMLElement;
  if (target.dataset.action) void onChange(target);
});

store.subscribe(render);

(async () => {
  schema = await api.schema();
  await store.start();
  render();
})();
