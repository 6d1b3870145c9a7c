/** Page renderers: pure functions from state to HTML strings.
 *
 * All interactive elements carry data-action attributes; main.ts owns the
 * actual DOM wiring. Keeping these pure keeps every page behavior testable
 * without a browser.
 */

import { groupBySeverity, hasTaskBold, itemsForPage, Page, PAGES } from "./gating.js";
import { previewCell } from "./convert.js";
import type {
  ObjectDescriptor,
  ProposalDocument,
  SchemaInfo,
  ValidationItem,
} from "./types.js";
import { effectiveEntities, seriesOf } from "./types.js";

export function esc(text: unknown): string {
  return String(text)
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

function entityChips(entities: Record<string, string>): string {
  const parts = Object.entries(entities)
    .map(([k, v]) => `<span class="chip">${esc(k)}-${esc(v)}</span>`)
    .join(" ");
  return parts || '<span class="chip chip-empty">no entities</span>';
}

function itemLine(item: ValidationItem): string {
  const cls = item.severity === "error" ? "item-error" : "item-warning";
  return `<li class="${cls}" data-code="${esc(item.code)}">${esc(item.message)}</li>`;
}

export function renderValidationPanel(items: ValidationItem[]): string {
  const { errors, warnings } = groupBySeverity(items);
  if (!errors.length && !warnings.length) {
    return '<div class="panel panel-clean">No validation items.</div>';
  }
  const blocks: string[] = [];
  if (errors.length) {
    blocks.push(
      `<div class="panel panel-errors"><h3>Validation - ERROR</h3><ul>` +
        errors.map(itemLine).join("") +
        "</ul></div>",
    );
  }
  if (warnings.length) {
    blocks.push(
      `<div class="panel panel-warnings"><h3>Validation - WARNING</h3><ul>` +
        warnings.map(itemLine).join("") +
        "</ul></div>",
    );
  }
  return blocks.join("");
}

export function renderNav(pageIndex: number, items: ValidationItem[]): string {
  const page = PAGES[pageIndex];
  const blocked = itemsForPage(page, items).some((i) => i.severity === "error");
  const tabs = PAGES.map((name, i) => {
    const classes = ["tab"];
    if (i === pageIndex) classes.push("tab-active");
    return `<span class="${classes.join(" ")}">${esc(name)}</span>`;
  }).join("");
  const nextAttrs = blocked || pageIndex === PAGES.length - 1 ? "disabled" : "";
  return (
    `<nav>${tabs}` +
    `<button data-action="prev" ${pageIndex === 0 ? "disabled" : ""}>Back</button>` +
    `<button data-action="next" ${nextAttrs}>Next</button>` +
    (blocked
      ? '<span class="nav-blocked">Resolve the errors on this page to continue.</span>'
      : "") +
    `</nav>`
  );
}

// ---------------------------------------------------------------------------
// Pages
// ---------------------------------------------------------------------------

export function renderUpload(state: { state: string; error: string | null }): string {
  return `
<section class="page page-upload">
  <h2>Upload</h2>
  <p>Drop a directory or archive of imaging data. Analysis proposes the
     BIDS mapping; the following pages let you revise it.</p>
  <input type="file" id="upload-input" multiple webkitdirectory />
  <input type="file" id="upload-archive" />
  <button data-action="upload">Upload</button>
  <button data-action="analyze">Analyze</button>
  <span class="status">state: ${esc(state.state)}</span>
  ${state.error ? `<div class="panel panel-errors">${esc(state.error)}</div>` : ""}
</section>`;
}

export function renderDatasetDescription(doc: ProposalDocument): string {
  const fields = ["Name", "Authors", "Acknowledgements", "Funding", "License",
                  "HowToAcknowledge"];
  const rows = fields
    .map((field) => {
      const value = doc.datasetDescription[field];
      const text = Array.isArray(value) ? value.join(", ") : (value ?? "");
      return `<label>${esc(field)}
        <input data-field="${esc(field)}" value="${esc(text)}" /></label>`;
    })
    .join("");
  return `
<section class="page page-description">
  <h2>Dataset Description</h2>
  <p>BIDS version: <code>${esc(doc.datasetDescription["BIDSVersion"] ?? "")}</code>
     (pre-filled)</p>
  ${rows}
  <button data-action="save-description">Save</button>
</section>`;
}

export function renderSubjects(doc: ProposalDocument): string {
  const rows = doc.subjects
    .map((subject, index) => {
      const sessions = subject.sessions.map((s) => esc(s.label)).join(", ") || "-";
      return `<tr>
        <td><input data-action="subject-label" data-index="${index}"
             value="${esc(subject.label)}" /></td>
        <td>${esc(subject.source)}</td>
        <td>${sessions}</td>
      </tr>`;
    })
    .join("");
  return `
<section class="page page-subjects">
  <h2>Subjects / Sessions</h2>
  <table>
    <thead><tr><th>subject</th><th>source</th><th>sessions</th></tr></thead>
    <tbody>${rows}</tbody>
  </table>
  <div class="remap">
    Reset subject mapping:
    <button data-action="remap" data-strategy="PatientName">PatientName</button>
    <button data-action="remap" data-strategy="PatientID">PatientID</button>
    <button data-action="remap" data-strategy="Numerical">Numerical</button>
  </div>
</section>`;
}

function seriesMemberRows(doc: ProposalDocument, seriesId: number): string {
  return doc.objects
    .filter((o) => o.seriesId === seriesId)
    .map((o) => {
      const entities = effectiveEntities(doc, o);
      return `<tr class="member-row" data-object="${o.objectId}">
        <td>${esc(o.paths[0])}</td>
        <td>${entityChips(entities)}</td>
      </tr>`;
    })
    .join("");
}

export function renderSeriesMapping(
  doc: ProposalDocument,
  schema: SchemaInfo,
  items: ValidationItem[],
  lastError: string | null,
): string {
  const datatypes = [...Object.keys(schema.datatypes), "exclude"];
  const blocks = doc.series
    .filter((s) => !(s.datatype === "func" && s.suffix === "events"))
    .map((series) => {
      const suffixes = schema.datatypes[series.datatype] ?? [];
      const datatypeOptions = datatypes
        .map((d) =>
          `<option value="${esc(d)}" ${d === series.datatype ? "selected" : ""}>${esc(d)}</option>`)
        .join("");
      const suffixOptions = suffixes
        .map((s) =>
          `<option value="${esc(s)}" ${s === series.suffix ? "selected" : ""}>${esc(s)}</option>`)
        .join("");
      const seriesErrors = items.filter(
        (i) => i.severity === "error" && i.target.seriesId === series.seriesId,
      );
      const inline = seriesErrors.length
        ? `<div class="inline-error">${seriesErrors.map((i) => esc(i.message)).join("<br>")}</div>`
        : "";
      return `
  <article class="series" data-series="${series.seriesId}">
    <header>
      <strong>#${series.seriesId}</strong>
      <code>${esc(series.groupingKey.seriesDescription)}</code>
      <span class="heuristic">[${esc(series.heuristic)}]</span>
    </header>
    <p class="rationale">${esc(series.message)}</p>
    <label>datatype
      <select data-action="series-datatype" data-series="${series.seriesId}">
        ${datatypeOptions}
      </select></label>
    <label>suffix
      <select data-action="series-suffix" data-series="${series.seriesId}">
        ${suffixOptions}
      </select></label>
    <label>entities
      <input data-action="series-entities" data-series="${series.seriesId}"
             value="${esc(Object.entries(series.entities).map(([k, v]) => `${k}-${v}`).join(" "))}"
             placeholder="task-bart acq-mprage" /></label>
    ${inline}
    <table class="members"><tbody>${seriesMemberRows(doc, series.seriesId)}</tbody></table>
  </article>`;
    })
    .join("");
  const globalError = lastError
    ? `<div class="inline-error">${esc(lastError)}</div>`
    : "";
  return `
<section class="page page-series">
  <h2>Series Mapping</h2>
  <p>Edits apply to every image in the series group.</p>
  ${globalError}
  ${blocks}
</section>`;
}

function mappingDropdown(
  name: string,
  columns: string[],
  selected: string | null,
  withUnit: boolean,
  unit: string,
): string {
  const options = ['<option value="">(none)</option>']
    .concat(
      columns.map(
        (c) => `<option value="${esc(c)}" ${c === selected ? "selected" : ""}>${esc(c)}</option>`,
      ),
    )
    .join("");
  const unitSelect = withUnit
    ? `<select data-action="events-unit" data-column="${esc(name)}">
        <option value="seconds" ${unit === "seconds" ? "selected" : ""}>seconds</option>
        <option value="milliseconds" ${unit === "milliseconds" ? "selected" : ""}>milliseconds</option>
      </select>`
    : "";
  return `<label class="mapping">${esc(name)}
    <select data-action="events-column" data-column="${esc(name)}">${options}</select>
    ${unitSelect}</label>`;
}

export function renderEvents(doc: ProposalDocument, items: ValidationItem[]): string {
  if (!hasTaskBold(doc)) {
    return `
<section class="page page-events">
  <h2>Events</h2>
  <p class="nothing-to-map">There are no task-based (non-rest) functional BOLD
  images in this dataset, so there are no timing files to map.</p>
</section>`;
  }
  const eventsObjects = doc.objects.filter((o) => o.kind === "events");
  const columns = [...new Set(eventsObjects.flatMap((o) => o.columns ?? []))];
  const mapping = doc.eventsMapping;

  const dropdowns = [
    mappingDropdown("onset", columns, mapping?.onsetColumn ?? null, true,
                    mapping?.onsetUnit ?? "seconds"),
    mappingDropdown("duration", columns, mapping?.durationColumn ?? null, true,
                    mapping?.durationUnit ?? "seconds"),
    mappingDropdown("trial_type", columns, mapping?.trialTypeColumn ?? null, false, ""),
    mappingDropdown("response_time", columns, mapping?.responseTimeColumn ?? null, true,
                    mapping?.responseTimeUnit ?? "seconds"),
  ].join("");

  let preview = "";
  const sample = eventsObjects.find((o) => o.sampleRows && o.columns);
  if (mapping && sample && sample.columns && sample.sampleRows) {
    const onsetIdx = sample.columns.indexOf(mapping.onsetColumn);
    const durationIdx = mapping.durationColumn
      ? sample.columns.indexOf(mapping.durationColumn)
      : -1;
    const rows = sample.sampleRows
      .map((row) => {
        const onset = onsetIdx >= 0 ? previewCell(row[onsetIdx], mapping.onsetUnit) : "n/a";
        const duration = durationIdx >= 0
          ? previewCell(row[durationIdx], mapping.durationUnit)
          : esc(mapping.durationValue ?? "n/a");
        return `<tr><td>${esc(onset)}</td><td>${esc(duration)}</td></tr>`;
      })
      .join("");
    preview = `<table class="preview"><thead><tr><th>onset</th><th>duration</th></tr></thead>
      <tbody>${rows}</tbody></table>`;
  }

  const files = eventsObjects
    .map((obj) => {
      const parseIssues = obj.validationItems.filter((i) => i.code === "events-parse-error");
      if (parseIssues.length) {
        return `<li class="events-file" data-object="${obj.objectId}">
          <code>${esc(obj.paths[0])}</code>
          <span class="inline-error">${esc(parseIssues[0].message)}</span></li>`;
      }
      if (obj.link?.state === "linked") {
        const bold = doc.objects.find((o) => o.objectId === obj.link?.objectId);
        const entities = bold ? effectiveEntities(doc, bold) : {};
        return `<li class="events-file linked" data-object="${obj.objectId}">
          <code>${esc(obj.paths[0])}</code> &rarr; func/bold ${entityChips(entities)}</li>`;
      }
      const labels = obj.link?.labels ?? {};
      const chips = ["sub", "ses", "task", "run"]
        .map((key) =>
          `<input class="placeholder-chip" data-action="relink" data-object="${obj.objectId}"
                  data-key="${key}" value="${esc(labels[key] ?? "")}"
                  placeholder="${key}" />`)
        .join("");
      return `<li class="events-file placeholder" data-object="${obj.objectId}">
        <code>${esc(obj.paths[0])}</code>
        <span class="placeholder-note">unmatched; edit the labels to link:</span>
        ${chips}</li>`;
    })
    .join("");

  return `
<section class="page page-events">
  <h2>Events</h2>
  <input type="file" id="events-input" multiple />
  <button data-action="upload-events">Upload timing files</button>
  <div class="mapping-grid">${dropdowns}</div>
  <button data-action="apply-mapping">Apply mapping to all files</button>
  ${preview}
  <ul class="events-files">${files}</ul>
  ${renderValidationPanel(itemsForPage("Events", items))}
</section>`;
}

function reviewRow(
  doc: ProposalDocument,
  obj: ObjectDescriptor,
  items: ValidationItem[],
  thumbnailUrl: (objectId: number) => string,
): string {
  const series = seriesOf(doc, obj);
  const classification =
    series.datatype === "exclude" ? "exclude" : `${series.datatype}/${series.suffix}`;
  const entities = effectiveEntities(doc, obj);
  const own = items.filter((i) => i.target.objectId === obj.objectId);
  const inline = own
    .map((i) =>
      `<div class="${i.severity === "error" ? "inline-error" : "inline-warning"}">${esc(i.message)}</div>`)
    .join("");
  const thumb = obj.thumbnail
    ? `<img class="thumb" alt="preview" src="${esc(thumbnailUrl(obj.objectId))}" />`
    : "";
  return `<li class="object-row ${obj.exclude ? "excluded" : ""}" data-object="${obj.objectId}">
    ${thumb}
    <span class="classification">#${obj.objectId} ${esc(classification)}</span>
    ${entityChips(entities)}
    <label><input type="checkbox" data-action="exclude" data-object="${obj.objectId}"
      ${obj.exclude ? "checked" : ""} /> exclude</label>
    <input data-action="override" data-object="${obj.objectId}"
      value="${esc(Object.entries(obj.entityOverrides).map(([k, v]) => `${k}-${v}`).join(" "))}"
      placeholder="per-image overrides (acq-x)" />
    ${inline}
  </li>`;
}

export function renderDatasetReview(
  doc: ProposalDocument,
  items: ValidationItem[],
  thumbnailUrl: (objectId: number) => string,
): string {
  const sections = doc.subjects
    .map((subject, subjectIdx) => {
      const blocks: string[] = [];
      const scopes: Array<[number | null, string]> = subject.sessions.length
        ? subject.sessions.map((s, i) => [i, `ses-${s.label}`] as [number, string])
        : [[null, ""]];
      for (const [sessionIdx, label] of scopes) {
        const members = doc.objects
          .filter((o) => o.subjectIdx === subjectIdx && o.sessionIdx === sessionIdx)
          .sort((a, b) =>
            String(a.acquisitionOrder[0] ?? "9999").localeCompare(
              String(b.acquisitionOrder[0] ?? "9999"),
            ) || (a.acquisitionOrder[1] ?? 1e9) - (b.acquisitionOrder[1] ?? 1e9),
          );
        if (!members.length) continue;
        blocks.push(
          `<h4>${esc(label)}</h4><ul>` +
            members.map((o) => reviewRow(doc, o, items, thumbnailUrl)).join("") +
            "</ul>",
        );
      }
      return `<article class="subject-review" data-subject="${subjectIdx}">
        <h3>sub-${esc(subject.label)}
          <button data-action="exclude-subject" data-subject="${subjectIdx}">
            Exclude this subject</button></h3>
        ${blocks.join("")}
      </article>`;
    })
    .join("");
  return `
<section class="page page-review">
  <h2>Dataset Review</h2>
  ${renderValidationPanel(items)}
  ${sections}
</section>`;
}

export function renderParticipants(doc: ProposalDocument): string {
  const columns = doc.participantsColumns;
  const header = ["participant_id", ...columns].map((c) => `<th>${esc(c)}</th>`).join("");
  const rows = doc.subjects
    .map((subject) => {
      const cells = columns
        .map(
          (column) => `<td><input data-action="phenotype" data-label="${esc(subject.label)}"
            data-column="${esc(column)}"
            value="${esc(subject.phenotype[column] ?? "")}" placeholder="n/a" /></td>`,
        )
        .join("");
      return `<tr><td>sub-${esc(subject.label)}</td>${cells}</tr>`;
    })
    .join("");
  return `
<section class="page page-participants">
  <h2>Participants</h2>
  <table><thead><tr>${header}</tr></thead><tbody>${rows}</tbody></table>
  <label>columns
    <input data-action="participants-columns" value="${esc(columns.join(", "))}" /></label>
  <button data-action="save-participants">Save</button>
</section>`;
}

export function renderFinalize(
  state: { state: string },
  items: ValidationItem[],
  downloadUrl: string,
): string {
  const { errors } = groupBySeverity(items);
  const ready = errors.length === 0;
  const done = state.state === "done";
  return `
<section class="page page-finalize">
  <h2>Finalize</h2>
  ${renderValidationPanel(items)}
  <button data-action="finalize" ${ready && !done ? "" : "disabled"}>
    Create BIDS dataset</button>
  ${done ? `<a class="download" href="${esc(downloadUrl)}">Download bids.zip</a>` : ""}
  <span class="status">state: ${esc(state.state)}</span>
</section>`;
}

export function renderConflictPrompt(): string {
  return `
<div class="conflict-prompt">
  <p>Someone else changed this document. Reload the latest version and
     reapply your edit?</p>
  <button data-action="conflict-reapply">Reload and reapply</button>
  <button data-action="conflict-dismiss">Discard my edit</button>
</div>`;
}

export function renderPage(
  page: Page,
  doc: ProposalDocument | null,
  schema: SchemaInfo | null,
  items: ValidationItem[],
  session: { state: string; error: string | null },
  urls: { download: string; thumbnail: (objectId: number) => string },
  lastError: string | null,
): string {
  if (page === "Upload" || !doc || !schema) return renderUpload(session);
  switch (page) {
    case "Dataset Description":
      return renderDatasetDescription(doc);
    case "Subjects/Sessions":
      return renderSubjects(doc);
    case "Series Mapping":
      return renderSeriesMapping(doc, schema, items, lastError);
    case "Events":
      return renderEvents(doc, items);
    case "Dataset Review":
      return renderDatasetReview(doc, items, urls.thumbnail);
    case "Participants":
      return renderParticipants(doc);
    case "Finalize":
      return renderFinalize(session, items, urls.download);
  }
}
