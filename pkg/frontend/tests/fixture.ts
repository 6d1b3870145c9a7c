/** An in-memory stand-in for the session service: holds one document and
 * applies edits with the same observable semantics the real server has
 * (alphanumeric validation, series propagation via shared entities, the
 * orphaned-sbref warning, optimistic versioning). */

import type { PatchResult, SessionApi } from "../src/api.js";
import type {
  EditOp,
  ProposalDocument,
  SchemaInfo,
  ValidationItem,
} from "../src/types.js";

export const SCHEMA: SchemaInfo = {
  bidsVersion: "1.8.0",
  entityOrder: ["sub", "ses", "task", "acq", "ce", "rec", "dir",
                "run", "mod", "echo", "flip", "inv", "mt", "part"],
  datatypes: {
    anat: ["FLAIR", "PDw", "T1w", "T2starw", "T2w"],
    dwi: ["dwi", "sbref"],
    fmap: ["epi", "fieldmap", "magnitude", "magnitude1", "magnitude2", "phasediff"],
    func: ["bold", "events", "sbref"],
    perf: ["asl", "m0scan"],
  },
};

export function fixtureDocument(): ProposalDocument {
  return {
    schemaVersion: "1",
    version: 0,
    datasetDescription: { Name: "Untitled", BIDSVersion: "1.8.0" },
    participantsColumns: ["age", "sex"],
    subjects: [
      { label: "01", source: "pathPattern", sessions: [], phenotype: {} },
    ],
    series: [
      {
        seriesId: 0,
        groupingKey: { seriesDescription: "t1_mprage", imageType: ["ORIGINAL"],
                       repetitionTime: 2.3, echoTime: 0.003 },
        datatype: "anat", suffix: "T1w", entities: {},
        heuristic: "keyphrase", message: 'SeriesDescription matches keyphrase "mprage"',
      },
      {
        seriesId: 1,
        groupingKey: { seriesDescription: "task-bart_bold", imageType: ["ORIGINAL"],
                       repetitionTime: 2.0, echoTime: 0.03 },
        datatype: "func", suffix: "bold", entities: { task: "bart" },
        heuristic: "keyphrase", message: 'SeriesDescription matches keyphrase "bold"',
      },
      {
        seriesId: 2,
        groupingKey: { seriesDescription: "task-bart_sbref", imageType: ["ORIGINAL"],
                       repetitionTime: 2.0, echoTime: 0.03 },
        datatype: "func", suffix: "sbref", entities: { task: "bart" },
        heuristic: "keyphrase", message: 'SeriesDescription matches keyphrase "sbref"',
      },
      {
        seriesId: 3,
        groupingKey: { seriesDescription: "task events timing files", imageType: [],
                       repetitionTime: null, echoTime: null },
        datatype: "func", suffix: "events", entities: {},
        heuristic: "none", message: "uploaded task events timing files",
      },
    ],
    objects: [
      {
        objectId: 0, kind: "image", paths: ["sub-01/a.nii.gz", "sub-01/a.json"],
        seriesId: 0, subjectIdx: 0, sessionIdx: null, entityOverrides: {},
        exclude: false, acquisitionOrder: ["2024-01-01T09:00:00", 2], run: "1",
        sidecar: {}, link: null, columns: null, sampleRows: null,
        validationItems: [], thumbnail: "obj-0.png",
      },
      {
        objectId: 1, kind: "image", paths: ["sub-01/b.nii.gz", "sub-01/b.json"],
        seriesId: 0, subjectIdx: 0, sessionIdx: null, entityOverrides: {},
        exclude: false, acquisitionOrder: ["2024-01-01T09:05:00", 3], run: "2",
        sidecar: {}, link: null, columns: null, sampleRows: null,
        validationItems: [], thumbnail: "obj-1.png",
      },
      {
        objectId: 2, kind: "image", paths: ["sub-01/bold.nii.gz", "sub-01/bold.json"],
        seriesId: 1, subjectIdx: 0, sessionIdx: null, entityOverrides: {},
        exclude: false, acquisitionOrder: ["2024-01-01T09:10:00", 5], run: null,
        sidecar: {}, link: null, columns: null, sampleRows: null,
        validationItems: [], thumbnail: "obj-2.png",
      },
      {
        objectId: 3, kind: "image", paths: ["sub-01/sbref.nii.gz", "sub-01/sbref.json"],
        seriesId: 2, subjectIdx: 0, sessionIdx: null, entityOverrides: {},
        exclude: false, acquisitionOrder: ["2024-01-01T09:09:00", 4], run: null,
        sidecar: {}, link: null, columns: null, sampleRows: null,
        validationItems: [], thumbnail: "obj-3.png",
      },
      {
        objectId: 4, kind: "events", paths: ["timing.tsv"],
        seriesId: 3, subjectIdx: null, sessionIdx: null, entityOverrides: {},
        exclude: false, acquisitionOrder: [null, null], run: null,
        sidecar: {}, link: { state: "placeholder", labels: { sub: "XX1" } },
        columns: ["StimOnset", "Dur", "Cond"],
        sampleRows: [["1500", "500", "go"], ["3000", "250", "stop"]],
        validationItems: [], thumbnail: null,
      },
    ],
    eventsMapping: null,
    validationItems: [],
  };
}

const ALNUM = /^[A-Za-z0-9]+$/;
const LONG_NAMES: Record<string, string> = {
  sub: "subject", ses: "session", task: "task", acq: "acquisition",
  ce: "ceagent", rec: "reconstruction", dir: "direction", run: "run",
  mod: "modality", echo: "echo", flip: "flip", inv: "inversion",
  mt: "mtransfer", part: "part",
};

export class FakeServer implements SessionApi {
  doc: ProposalDocument = fixtureDocument();
  calls: string[] = [];

  async createSession(): Promise<{ token: string; state: string }> {
    this.calls.push("createSession");
    return { token: "tok-test", state: "editable" };
  }

  async document(): Promise<ProposalDocument> {
    this.calls.push("document");
    return structuredClone(this.doc);
  }

  async validation(): Promise<{ items: ValidationItem[] }> {
    this.calls.push("validation");
    return { items: this.computeItems() };
  }

  computeItems(): ValidationItem[] {
    const items: ValidationItem[] = [];
    const bold = this.doc.objects.find((o) => o.seriesId === 1)!;
    const sbref = this.doc.objects.find((o) => o.seriesId === 2)!;
    if (bold.exclude && !sbref.exclude) {
      items.push({
        severity: "warning",
        code: "orphaned-sbref",
        message:
          `The corresponding func/bold #${bold.objectId} is currently set to ` +
          "exclude from BIDS conversion. We recommend this func/sbref also " +
          "be excluded unless there is a reason for keeping it.",
        target: { type: "object", objectId: sbref.objectId },
      });
    }
    const events = this.doc.objects.find((o) => o.kind === "events")!;
    if (events.link?.state === "placeholder") {
      items.push({
        severity: "warning",
        code: "events-placeholder",
        message: `events file ${events.paths[0]} could not be matched`,
        target: { type: "object", objectId: events.objectId },
      });
    }
    return items;
  }

  async patch(_token: string, expectedVersion: number, edits: EditOp[]): Promise<PatchResult> {
    this.calls.push("patch");
    if (expectedVersion !== this.doc.version) {
      return {
        kind: "conflict",
        currentVersion: this.doc.version,
        document: structuredClone(this.doc),
      };
    }
    const working = structuredClone(this.doc);
    for (const edit of edits) {
      const invalid = this.applyEdit(working, edit);
      if (invalid) return invalid;
    }
    working.version = expectedVersion + 1;
    this.doc = working;
    return { kind: "ok", version: working.version };
  }

  private applyEdit(doc: ProposalDocument, edit: EditOp): PatchResult | null {
    if (edit.op === "series") {
      const series = doc.series.find((s) => s.seriesId === edit.seriesId)!;
      for (const [key, value] of Object.entries(edit.entities ?? {})) {
        if (value === null || value === "") {
          delete series.entities[key];
        } else if (!ALNUM.test(value)) {
          return {
            kind: "invalid",
            message: `Entity:${LONG_NAMES[key] ?? key} contains non-alphanumeric character`,
            item: {
              severity: "error",
              code: "non-alphanumeric-entity",
              message: `Entity:${LONG_NAMES[key] ?? key} contains non-alphanumeric character`,
              target: { type: "series", seriesId: edit.seriesId },
            },
          };
        } else {
          series.entities[key] = value;
        }
      }
      if (edit.datatype) series.datatype = edit.datatype;
      if (edit.suffix !== undefined) series.suffix = edit.suffix;
    } else if (edit.op === "object") {
      const obj = doc.objects.find((o) => o.objectId === edit.objectId)!;
      if (edit.exclude !== undefined) obj.exclude = edit.exclude;
      for (const [key, value] of Object.entries(edit.entityOverrides ?? {})) {
        if (value === null || value === "") delete obj.entityOverrides[key];
        else obj.entityOverrides[key] = value;
      }
    } else if (edit.op === "datasetDescription") {
      for (const [key, value] of Object.entries(edit.fields)) {
        if (value === null) delete doc.datasetDescription[key];
        else doc.datasetDescription[key] = value;
      }
    } else if (edit.op === "linkEvents") {
      const obj = doc.objects.find((o) => o.objectId === edit.objectId)!;
      const manual = Object.fromEntries(
        Object.entries(edit.labels).filter(([, v]) => v) as [string, string][],
      );
      const bold = doc.objects.find((o) => o.seriesId === 1)!;
      const matches =
        manual["sub"] === "01" && (!manual["task"] || manual["task"] === "bart");
      if (matches && !bold.exclude) {
        obj.link = { state: "linked", objectId: bold.objectId, manualLabels: manual };
        obj.subjectIdx = 0;
        obj.entityOverrides = { task: "bart" };
      } else {
        obj.link = { state: "placeholder", labels: { sub: "XX1", ...manual },
                     manualLabels: manual };
      }
    } else if (edit.op === "eventsMapping") {
      doc.eventsMapping = edit.mapping;
    }
    return null;
  }
}
