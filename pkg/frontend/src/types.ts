/** Wire types mirroring the server's proposal document (schemaVersion 1). */

export type Severity = "error" | "warning";

export interface ValidationTarget {
  type: string;
  seriesId?: number;
  objectId?: number;
  label?: string;
  path?: string;
}

export interface ValidationItem {
  severity: Severity;
  code: string;
  message: string;
  target: ValidationTarget;
}

export interface SessionRecord {
  label: string;
  acquisitionDateTime: string | null;
}

export interface SubjectRecord {
  label: string;
  source: string;
  sessions: SessionRecord[];
  phenotype: Record<string, string>;
}

export interface GroupingKey {
  seriesDescription: string;
  imageType: string[];
  repetitionTime: number | null;
  echoTime: number | null;
}

export interface SeriesDescriptor {
  seriesId: number;
  groupingKey: GroupingKey;
  datatype: string;
  suffix: string;
  entities: Record<string, string>;
  heuristic: string;
  message: string;
}

export interface EventsLink {
  state: "linked" | "placeholder";
  objectId?: number;
  labels?: Record<string, string>;
  manualLabels?: Record<string, string>;
}

export interface ObjectDescriptor {
  objectId: number;
  kind: "image" | "events";
  paths: string[];
  seriesId: number;
  subjectIdx: number | null;
  sessionIdx: number | null;
  entityOverrides: Record<string, string>;
  exclude: boolean;
  acquisitionOrder: [string | null, number | null];
  run: string | null;
  sidecar: Record<string, unknown>;
  link: EventsLink | null;
  columns: string[] | null;
  sampleRows: string[][] | null;
  validationItems: ValidationItem[];
  thumbnail: string | null;
}

export interface EventsMapping {
  onsetColumn: string;
  onsetUnit: "seconds" | "milliseconds";
  durationColumn: string | null;
  durationValue: string | null;
  durationUnit: "seconds" | "milliseconds";
  trialTypeColumn: string | null;
  responseTimeColumn: string | null;
  responseTimeUnit: "seconds" | "milliseconds";
  passthrough: string[];
  entityColumns: Record<string, string>;
}

export interface ProposalDocument {
  schemaVersion: string;
  version: number;
  datasetDescription: Record<string, unknown>;
  participantsColumns: string[];
  subjects: SubjectRecord[];
  series: SeriesDescriptor[];
  objects: ObjectDescriptor[];
  eventsMapping: EventsMapping | null;
  validationItems: ValidationItem[];
}

export interface SchemaInfo {
  bidsVersion: string;
  entityOrder: string[];
  datatypes: Record<string, string[]>;
}

export interface SessionStatus {
  state: string;
  version: number | null;
  error: string | null;
  report: Record<string, unknown>;
}

export type EditOp =
  | { op: "series"; seriesId: number; datatype?: string; suffix?: string;
      entities?: Record<string, string | null> }
  | { op: "object"; objectId: number; entityOverrides?: Record<string, string | null>;
      exclude?: boolean }
  | { op: "remapSubjects"; strategy: "PatientName" | "PatientID" | "Numerical" }
  | { op: "subjectLabel"; index: number; label: string }
  | { op: "datasetDescription"; fields: Record<string, unknown> }
  | { op: "eventsMapping"; mapping: EventsMapping }
  | { op: "linkEvents"; objectId: number; labels: Record<string, string | null> }
  | { op: "participants"; columns?: string[];
      values?: Record<string, Record<string, string>> };

/** Effective entities for one object: series entities, overlaid by the
 * object's overrides, overlaid by the sub/ses/run assignments. */
export function effectiveEntities(
  doc: ProposalDocument,
  obj: ObjectDescriptor,
): Record<string, string> {
  const series = doc.series.find((s) => s.seriesId === obj.seriesId);
  const merged: Record<string, string> = { ...(series?.entities ?? {}) };
  Object.assign(merged, obj.entityOverrides);
  if (obj.subjectIdx !== null) {
    const subject = doc.subjects[obj.subjectIdx];
    merged["sub"] = subject.label;
    if (obj.sessionIdx !== null) {
      merged["ses"] = subject.sessions[obj.sessionIdx].label;
    }
  }
  if (obj.run !== null) merged["run"] = obj.run;
  return merged;
}

export function seriesOf(
  doc: ProposalDocument,
  obj: ObjectDescriptor,
): SeriesDescriptor {
  const series = doc.series.find((s) => s.seriesId === obj.seriesId);
  if (!series) throw new Error(`object ${obj.objectId} has no series`);
  return series;
}
