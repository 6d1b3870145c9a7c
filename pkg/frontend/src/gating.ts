/** The guided page sequence and its navigation gate.
 *
 * Forward navigation from a page is disabled while any error-severity item
 * targets that page's scope; warnings never disable anything. The gate is a
 * pure function of the current validation item list.
 */

import type { ProposalDocument, ValidationItem } from "./types.js";

export const PAGES = [
  "Upload",
  "Dataset Description",
  "Subjects/Sessions",
  "Series Mapping",
  "Events",
  "Dataset Review",
  "Participants",
  "Finalize",
] as const;

export type Page = (typeof PAGES)[number];

/** Which page an item belongs to, so its errors gate that page. */
export function pageForItem(item: ValidationItem): Page {
  if (item.code.startsWith("events")) return "Events";
  switch (item.target.type) {
    case "series":
      return "Series Mapping";
    case "subject":
      return "Subjects/Sessions";
    case "object":
      return "Dataset Review";
    default:
      return "Dataset Review";
  }
}

export function itemsForPage(page: Page, items: ValidationItem[]): ValidationItem[] {
  return items.filter((item) => pageForItem(item) === page);
}

export function canAdvance(page: Page, items: ValidationItem[]): boolean {
  return !items.some(
    (item) => item.severity === "error" && pageForItem(item) === page,
  );
}

export function groupBySeverity(items: ValidationItem[]): {
  errors: ValidationItem[];
  warnings: ValidationItem[];
} {
  return {
    errors: items.filter((i) => i.severity === "error"),
    warnings: items.filter((i) => i.severity === "warning"),
  };
}

/** The Events page only applies when task-based (non-rest) bold images exist. */
export function hasTaskBold(doc: ProposalDocument): boolean {
  return doc.objects.some((obj) => {
    if (obj.kind !== "image" || obj.exclude) return false;
    const series = doc.series.find((s) => s.seriesId === obj.seriesId);
    if (!series || series.datatype !== "func" || series.suffix !== "bold") return false;
    const task = obj.entityOverrides["task"] ?? series.entities["task"];
    return task !== undefined && task !== "rest";
  });
}
