/** Wire types mirroring the server's proposal document (schemaVersion 1). */
/** Effective entities for one object: series entities, overlaid by the
 * object's overrides, overlaid by the sub/ses/run assignments. */
export function effectiveEntities(doc, obj) {
    const series = doc.series.find((s) => s.seriesId === obj.seriesId);
    const merged = { ...(series?.entities ?? {}) };
    Object.assign(merged, obj.entityOverrides);
    if (obj.subjectIdx !== null) {
        const subject = doc.subjects[obj.subjectIdx];
        merged["sub"] = subject.label;
        if (obj.sessionIdx !== null) {
            merged["ses"] = subject.sessions[obj.sessionIdx].label;
        }
    }
    if (obj.run !== null)
        merged["run"] = obj.run;
    return merged;
}
export function seriesOf(doc, obj) {
    const series = doc.series.find((s) => s.seriesId === obj.seriesId);
    if (!series)
        throw new Error(`object ${obj.objectId} has no series`);
    return series;
}
