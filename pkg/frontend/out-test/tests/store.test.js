import assert from "node:assert/strict";
import { test } from "node:test";
import { SessionStore } from "../src/store.js";
import { effectiveEntities } from "../src/types.js";
import { FakeServer } from "./fixture.js";
async function editableStore(server) {
    const store = new SessionStore(server);
    await store.start();
    await store.refresh();
    return store;
}
test("a series edit propagates to every member row after refetch", async () => {
    const server = new FakeServer();
    const store = await editableStore(server);
    const outcome = await store.apply([
        { op: "series", seriesId: 0, entities: { acq: "mprage" } },
    ]);
    assert.equal(outcome, "ok");
    assert.equal(store.doc.version, 1);
    const members = store.doc.objects.filter((o) => o.seriesId === 0);
    assert.equal(members.length, 2);
    for (const member of members) {
        assert.equal(effectiveEntities(store.doc, member)["acq"], "mprage");
    }
});
test("the store never mutates the document locally", async () => {
    const server = new FakeServer();
    const store = await editableStore(server);
    const documentCallsBefore = server.calls.filter((c) => c === "document").length;
    await store.apply([{ op: "series", seriesId: 0, entities: { acq: "x" } }]);
    const documentCallsAfter = server.calls.filter((c) => c === "document").length;
    assert.equal(documentCallsAfter, documentCallsBefore + 1); // refetched
});
test("a stale edit surfaces the conflict and reapply retries it", async () => {
    const server = new FakeServer();
    const alice = await editableStore(server);
    const bob = await editableStore(server);
    assert.equal(await alice.apply([{ op: "datasetDescription", fields: { Name: "A" } }]), "ok");
    assert.equal(await bob.apply([{ op: "datasetDescription", fields: { Authors: ["B"] } }]), "conflict");
    assert.ok(bob.conflict);
    assert.equal(bob.conflict.currentVersion, 1);
    // the winning state is shown immediately
    assert.equal(bob.doc.datasetDescription["Name"], "A");
    assert.equal(await bob.reapplyAfterConflict(), "ok");
    assert.equal(bob.conflict, null);
    assert.equal(bob.doc.version, 2);
    assert.equal(bob.doc.datasetDescription["Name"], "A");
    assert.deepEqual(bob.doc.datasetDescription["Authors"], ["B"]);
});
test("an invalid entity keeps the document and surfaces the message", async () => {
    const server = new FakeServer();
    const store = await editableStore(server);
    const outcome = await store.apply([
        { op: "series", seriesId: 0, entities: { acq: "0.8mm" } },
    ]);
    assert.equal(outcome, "invalid");
    assert.equal(store.lastError, "Entity:acquisition contains non-alphanumeric character");
    assert.equal(store.doc.version, 0);
    assert.deepEqual(store.doc.series[0].entities, {});
});
test("excluding the bold surfaces the sbref warning without blocking", async () => {
    const server = new FakeServer();
    const store = await editableStore(server);
    await store.apply([{ op: "object", objectId: 2, exclude: true }]);
    const warning = store.items.find((i) => i.code === "orphaned-sbref");
    assert.ok(warning);
    assert.match(warning.message, /We recommend this func\/sbref also be excluded/);
    assert.equal(warning.severity, "warning");
    assert.equal(store.canGoNext(), true); // warnings never gate
});
test("navigation is blocked only while the current page has errors", async () => {
    const server = new FakeServer();
    const store = await editableStore(server);
    store.pageIndex = 3; // Series Mapping
    assert.equal(store.canGoNext(), true);
    store.items = [
        {
            severity: "error",
            code: "non-alphanumeric-entity",
            message: "Entity:acquisition contains non-alphanumeric character",
            target: { type: "series", seriesId: 0 },
        },
    ];
    assert.equal(store.canGoNext(), false);
    assert.equal(store.next(), false);
    assert.equal(store.pageIndex, 3);
    store.items = [];
    assert.equal(store.next(), true);
    assert.equal(store.pageIndex, 4);
});
test("manual relink links the placeholder to its bold", async () => {
    const server = new FakeServer();
    const store = await editableStore(server);
    await store.apply([
        { op: "linkEvents", objectId: 4, labels: { sub: "01", task: "bart" } },
    ]);
    const events = store.doc.objects.find((o) => o.objectId === 4);
    assert.equal(events.link.state, "linked");
    assert.equal(events.link.objectId, 2);
});
