import assert from "node:assert/strict";
import { test } from "node:test";

import { parseSseChunk } from "../src/sse.js";
import type { ApiEvent } from "../src/types.js";

function collect() {
  const events: ApiEvent[] = [];
  let heartbeats = 0;
  return {
    events,
    beats: () => heartbeats,
    callbacks: {
      onEvent: (e: ApiEvent) => events.push(e),
      onHeartbeat: () => { heartbeats += 1; },
    },
  };
}

test("parses complete event blocks", () => {
  const sink = collect();
  const rest = parseSseChunk(
    'id: 1\nevent: MetricUpdated\ndata: {"seq":1,"kind":"MetricUpdated","payload":{}}\n\n',
    sink.callbacks);
  assert.equal(rest, "");
  assert.equal(sink.events.length, 1);
  assert.equal(sink.events[0].kind, "MetricUpdated");
});

test("keeps incomplete blocks buffered across chunks", () => {
  const sink = collect();
  let buffer = parseSseChunk('id: 2\ndata: {"seq":2,"ki', sink.callbacks);
  assert.equal(sink.events.length, 0);
  buffer = parseSseChunk(buffer + 'nd":"CommitCreated","payload":{}}\n\n', sink.callbacks);
  assert.equal(buffer, "");
  assert.equal(sink.events.length, 1);
  assert.equal(sink.events[0].seq, 2);
});

test("heartbeat comments are surfaced separately", () => {
  const sink = collect();
  parseSseChunk(": heartbeat\n\n: heartbeat\n\n", sink.callbacks);
  assert.equal(sink.beats(), 2);
  assert.equal(sink.events.length, 0);
});

test("multiple events in a single chunk all arrive in order", () => {
  const sink = collect();
  const chunk =
    'data: {"seq":1,"kind":"A","payload":{}}\n\n' +
    ': heartbeat\n\n' +
    'data: {"seq":2,"kind":"B","payload":{}}\n\n';
  parseSseChunk(chunk, sink.callbacks);
  assert.deepEqual(sink.events.map((e) => e.seq), [1, 2]);
  assert.equal(sink.beats(), 1);
});
