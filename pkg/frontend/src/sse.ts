// Server-push event consumer. Implemented over fetch + ReadableStream rather
// than EventSource so the identical code runs in the browser and under node
// (which is how the round-trip test drives the real client path).

import type { ApiEvent } from "./types.js";

export type StreamCallbacks = {
  onEvent: (event: ApiEvent) => void;
  onHeartbeat?: () => void;
};

export function parseSseChunk(buffer: string, callbacks: StreamCallbacks): string {
  // Consume complete blocks; return the unfinished remainder.
  let rest = buffer;
  for (;;) {
    const cut = rest.indexOf("\n\n");
    if (cut === -1) {
      return rest;
    }
    const block = rest.slice(0, cut);
    rest = rest.slice(cut + 2);
    let data = "";
    let isComment = false;
    for (const line of block.split("\n")) {
      if (line.startsWith(":")) {
        isComment = true;
      } else if (line.startsWith("data: ")) {
        data += line.slice(6);
      }
    }
    if (data) {
      callbacks.onEvent(JSON.parse(data) as ApiEvent);
    } else if (isComment) {
      callbacks.onHeartbeat?.();
    }
  }
}

export async function consumeEventStream(
  baseUrl: string,
  since: number,
  callbacks: StreamCallbacks,
  signal?: AbortSignal,
): Promise<void> {
  const response = await fetch(`${baseUrl}/api/v1/events?since=${since}`, { signal });
  if (!response.ok || response.body === null) {
    throw new Error(`event stream failed: ${response.status}`);
  }
  const reader = response.body.getReader();
  const decoder = new TextDecoder();
  let buffer = "";
  for (;;) {
    const { value, done } = await reader.read();
    if (done) {
      return;
    }
    buffer += decoder.decode(value, { stream: true });
    buffer = parseSseChunk(buffer, callbacks);
  }
}

/** Keep a stream attached, resuming from the last delivered sequence number
 * after any disconnect. Stops when the signal aborts. */
export async function subscribeWithResume(
  baseUrl: string,
  lastSeq: () => number,
  callbacks: StreamCallbacks,
  signal: AbortSignal,
  retryMs = 500,
): Promise<void> {
  while (!signal.aborted) {
    try {
      await consumeEventStream(baseUrl, lastSeq(), callbacks, signal);
    } catch (err) {
      if (signal.aborted) {
        return;
      }
    }
    await new Promise((resolve) => setTimeout(resolve, retryMs));
  }
}
