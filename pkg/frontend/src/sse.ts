// Minimal server-sent-events parser. The browser EventSource type would do
// the same job, but a hand-rolled parser over fetch streaming keeps the
// ingest path identical between the page and the node test runner.

export interface SseFrame {
  event: string;
  data: string;
}

export class SseParser {
  private buffer = "";

  /** Feed a decoded chunk, get back every complete frame it finished. */
  feed(chunk: string): SseFrame[] {
    this.buffer += chunk;
    const frames: SseFrame[] = [];
    for (;;) {
      const split = this.buffer.indexOf("\n\n");
      if (split < 0) {
        break;
      }
      const block = this.buffer.slice(0, split);
      this.buffer = this.buffer.slice(split + 2);
      const frame = parseBlock(block);
      if (frame !== null) {
        frames.push(frame);
      }
    }
    return frames;
  }
}

function parseBlock(block: string): SseFrame | null {
  let event = "message";
  const data: string[] = [];
  for (const raw of block.split("\n")) {
    const line = raw.endsWith("\r") ? raw.slice(0, -1) : raw;
    if (line === "" || line.startsWith(":")) {
      continue; // comment lines carry the keep-alives
    }
    const colon = line.indexOf(":");
    const field = colon < 0 ? line : line.slice(0, colon);
    let value = colon < 0 ? "" : line.slice(colon + 1);
    if (value.startsWith(" ")) {
      value = value.slice(1);
    }
    if (field === "event") {
      event = value;
    } else if (field === "data") {
      data.push(value);
    }
  }
  if (data.length === 0) {
    return null;
  }
  return { event, data: data.join("\n") };
}

/**
 * Stream frames from an SSE endpoint until the body ends or the signal
 * aborts. Works on both browser fetch and node 18+ fetch.
 */
export async function streamFrames(
  url: string,
  onFrame: (frame: SseFrame) => void,
  signal?: AbortSignal,
): Promise<void> {
  const response = await fetch(url, {
    signal,
    headers: { accept: "text/event-stream" },
  });
  if (!response.ok || response.body === null) {
    throw new Error(`event stream failed: HTTP ${response.status}`);
  }
  const reader = response.body.getReader();
  const decoder = new TextDecoder();
  const parser = new SseParser();
  for (;;) {
    const { done, value } = await reader.read();
    if (done) {
      break;
    }
    for (const frame of parser.feed(decoder.decode(value, { stream: true }))) {
      onFrame(frame);
    }
  }
}
