import { describe, expect, it } from "vitest";

import { SseParser } from "../src/sse.js";

describe("SseParser", () => {
  it("parses a single complete frame", () => {
    const parser = new SseParser();
    const frames = parser.feed('event: measurement\ndata: {"value": 1}\n\n');
    expect(frames).toEqual([{ event: "measurement", data: '{"value": 1}' }]);
  });

  it("reassembles frames split across arbitrary chunk boundaries", () => {
    const wire =
      'event: lifecycle\ndata: {"state": "Running"}\n\n' +
      ": keep-alive\n\n" +
      'event: eval\ndata: {"t_s": 600.0}\n\n';
    // Every cut point must yield the same frames.
    for (let cut = 0; cut <= wire.length; cut++) {
      const parser = new SseParser();
      const frames = [
        ...parser.feed(wire.slice(0, cut)),
        ...parser.feed(wire.slice(cut)),
      ];
      expect(frames).toEqual([
        { event: "lifecycle", data: '{"state": "Running"}' },
        { event: "eval", data: '{"t_s": 600.0}' },
      ]);
    }
  });

  it("drops keep-alive comments and empty blocks", () => {
    const parser = new SseParser();
    expect(parser.feed(": keep-alive\n\n: keep-alive\n\n")).toEqual([]);
  });

  it("joins multi-line data and defaults the event name", () => {
    const parser = new SseParser();
    const frames = parser.feed("data: first\ndata: second\n\n");
    expect(frames).toEqual([{ event: "message", data: "first\nsecond" }]);
  });

  it("tolerates CRLF line endings", () => {
    const parser = new SseParser();
    const frames = parser.feed("event: ack\r\ndata: {}\r\n\n");
    expect(frames).toEqual([{ event: "ack", data: "{}" }]);
  });

  it("holds incomplete frames until the terminator arrives", () => {
    const parser = new SseParser();
    expect(parser.feed("event: run_end\ndata: {}")).toEqual([]);
    expect(parser.feed("\n")).toEqual([]);
    expect(parser.feed("\n")).toEqual([{ event: "run_end", data: "{}" }]);
  });
});
