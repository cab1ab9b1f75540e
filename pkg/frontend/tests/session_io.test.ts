import { describe, expect, it } from "vitest";

import { exportSession, importSession } from "../src/session_io.js";
import { addLabel, applyScores, editSupport, newSession, setQuery } from "../src/state.js";

function sample() {
  let s = newSession();
  s = addLabel(s, "urgent");
  s = addLabel(s, "routine");
  s = editSupport(s, "urgent", "add", "server room on fire").state;
  s = editSupport(s, "urgent", "add", "production database down").state;
  s = editSupport(s, "routine", "add", "weekly report attached").state;
  s = setQuery(s, "disk usage at 99 percent");
  s = applyScores(
    s,
    "disk usage at 99 percent",
    { urgent: 0.87654321012345, routine: 0.0999999999999987 },
    "urgent",
    "2026-08-19T10:00:00.000Z",
  );
  return s;
}

describe("export", () => {
  it("uses episode-dump field names", () => {
    const doc = JSON.parse(exportSession(sample()));
    expect(Object.keys(doc.labels[0])).toEqual(["label", "support_texts", "k"]);
    expect(doc.query_text).toBe("disk usage at 99 percent");
    expect(doc.labels[0].label).toBe("urgent");
    expect(doc.labels[0].support_texts).toEqual([
      "server room on fire",
      "production database down",
    ]);
    expect(doc.labels[0].k).toBe(2);
    expect(doc.history[0].query_text).toBe("disk usage at 99 percent");
  });

  it("an empty session exports a valid skeleton", () => {
    const doc = JSON.parse(exportSession(newSession()));
    expect(doc).toEqual({
      version: 1,
      query_text: "",
      labels: [],
      last_scores: null,
      top: null,
      stale: false,
      history: [],
    });
  });

  it("preserves full float precision", () => {
    const doc = JSON.parse(exportSession(sample()));
    expect(doc.last_scores.urgent).toBe(0.87654321012345);
    expect(doc.history[0].scores.routine).toBe(0.0999999999999987);
  });
});

describe("round trip", () => {
  it("import(export(s)) reproduces the session", () => {
    const s = sample();
    const back = importSession(exportSession(s));
    expect(back.labels).toEqual(s.labels);
    expect(back.query).toBe(s.query);
    expect(back.lastScores).toEqual(s.lastScores);
    expect(back.top).toBe(s.top);
    expect(back.stale).toBe(s.stale);
    expect(back.history).toEqual(s.history);
  });

  it("round trips the empty session", () => {
    const back = importSession(exportSession(newSession()));
    expect(back).toEqual(newSession());
  });

  it("export is stable across a round trip", () => {
    const first = exportSession(sample());
    expect(exportSession(importSession(first))).toBe(first);
  });

  it("imported history entries are frozen", () => {
    const back = importSession(exportSession(sample()));
    expect(() => {
      (back.history[0]!.scores as Record<string, number>)["urgent"] = 0;
    }).toThrow();
  });
});

describe("import validation", () => {
  it("rejects non-JSON", () => {
    expect(() => importSession("{nope")).toThrow(/not valid JSON/);
  });

  it("rejects non-object documents", () => {
    expect(() => importSession("[1,2]")).toThrow(/object/);
  });

  it("rejects unknown versions", () => {
    expect(() => importSession('{"version": 2, "labels": []}')).toThrow(/version/);
  });

  it("rejects duplicate labels", () => {
    const doc = {
      version: 1,
      query_text: "",
      labels: [
        { label: "a", support_texts: ["x"], k: 1 },
        { label: "a", support_texts: ["y"], k: 1 },
      ],
      history: [],
    };
    expect(() => importSession(JSON.stringify(doc))).toThrow(/duplicate label/);
  });

  it("rejects blank label names", () => {
    const doc = { version: 1, query_text: "", labels: [{ label: " ", support_texts: [], k: 0 }], history: [] };
    expect(() => importSession(JSON.stringify(doc))).toThrow(/non-blank/);
  });

  it("rejects k that disagrees with the support count", () => {
    const doc = {
      version: 1,
      query_text: "",
      labels: [{ label: "a", support_texts: ["x", "y"], k: 5 }],
      history: [],
    };
    expect(() => importSession(JSON.stringify(doc))).toThrow(/k=5 disagrees/);
  });

  it("rejects non-string supports", () => {
    const doc = { version: 1, query_text: "", labels: [{ label: "a", support_texts: [3], k: 1 }], history: [] };
    expect(() => importSession(JSON.stringify(doc))).toThrow(/array of strings/);
  });

  it("rejects non-numeric scores", () => {
    const doc = {
      version: 1,
      query_text: "",
      labels: [],
      last_scores: { a: "high" },
      history: [],
    };
    expect(() => importSession(JSON.stringify(doc))).toThrow(/finite number/);
  });

  it("tolerates missing optional fields", () => {
    const back = importSession('{"version": 1, "query_text": "q", "labels": []}');
    expect(back.query).toBe("q");
    expect(back.lastScores).toBeNull();
    expect(back.history).toEqual([]);
  });
});
