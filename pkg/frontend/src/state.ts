/**
 * Client-side view state: the server snapshot plus a cursor. The snapshot is
 * only ever replaced wholesale with what the server returned; nothing here
 * mutates verdicts locally or computes accuracy.
 */

import type { SessionSnapshot, Verdict } from "./api.js";

export interface Cursor {
  sentence: number;
  piece: number;
}

export interface SessionView {
  snapshot: SessionSnapshot;
  cursor: Cursor;
  offline: boolean;
  notice: string | null;
}

export function makeView(snapshot: SessionSnapshot): SessionView {
  return { snapshot, cursor: { sentence: 0, piece: 0 }, offline: false, notice: null };
}

export function replaceSnapshot(view: SessionView, snapshot: SessionSnapshot): SessionView {
  return { ...view, snapshot, cursor: clampCursor(snapshot, view.cursor) };
}

export function clampCursor(snapshot: SessionSnapshot, cursor: Cursor): Cursor {
  if (snapshot.sentences.length === 0) {
    return { sentence: 0, piece: 0 };
  }
  const sentence = Math.min(Math.max(cursor.sentence, 0), snapshot.sentences.length - 1);
  const pieces = snapshot.sentences[sentence].pieces.length;
  const piece = Math.min(Math.max(cursor.piece, 0), pieces - 1);
  return { sentence, piece };
}

export function currentVerdict(view: SessionView): Verdict | null {
  const sentence = view.snapshot.sentences[view.cursor.sentence];
  if (!sentence) {
    return null;
  }
  const piece = sentence.pieces[view.cursor.piece];
  return piece ? piece.verdict : null;
}

export function progress(snapshot: SessionSnapshot): { judged: number; total: number } {
  let judged = 0;
  let total = 0;
  for (const sentence of snapshot.sentences) {
    for (const piece of sentence.pieces) {
      total += 1;
      if (piece.verdict !== "unjudged") {
        judged += 1;
      }
    }
  }
  return { judged, total };
}

export function stepCursor(snapshot: SessionSnapshot, cursor: Cursor, delta: 1 | -1): Cursor {
  const flat: Cursor[] = [];
  snapshot.sentences.forEach((sentence, si) =>
    sentence.pieces.forEach((_piece, pi) => flat.push({ sentence: si, piece: pi })),
  );
  if (flat.length === 0) {
    return cursor;
  }
  const index = flat.findIndex((c) => c.sentence === cursor.sentence && c.piece === cursor.piece);
  const next = Math.min(Math.max((index === -1 ? 0 : index) + delta, 0), flat.length - 1);
  return flat[next];
}

export function nextUnjudged(snapshot: SessionSnapshot, from: Cursor): Cursor | null {
  const flat: Cursor[] = [];
  snapshot.sentences.forEach((sentence, si) =>
    sentence.pieces.forEach((_piece, pi) => flat.push({ sentence: si, piece: pi })),
  );
  if (flat.length === 0) {
    return null;
  }
  const start = flat.findIndex((c) => c.sentence === from.sentence && c.piece === from.piece);
  for (let step = 1; step <= flat.length; step += 1) {
    const candidate = flat[((start === -1 ? 0 : start) + step) % flat.length];
    const piece = snapshot.sentences[candidate.sentence].pieces[candidate.piece];
    if (piece.verdict === "unjudged") {
      return candidate;
    }
  }
  return null;
}
